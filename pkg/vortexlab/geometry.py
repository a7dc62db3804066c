import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from vortexlab.errors import GeometryError

logger = logging.getLogger(__name__)

FLAT_TORUS = "flat_torus"
UNIT_SPHERE = "unit_sphere"
TRI_MESH = "mesh"

DEGENERATE_AREA_RATIO = 1e-14
STAR1_FLOOR = 1e-8
GAUSS_BONNET_TOL = 1e-10


@dataclass(frozen=True)
class SurfaceSpec:
    """Descriptor accepted by make_surface; hashable so built surfaces can be cached."""
    kind: str
    subdivisions: int = 4
    n: int = 64
    path: Optional[str] = None
    axes: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    R: float = 1.0
    r: float = 0.4
    n_major: int = 72
    n_minor: int = 24

    @staticmethod
    def from_dict(value: Dict) -> "SurfaceSpec":
        value = dict(value)
        kind = value.pop("kind")
        if "axes" in value:
            value["axes"] = tuple(float(a) for a in value["axes"])
        known = {"subdivisions", "n", "path", "axes", "R", "r", "n_major", "n_minor"}
        unknown = set(value) - known
        if unknown:
            raise GeometryError(f"unknown surface fields {sorted(unknown)}", module="geometry")
        return SurfaceSpec(kind=kind, **value)


@dataclass(frozen=True, eq=False)
class FrameAtlas:
    """Per-vertex orthonormal tangent frames and the discrete Levi-Civita connection.

    A tangent vector with complex coordinate z in the frame of vertex i, parallel
    transported along the oriented edge (i, j), has coordinate z * exp(i rho_ij) in
    the frame of vertex j. `rho` is stored for the canonical orientation of every
    edge (low index to high index); the reverse orientation carries -rho.
    """
    normals: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    rho: np.ndarray
    face_curvature: np.ndarray
    vertex_curvature: np.ndarray

    @property
    def total_curvature(self) -> float:
        return float(np.sum(self.face_curvature))


@dataclass(frozen=True, eq=False)
class DECOperators:
    d0: sp.csr_matrix
    d1: sp.csr_matrix
    star0: np.ndarray
    star1: np.ndarray
    star2: np.ndarray

    @cached_property
    def laplacian(self) -> sp.csc_matrix:
        """Cotangent stiffness matrix d0^T star1 d0 (positive semidefinite)."""
        return (self.d0.T @ sp.diags(self.star1) @ self.d0).tocsc()

    @cached_property
    def codifferential(self) -> sp.csr_matrix:
        return (sp.diags(1.0 / self.star0) @ self.d0.T @ sp.diags(self.star1)).tocsr()

    @cached_property
    def codifferential2(self) -> sp.csr_matrix:
        return (sp.diags(1.0 / self.star1) @ self.d1.T @ sp.diags(self.star2)).tocsr()

    @cached_property
    def hodge_laplacian1(self) -> sp.csr_matrix:
        """Weak 1-form Laplacian; harmonic forms span its kernel (mass matrix star1)."""
        exact = sp.diags(self.star1) @ self.d0 @ sp.diags(1.0 / self.star0) @ self.d0.T @ sp.diags(self.star1)
        coexact = self.d1.T @ sp.diags(self.star2) @ self.d1
        return (exact + coexact).tocsr()

    def laplace_beltrami(self, f: np.ndarray) -> np.ndarray:
        return -(self.laplacian @ f) / self.star0


class SurfaceModel:
    """Closed oriented surface: flat unit torus, round unit sphere or a triangle mesh.

    Every kind carries a triangulation (a periodic grid for the torus, an icosphere
    for the sphere) so that discrete fields, forms and DEC operators are defined
    uniformly. Analytic kinds additionally expose exact geodesics and frames.
    """

    def __init__(self, kind: str, vertices: np.ndarray, faces: np.ndarray, name: str = ""):
        self.kind = kind
        self.name = name or kind
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self._assemble()

    # ---------------------------------------------------------------- assembly
    def _assemble(self):
        V, F = len(self.vertices), len(self.faces)
        if F == 0 or self.faces.shape[1] != 3:
            raise GeometryError("surface needs a non-empty list of triangles", module="geometry")
        if self.faces.min() < 0 or self.faces.max() >= V:
            raise GeometryError("face references a missing vertex", module="geometry")
        self.edges, self.face_edges, self.face_signs = _edge_table(self.faces, V)
        E = len(self.edges)
        self.euler_char = int(V - E + F)
        if self.euler_char not in (0, 2):
            raise GeometryError(f"genus {(2 - self.euler_char) / 2:g} is not supported (need genus 0 or 1)",
                                module="geometry", details={"euler_char": self.euler_char})
        self.genus = (2 - self.euler_char) // 2
        if self.kind == FLAT_TORUS and self.genus != 1:
            raise GeometryError("flat torus grid must have genus 1", module="geometry")

        self.edge_vectors = self._wrap(self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]])
        self.halfedge_vectors = self.face_signs[..., None] * self.edge_vectors[self.face_edges]
        a = self.halfedge_vectors
        b = -np.roll(a, 1, axis=1)
        cross = np.cross(a, b)
        cross_norm = np.linalg.norm(cross, axis=2)
        dots = np.einsum("fkd,fkd->fk", a, b)
        self.corner_angles = np.arctan2(cross_norm, dots)
        self.face_areas = 0.5 * cross_norm[:, 0]
        mean_area = float(np.mean(self.face_areas))
        if np.any(self.face_areas < DEGENERATE_AREA_RATIO * mean_area):
            bad = int(np.argmin(self.face_areas))
            raise GeometryError(f"degenerate triangle {bad} (area {self.face_areas[bad]:.3e})",
                                module="geometry", details={"face": bad})
        self.face_normals = cross[:, 0] / cross_norm[:, :1]
        if self.kind == FLAT_TORUS and np.any(self.face_normals[:, 2] <= 0):
            raise GeometryError("flat torus faces must be counterclockwise in the plane", module="geometry")
        self.mesh_size = float(np.mean(np.linalg.norm(self.edge_vectors, axis=1)))

        cot = dots / cross_norm
        star1 = np.zeros(E)
        for k in range(3):
            np.add.at(star1, self.face_edges[:, (k + 1) % 3], 0.5 * cot[:, k])
        floor = STAR1_FLOOR * float(np.mean(np.abs(star1)))
        n_clamped = int(np.sum(star1 < floor))
        if n_clamped:
            logger.debug(f"{self.name}: clamped {n_clamped} dual edge weights")
        star1 = np.maximum(star1, floor)

        star0 = np.zeros(V)
        np.add.at(star0, self.faces.ravel(), _mixed_areas(a, cot, self.corner_angles, self.face_areas).ravel())
        self.total_area = float(np.sum(self.face_areas))
        if self.kind == UNIT_SPHERE:
            star0 *= 4.0 * np.pi / np.sum(star0)
            self.total_area = 4.0 * np.pi

        self.dec = DECOperators(d0=_d0(self.edges, V), d1=_d1(self.face_edges, self.face_signs, E),
                                star0=star0, star1=star1, star2=1.0 / self.face_areas)
        self.frames = self._frames()
        gb = self.frames.total_curvature - 2.0 * np.pi * self.euler_char
        if abs(gb) > GAUSS_BONNET_TOL * max(1.0, abs(2.0 * np.pi * self.euler_char)):
            raise GeometryError(f"discrete Gauss-Bonnet violated by {gb:.3e}", module="geometry")
        logger.info(f"Built {self.name}: V={V} E={E} F={F} chi={self.euler_char} area={self.total_area:.6f}")

    def _frames(self) -> FrameAtlas:
        V = len(self.vertices)
        if self.kind == FLAT_TORUS:
            normals = np.tile([0.0, 0.0, 1.0], (V, 1))
            t1 = np.tile([1.0, 0.0, 0.0], (V, 1))
            t2 = np.tile([0.0, 1.0, 0.0], (V, 1))
            return FrameAtlas(normals, t1, t2, np.zeros(len(self.edges)), np.zeros(len(self.faces)), np.zeros(V))
        if self.kind == UNIT_SPHERE:
            normals = self.vertices / np.linalg.norm(self.vertices, axis=1, keepdims=True)
            t1, t2 = sphere_tangent_basis(normals)
            p, q = normals[self.edges[:, 0]], normals[self.edges[:, 1]]
            moved = rotate_along_arc(p, q, t1[self.edges[:, 0]])
            j = self.edges[:, 1]
            rho = np.arctan2(np.einsum("ed,ed->e", moved, t2[j]), np.einsum("ed,ed->e", moved, t1[j]))
            face_k = spherical_excess(normals[self.faces[:, 0]], normals[self.faces[:, 1]], normals[self.faces[:, 2]])
            vertex_k = np.zeros(V)
            np.add.at(vertex_k, self.faces.ravel(), np.repeat(face_k / 3.0, 3))
            return FrameAtlas(normals, t1, t2, rho, face_k, vertex_k)
        return self._angle_scaled_frames()

    def _angle_scaled_frames(self) -> FrameAtlas:
        V = len(self.vertices)
        faces, angles = self.faces, self.corner_angles
        ccw_next: Dict[Tuple[int, int], Tuple[int, float]] = {}
        start: Dict[int, int] = {}
        for f in range(len(faces)):
            for k in range(3):
                a, b, c = int(faces[f, k]), int(faces[f, (k + 1) % 3]), int(faces[f, (k + 2) % 3])
                ccw_next[(a, b)] = (c, float(angles[f, k]))
                start.setdefault(a, b)
        phi: Dict[Tuple[int, int], float] = {}
        angle_sum = np.zeros(V)
        for v in range(V):
            if v not in start:
                raise GeometryError(f"isolated vertex {v}", module="geometry")
            nb, acc, ring = start[v], 0.0, []
            while True:
                ring.append((nb, acc))
                nb, theta = ccw_next[(v, nb)]
                acc += theta
                if nb == start[v]:
                    break
            angle_sum[v] = acc
            for w, raw in ring:
                phi[(v, w)] = 2.0 * np.pi * raw / acc
        if len(phi) != 3 * len(faces):
            raise GeometryError("non-manifold vertex: one-ring is not a single fan", module="geometry")

        rho = np.empty(len(self.edges))
        for e, (i, j) in enumerate(self.edges):
            rho[e] = phi[(int(j), int(i))] + np.pi - phi[(int(i), int(j))]
        rho = wrap_angle(rho)
        vertex_k = 2.0 * np.pi - angle_sum
        face_k = np.sum(angles * (vertex_k[faces] / angle_sum[faces]), axis=1)

        normals = np.zeros((V, 3))
        np.add.at(normals, faces.ravel(), np.repeat(self.face_normals * self.face_areas[:, None], 3, axis=0))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        ref = self.vertices[np.array([start[v] for v in range(V)])] - self.vertices
        ref -= np.einsum("vd,vd->v", ref, normals)[:, None] * normals
        t1 = ref / np.linalg.norm(ref, axis=1, keepdims=True)
        t2 = np.cross(normals, t1)
        return FrameAtlas(normals, t1, t2, rho, face_k, vertex_k)

    # ---------------------------------------------------------------- geometry helpers
    @property
    def embedded(self) -> bool:
        return self.kind != FLAT_TORUS

    @property
    def analytic(self) -> bool:
        return self.kind in (FLAT_TORUS, UNIT_SPHERE)

    @property
    def kappa_bar(self) -> float:
        return 2.0 * np.pi * self.euler_char / self.total_area

    @cached_property
    def surface_hash(self) -> str:
        h = hashlib.sha256(self.kind.encode())
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()

    @cached_property
    def face_centers(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        c = a + (self.halfedge_vectors[:, 0] - self.halfedge_vectors[:, 2]) / 3.0
        return self.project(c)

    @cached_property
    def edge_index(self) -> Dict[Tuple[int, int], int]:
        return {(int(i), int(j)): e for e, (i, j) in enumerate(self.edges)}

    @cached_property
    def vertex_adjacency(self) -> sp.csr_matrix:
        V = len(self.vertices)
        w = np.linalg.norm(self.edge_vectors, axis=1)
        A = sp.coo_matrix((w, (self.edges[:, 0], self.edges[:, 1])), shape=(V, V))
        return (A + A.T).tocsr()

    @cached_property
    def edge_faces(self) -> np.ndarray:
        """(E, 2) faces adjacent to each edge, in order of first appearance."""
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        for f in range(len(self.faces)):
            for k in range(3):
                e = self.face_edges[f, k]
                out[e, 0 if out[e, 0] < 0 else 1] = f
        return out

    @cached_property
    def face_adjacency(self) -> sp.csr_matrix:
        F = len(self.faces)
        ef = self.edge_faces
        A = sp.coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])), shape=(F, F))
        return (A + A.T).tocsr()

    @cached_property
    def _vertex_tree(self) -> cKDTree:
        if self.kind == FLAT_TORUS:
            return cKDTree(np.mod(self.vertices[:, :2], 1.0), boxsize=1.0)
        return cKDTree(self.vertices)

    @cached_property
    def _face_tree(self) -> cKDTree:
        if self.kind == FLAT_TORUS:
            return cKDTree(np.mod(self.face_centers[:, :2], 1.0), boxsize=1.0)
        return cKDTree(self.face_centers)

    def _wrap(self, d: np.ndarray) -> np.ndarray:
        if self.kind != FLAT_TORUS:
            return d
        d = np.array(d, dtype=np.float64, copy=True)
        d[..., :2] -= np.round(d[..., :2])
        return d

    def as_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] == 2:
            if self.kind != FLAT_TORUS:
                raise GeometryError("2-D coordinates are only meaningful on the flat torus", module="geometry")
            x = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
        if x.shape[-1] != 3:
            raise GeometryError(f"points must have 2 or 3 coordinates, got shape {x.shape}", module="geometry")
        return x

    def project(self, x) -> np.ndarray:
        """Retraction onto the surface (exact on analytic kinds, nearest vertex on meshes)."""
        x = self.as_points(x)
        if self.kind == FLAT_TORUS:
            y = np.array(x, copy=True)
            y[..., :2] = np.mod(y[..., :2], 1.0)
            y[..., 2] = 0.0
            return y
        if self.kind == UNIT_SPHERE:
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        return self.vertices[self.nearest_vertex(x)]

    def check_on_surface(self, x, tol: float = 1e-8) -> np.ndarray:
        x = self.as_points(x)
        if self.kind == FLAT_TORUS:
            ok = np.abs(x[..., 2]) <= tol
        elif self.kind == UNIT_SPHERE:
            ok = np.abs(np.linalg.norm(x, axis=-1) - 1.0) <= tol
        else:
            d, _ = self._vertex_tree.query(x.reshape(-1, 3))
            ok = d <= 2.0 * self.mesh_size
        if not np.all(ok):
            raise GeometryError("point does not lie on the surface", module="geometry")
        return x

    def nearest_vertex(self, x) -> np.ndarray:
        x = self.as_points(x)
        q = np.mod(x[..., :2], 1.0) if self.kind == FLAT_TORUS else x
        _, idx = self._vertex_tree.query(q)
        return np.asarray(idx, dtype=np.int64)

    def locate_face(self, x) -> np.ndarray:
        x = self.as_points(x)
        q = np.mod(x[..., :2], 1.0) if self.kind == FLAT_TORUS else x
        _, idx = self._face_tree.query(q)
        return np.asarray(idx, dtype=np.int64)

    def tangent_basis(self, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (t1, t2, normal) at arbitrary surface points."""
        x = self.as_points(x)
        if self.kind == FLAT_TORUS:
            shape = x.shape
            return (np.broadcast_to([1.0, 0.0, 0.0], shape).copy(), np.broadcast_to([0.0, 1.0, 0.0], shape).copy(),
                    np.broadcast_to([0.0, 0.0, 1.0], shape).copy())
        if self.kind == UNIT_SPHERE:
            n = x / np.linalg.norm(x, axis=-1, keepdims=True)
            t1, t2 = sphere_tangent_basis(n)
            return t1, t2, n
        v = self.nearest_vertex(x)
        return self.frames.t1[v], self.frames.t2[v], self.frames.normals[v]

    def exp_map(self, x, v) -> np.ndarray:
        x, v = self.as_points(x), np.asarray(v, dtype=np.float64)
        if self.kind == UNIT_SPHERE:
            norm = np.linalg.norm(v, axis=-1, keepdims=True)
            safe = np.where(norm > 0, norm, 1.0)
            return np.cos(norm) * x + np.sin(norm) * v / safe
        return self.project(x + v)

    def log_map(self, x, y) -> np.ndarray:
        """Tangent vector at x pointing along the shortest geodesic to y with length dist(x, y)."""
        x, y = self.as_points(x), self.as_points(y)
        if self.kind == FLAT_TORUS:
            return self._wrap(y - x) * np.array([1.0, 1.0, 0.0])
        if self.kind == UNIT_SPHERE:
            w = y - np.sum(x * y, axis=-1, keepdims=True) * x
            nw = np.linalg.norm(w, axis=-1, keepdims=True)
            return np.where(nw > 0, w / np.where(nw > 0, nw, 1.0), 0.0) * geodesic_dist(self, x, y)[..., None]
        n = self.frames.normals[self.nearest_vertex(x)]
        d = y - x
        d = d - np.sum(d * n, axis=-1, keepdims=True) * n
        nd = np.linalg.norm(d, axis=-1, keepdims=True)
        return np.where(nd > 0, d / np.where(nd > 0, nd, 1.0), 0.0) * geodesic_dist(self, x, y)[..., None]

    def geodesic_point(self, x, y, t: float) -> np.ndarray:
        """Point at fraction t of the way from x to y along a shortest geodesic."""
        x, y = self.as_points(x), self.as_points(y)
        if self.kind != TRI_MESH:
            return self.exp_map(x, t * self.log_map(x, y))
        path = self.vertex_path(int(self.nearest_vertex(x)), int(self.nearest_vertex(y)))
        pts = self.vertices[path]
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if seg.size == 0:
            return pts[0]
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        target = t * cum[-1]
        k = int(np.clip(np.searchsorted(cum, target) - 1, 0, len(seg) - 1))
        s = (target - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        return self.vertices[self.nearest_vertex(pts[k] + s * (pts[k + 1] - pts[k]))]

    def vertex_path(self, source: int, target: int) -> np.ndarray:
        _, pred = dijkstra(self.vertex_adjacency, indices=source, return_predecessors=True)
        path = [target]
        while path[-1] != source:
            prev = pred[path[-1]]
            if prev < 0:
                raise GeometryError("vertices are not connected", module="geometry")
            path.append(int(prev))
        return np.array(path[::-1], dtype=np.int64)

    def edge_ids(self, path: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Edge indices and orientation signs for consecutive vertices of a path."""
        ids, signs = [], []
        for i, j in zip(path[:-1], path[1:]):
            i, j = int(i), int(j)
            e = self.edge_index.get((min(i, j), max(i, j)))
            if e is None:
                raise GeometryError(f"path leaves the surface between vertices {i} and {j}", module="geometry")
            ids.append(e)
            signs.append(1.0 if i < j else -1.0)
        return np.array(ids, dtype=np.int64), np.array(signs)

    def to_ambient(self, z: np.ndarray) -> np.ndarray:
        """Complex per-vertex amplitudes to 3-D tangent vectors."""
        z = np.asarray(z)
        return z.real[:, None] * self.frames.t1 + z.imag[:, None] * self.frames.t2

    def from_ambient(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return np.einsum("vd,vd->v", v, self.frames.t1) + 1j * np.einsum("vd,vd->v", v, self.frames.t2)

    # ---------------------------------------------------------------- steiner graph
    @cached_property
    def _steiner_graph(self) -> Tuple[sp.csr_matrix, np.ndarray]:
        V, E = len(self.vertices), len(self.edges)
        mids = self.vertices[self.edges[:, 0]] + 0.5 * self.edge_vectors
        nodes = np.concatenate([self.vertices, mids])
        local = np.concatenate([self.faces, V + self.face_edges], axis=1)
        rows, cols, w = [], [], []
        for p in range(6):
            for q in range(p + 1, 6):
                a, b = local[:, p], local[:, q]
                d = np.linalg.norm(self._wrap(nodes[b] - nodes[a]), axis=1)
                rows.append(a)
                cols.append(b)
                w.append(d)
        rows, cols, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
        n = V + E
        G = sp.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
        G = G.maximum(G.T)
        return G.tocsr(), nodes

    def steiner_distance(self, x, y) -> np.ndarray:
        graph, nodes = self._steiner_graph
        tree = cKDTree(nodes)
        _, sx = tree.query(self.as_points(x).reshape(-1, 3))
        _, sy = tree.query(self.as_points(y).reshape(-1, 3))
        out = np.empty(len(sx))
        for k, (a, b) in enumerate(zip(sx, sy)):
            out[k] = _steiner_rows(self, int(a))[b]
        return out

    def __repr__(self):
        return f"SurfaceModel({self.name}, V={len(self.vertices)}, F={len(self.faces)}, chi={self.euler_char})"


def _steiner_rows(surface: SurfaceModel, source: int) -> np.ndarray:
    cache = surface.__dict__.setdefault("_steiner_cache", {})
    if source not in cache:
        if len(cache) > 512:
            cache.clear()
        graph, _ = surface._steiner_graph
        cache[source] = dijkstra(graph, indices=source)
    return cache[source]


# -------------------------------------------------------------------- construction helpers
def _edge_table(faces: np.ndarray, V: int):
    F = len(faces)
    he = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1).reshape(-1, 2)
    lo, hi = he.min(axis=1), he.max(axis=1)
    if np.any(lo == hi):
        raise GeometryError("triangle with repeated vertex", module="geometry")
    key = lo * V + hi
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    if np.any(counts == 1):
        raise GeometryError(f"mesh has {int(np.sum(counts == 1))} boundary edges", module="geometry")
    if np.any(counts > 2):
        raise GeometryError("non-manifold edge shared by more than two faces", module="geometry")
    forward = he[:, 0] < he[:, 1]
    n_forward = np.bincount(inverse, weights=forward.astype(float), minlength=len(uniq))
    if not np.all(n_forward == 1):
        raise GeometryError("faces are not consistently oriented", module="geometry")
    edges = np.stack([uniq // V, uniq % V], axis=1).astype(np.int64)
    return edges, inverse.reshape(F, 3).astype(np.int64), np.where(forward, 1.0, -1.0).reshape(F, 3)


def _d0(edges: np.ndarray, V: int) -> sp.csr_matrix:
    E = len(edges)
    rows = np.repeat(np.arange(E), 2)
    cols = edges.ravel()
    vals = np.tile([-1.0, 1.0], E)
    return sp.csr_matrix((vals, (rows, cols)), shape=(E, V))


def _d1(face_edges: np.ndarray, face_signs: np.ndarray, E: int) -> sp.csr_matrix:
    F = len(face_edges)
    rows = np.repeat(np.arange(F), 3)
    return sp.csr_matrix((face_signs.ravel(), (rows, face_edges.ravel())), shape=(F, E))


def _mixed_areas(he: np.ndarray, cot: np.ndarray, angles: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Voronoi areas per corner, with the barycentric split on obtuse triangles."""
    len2 = np.einsum("fkd,fkd->fk", he, he)
    voronoi = np.empty_like(cot)
    for k in range(3):
        voronoi[:, k] = (len2[:, k] * cot[:, (k + 2) % 3] + len2[:, (k + 2) % 3] * cot[:, (k + 1) % 3]) / 8.0
    obtuse = angles > 0.5 * np.pi
    any_obtuse = obtuse.any(axis=1)
    fallback = np.where(obtuse, 0.5, 0.25) * areas[:, None]
    return np.where(any_obtuse[:, None], fallback, voronoi)


def wrap_angle(x):
    """Representative in (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2.0 * np.pi)


def sphere_tangent_basis(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = np.asarray(n, dtype=np.float64)
    ref = np.where(np.abs(n[..., 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = ref - np.sum(ref * n, axis=-1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    return t1, np.cross(n, t1)


def rotate_along_arc(p: np.ndarray, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Parallel transport of v from p to q along the shorter great-circle arc."""
    axis = np.cross(p, q)
    s = np.linalg.norm(axis, axis=-1, keepdims=True)
    c = np.sum(p * q, axis=-1, keepdims=True)
    k = np.where(s > 0, axis / np.where(s > 0, s, 1.0), 0.0)
    theta = np.arctan2(s, c)
    kv = np.sum(k * v, axis=-1, keepdims=True)
    return v * np.cos(theta) + np.cross(k, v) * np.sin(theta) + k * kv * (1.0 - np.cos(theta))


def spherical_excess(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    triple = np.einsum("fd,fd->f", p, np.cross(q, r))
    denom = 1.0 + np.einsum("fd,fd->f", p, q) + np.einsum("fd,fd->f", q, r) + np.einsum("fd,fd->f", r, p)
    return 2.0 * np.arctan2(triple, denom)


# -------------------------------------------------------------------- mesh generators
ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), ICOSAHEDRON_FACES.copy()


def icosphere(subdivisions: int) -> Tuple[np.ndarray, np.ndarray]:
    verts, faces = icosahedron()
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint: Dict[Tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = np.array(new_faces, dtype=np.int64)
    return np.array(verts), np.asarray(faces, dtype=np.int64)


def torus_grid(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Periodic right-triangle grid of the unit square; coordinates in [0, 1)^2."""
    idx = np.arange(n)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    verts = np.stack([i.ravel() / n, j.ravel() / n, np.zeros(n * n)], axis=1)

    def vid(a, b):
        return (a % n) * n + (b % n)

    v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
    faces = np.concatenate([np.stack([v00, v10, v11], -1).reshape(-1, 3),
                            np.stack([v00, v11, v01], -1).reshape(-1, 3)])
    return verts, faces


def torus_of_revolution(R: float, r: float, n_major: int, n_minor: int) -> Tuple[np.ndarray, np.ndarray]:
    """Staggered-ring triangulation; odd rings are shifted by half a step around the major circle."""
    if n_minor % 2:
        raise GeometryError("n_minor must be even for the staggered triangulation", module="geometry")
    j, i = np.meshgrid(np.arange(n_minor), np.arange(n_major), indexing="ij")
    u = 2.0 * np.pi * (i + 0.5 * (j % 2)) / n_major
    v = 2.0 * np.pi * j / n_minor
    verts = np.stack([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)], -1)
    verts = verts.reshape(-1, 3)

    def vid(ring, k):
        return (ring % n_minor) * n_major + (k % n_major)

    faces = []
    for ring in range(n_minor):
        for k in range(n_major):
            if ring % 2 == 0:
                faces.append([vid(ring, k), vid(ring, k + 1), vid(ring + 1, k)])
                faces.append([vid(ring, k + 1), vid(ring + 1, k + 1), vid(ring + 1, k)])
            else:
                faces.append([vid(ring, k), vid(ring, k + 1), vid(ring + 1, k + 1)])
                faces.append([vid(ring, k), vid(ring + 1, k + 1), vid(ring + 1, k)])
    return verts, np.array(faces, dtype=np.int64)


def torus_angles(vertices: np.ndarray, R: float) -> Tuple[np.ndarray, np.ndarray]:
    """Recover (u, v) parameters of torus-of-revolution points."""
    u = np.arctan2(vertices[:, 1], vertices[:, 0])
    rho = np.hypot(vertices[:, 0], vertices[:, 1]) - R
    return u, np.arctan2(vertices[:, 2], rho)


# -------------------------------------------------------------------- OFF files
def read_off(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as input_file:
        lines = [ln.split("#", 1)[0].strip() for ln in input_file]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != "OFF":
        raise GeometryError(f"{path}: not a valid OFF header", module="geometry")
    try:
        n_vertices, n_faces = (int(s) for s in lines[1].split()[:2])
        vertices = np.array([[float(s) for s in lines[2 + k].split()[:3]] for k in range(n_vertices)])
        faces = []
        for k in range(n_faces):
            row = [int(s) for s in lines[2 + n_vertices + k].split()]
            if row[0] != 3:
                raise GeometryError(f"{path}: face {k} is not a triangle", module="geometry")
            faces.append(row[1:4])
    except (ValueError, IndexError) as e:
        raise GeometryError(f"{path}: malformed OFF body ({e})", module="geometry")
    return vertices, np.array(faces, dtype=np.int64)


def write_off(path: Union[str, Path], vertices: np.ndarray, faces: np.ndarray):
    with open(path, "w", encoding="utf-8") as output_file:
        output_file.write("OFF\n")
        output_file.write(f"{len(vertices)} {len(faces)} 0\n")
        for v in vertices:
            output_file.write(" ".join(f"{c:.17g}" for c in v) + "\n")
        for f in faces:
            output_file.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# -------------------------------------------------------------------- public operations
@lru_cache(maxsize=16)
def _make_surface_cached(spec: SurfaceSpec) -> SurfaceModel:
    if spec.kind == FLAT_TORUS:
        v, f = torus_grid(spec.n)
        return SurfaceModel(FLAT_TORUS, v, f, name=f"flat_torus[{spec.n}]")
    if spec.kind == UNIT_SPHERE:
        v, f = icosphere(spec.subdivisions)
        return SurfaceModel(UNIT_SPHERE, v, f, name=f"unit_sphere[{spec.subdivisions}]")
    if spec.kind == "ellipsoid":
        v, f = icosphere(spec.subdivisions)
        return SurfaceModel(TRI_MESH, v * np.asarray(spec.axes), f, name=f"ellipsoid{spec.axes}")
    if spec.kind == "torus_of_revolution":
        v, f = torus_of_revolution(spec.R, spec.r, spec.n_major, spec.n_minor)
        return SurfaceModel(TRI_MESH, v, f, name=f"torus_of_revolution[{spec.R},{spec.r}]")
    if spec.kind == TRI_MESH:
        if not spec.path:
            raise GeometryError("mesh surface needs a path", module="geometry")
        v, f = read_off(spec.path)
        return SurfaceModel(TRI_MESH, v, f, name=Path(spec.path).name)
    raise GeometryError(f"unknown surface kind {spec.kind!r}", module="geometry")


def make_surface(spec: Union[SurfaceSpec, Dict]) -> SurfaceModel:
    if isinstance(spec, dict):
        spec = SurfaceSpec.from_dict(spec)
    return _make_surface_cached(spec)


def geodesic_dist(S: SurfaceModel, x, y) -> np.ndarray:
    x, y = S.as_points(x), S.as_points(y)
    if S.kind == FLAT_TORUS:
        d = S._wrap(y - x)
        return np.hypot(d[..., 0], d[..., 1])
    if S.kind == UNIT_SPHERE:
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        y = y / np.linalg.norm(y, axis=-1, keepdims=True)
        return np.arctan2(np.linalg.norm(np.cross(x, y), axis=-1), np.sum(x * y, axis=-1))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    return S.steiner_distance(x.reshape(-1, 3), y.reshape(-1, 3)).reshape(shape)


def dec_operators(S: SurfaceModel) -> DECOperators:
    return S.dec


def connection_transport(S: SurfaceModel, path, v0):
    """Parallel transport of v0 along a path.

    Integer paths are vertex sequences on the triangulation and v0 is a complex
    amplitude in the start vertex frame; the result is in the end vertex frame.
    Float paths are polylines on an analytic surface (consecutive points joined by
    geodesics) and v0 is a 3-D tangent vector at the first point.
    """
    path = np.asarray(path)
    if np.issubdtype(path.dtype, np.integer):
        ids, signs = S.edge_ids(path)
        angle = float(np.sum(signs * S.frames.rho[ids]))
        return complex(v0) * np.exp(1j * angle)
    if S.kind == FLAT_TORUS:
        S.check_on_surface(path)
        return np.asarray(v0, dtype=np.float64)
    if S.kind == UNIT_SPHERE:
        pts = S.check_on_surface(path, tol=1e-9)
        v = np.asarray(v0, dtype=np.float64)
        if abs(float(np.dot(v, pts[0]))) > 1e-9 * max(1.0, float(np.linalg.norm(v))):
            raise GeometryError("v0 is not tangent at the start of the path", module="geometry")
        for p, q in zip(pts[:-1], pts[1:]):
            v = rotate_along_arc(p, q, v)
        return v
    raise GeometryError("mesh transport needs a vertex path", module="geometry")


def rotation_angle(normal: np.ndarray, v_from: np.ndarray, v_to: np.ndarray) -> float:
    """Signed angle from v_from to v_to in the tangent plane with the given normal."""
    return float(np.arctan2(np.dot(np.cross(v_from, v_to), normal), np.dot(v_from, v_to)))
