import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from vortexlab.errors import ConfigError, GeometryError, VortexError
from vortexlab.geometry import FLAT_TORUS, SurfaceModel, geodesic_dist, wrap_angle
from vortexlab.greens import GAUSS_POINTS, GreenEvaluator, psi_field

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
R_MIN = 1e-2
ANALYTIC_LATTICE_TOL = 1e-6
MESH_LATTICE_TOL = 1e-3
KERNEL_RATIO = 1e-8
LINE_PANELS = 400
MAX_LOOP_SHIFTS = 50
LOOP_SHIFT = 0.0137


@dataclass(frozen=True, eq=False)
class VortexConfig:
    """Vortex points a_k (ambient 3-D coordinates) with nonzero integer degrees d_k."""
    points: np.ndarray
    degrees: np.ndarray

    @staticmethod
    def create(S: SurfaceModel, points, degrees, require_total: bool = True) -> "VortexConfig":
        pts = S.as_points(np.atleast_2d(np.asarray(points, dtype=np.float64)))
        degs = np.asarray(degrees, dtype=np.int64).ravel()
        if len(pts) != len(degs):
            raise ConfigError(f"{len(pts)} points but {len(degs)} degrees", module="harmonic")
        if np.any(degs == 0):
            raise ConfigError("vortex degrees must be nonzero", module="harmonic")
        if S.analytic:
            pts = S.project(S.check_on_surface(pts, tol=1e-6))
        if require_total and int(degs.sum()) != S.euler_char:
            raise ConfigError(f"sum of degrees {int(degs.sum())} must equal chi(S) = {S.euler_char}",
                              module="harmonic", details={"sum": int(degs.sum()), "chi": S.euler_char})
        cfg = VortexConfig(points=pts, degrees=degs)
        if len(pts) > 1 and cfg.min_separation(S) <= 0.0:
            raise VortexError("vortex points must be pairwise distinct", module="harmonic")
        return cfg

    def __len__(self):
        return len(self.degrees)

    def min_separation(self, S: SurfaceModel) -> float:
        if len(self.points) < 2:
            return np.inf
        i, j = np.triu_indices(len(self.points), k=1)
        return float(np.min(geodesic_dist(S, self.points[i], self.points[j])))

    def reduced(self, S: SurfaceModel, tol: float = 1e-12) -> "VortexConfig":
        """Merge coincident points summing their degrees, then drop zero degrees."""
        pts, degs = [], []
        for p, d in zip(self.points, self.degrees):
            for k, q in enumerate(pts):
                if geodesic_dist(S, p, q) <= tol:
                    degs[k] += int(d)
                    break
            else:
                pts.append(p)
                degs.append(int(d))
        keep = [k for k, d in enumerate(degs) if d != 0]
        return VortexConfig(points=np.array([pts[k] for k in keep]).reshape(-1, 3),
                            degrees=np.array([degs[k] for k in keep], dtype=np.int64))

    def moved(self, S: SurfaceModel, points) -> "VortexConfig":
        return VortexConfig(points=S.project(S.as_points(points)), degrees=self.degrees.copy())


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    """Orthonormal harmonic 1-forms (integrated over edges), generator loops and periods.

    alpha[l, k] is the integral of forms[k] over loops[l].
    """
    surface: SurfaceModel
    forms: np.ndarray
    loops: List[np.ndarray]
    alpha: np.ndarray
    audit: Dict = field(default_factory=dict)

    @property
    def genus(self) -> int:
        return self.forms.shape[0] // 2

    @property
    def dim(self) -> int:
        return self.forms.shape[0]

    def loop_integrals(self, one_form: np.ndarray, loops: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
        loops = self.loops if loops is None else loops
        out = np.zeros(len(loops))
        for l, loop in enumerate(loops):
            ids, signs = self.surface.edge_ids(loop)
            out[l] = np.sum(signs * one_form[ids])
        return out

    def loops_avoiding(self, mask: np.ndarray) -> List[np.ndarray]:
        """Generator loops avoiding the masked vertices.

        On the flat torus grid the row and column loops are translated to the vertex
        row / column farthest from the masked sites; other surfaces keep their loops.
        """
        S = self.surface
        if S.kind != FLAT_TORUS or not np.any(mask):
            return self.loops
        n = int(round(np.sqrt(len(S.vertices))))
        bad = np.flatnonzero(mask)
        bad_i, bad_j = bad // n, bad % n

        def farthest(bad_idx):
            gaps = [np.min(np.abs((k - bad_idx + n // 2) % n - n // 2)) for k in range(n)]
            return int(np.argmax(gaps))

        row, col = farthest(bad_j), farthest(bad_i)
        idx = np.arange(n + 1) % n
        return [idx * n + row, col * n + idx]


def harmonic_basis(S: SurfaceModel, audit: bool = True) -> HarmonicBasis:
    E = len(S.edges)
    if S.genus == 0:
        return HarmonicBasis(S, np.zeros((0, E)), [], np.zeros((0, 0)), {"kernel_dim": 0})
    if S.kind == FLAT_TORUS:
        n = int(round(np.sqrt(len(S.vertices))))
        forms = np.stack([S.edge_vectors[:, 0], S.edge_vectors[:, 1]])
        idx = np.arange(n + 1) % n
        loops = [idx * n, idx]
        hb = HarmonicBasis(S, forms, loops, np.zeros((2, 2)))
        alpha = np.stack([hb.loop_integrals(f) for f in forms], axis=1)
        return HarmonicBasis(S, forms, loops, alpha, {"kernel_dim": 2, "method": "analytic"})
    return _tree_cotree_basis(S, audit)


def _tree_cotree_basis(S: SurfaceModel, audit: bool) -> HarmonicBasis:
    dec = S.dec
    V, E, F = len(S.vertices), len(S.edges), len(S.faces)
    order, pred = breadth_first_order(S.vertex_adjacency, 0, directed=False, return_predecessors=True)
    in_tree = np.zeros(E, dtype=bool)
    for v in order[1:]:
        in_tree[S.edge_index[(min(v, pred[v]), max(v, pred[v]))]] = True

    edge_faces = S.edge_faces
    dual_edges = np.flatnonzero(~in_tree)
    dual = sp.coo_matrix((np.ones(len(dual_edges)), (edge_faces[dual_edges, 0], edge_faces[dual_edges, 1])),
                         shape=(F, F)).tocsr()
    dual_order, dual_pred = breadth_first_order(dual, 0, directed=False, return_predecessors=True)
    in_cotree = np.zeros(E, dtype=bool)
    face_pair_edge = {}
    for e in dual_edges:
        a, b = edge_faces[e]
        face_pair_edge[(min(a, b), max(a, b))] = e
    for f in dual_order[1:]:
        g = dual_pred[f]
        in_cotree[face_pair_edge[(min(f, g), max(f, g))]] = True
    leftover = np.flatnonzero(~in_tree & ~in_cotree)
    if len(leftover) != 2 * S.genus:
        raise GeometryError(f"tree-cotree left {len(leftover)} edges, expected {2 * S.genus}", module="harmonic")

    def tree_path(v):
        path = [int(v)]
        while pred[path[-1]] >= 0:
            path.append(int(pred[path[-1]]))
        return path

    def dual_path(f):
        path = [int(f)]
        while dual_pred[path[-1]] >= 0:
            path.append(int(dual_pred[path[-1]]))
        return path

    sign_lookup = {(int(f), int(S.face_edges[f, k])): S.face_signs[f, k] for f in range(F) for k in range(3)}
    loops, closed = [], []
    for e in leftover:
        i, j = (int(x) for x in S.edges[e])
        pi, pj = tree_path(i), tree_path(j)
        while len(pi) > 1 and len(pj) > 1 and pi[-2] == pj[-2]:
            pi.pop()
            pj.pop()
        # i -> lca -> j, closed by the edge j -> i
        loops.append(np.array(pi + pj[::-1][1:] + [i], dtype=np.int64))
        fa, fb = (int(x) for x in edge_faces[e])
        pa, pb = dual_path(fa), dual_path(fb)
        while len(pa) > 1 and len(pb) > 1 and pa[-2] == pb[-2]:
            pa.pop()
            pb.pop()
        # fb -> ... -> fa through cotree edges, then across e back into fb
        faces_seq = pb + pa[::-1][1:] + [fb]
        omega = np.zeros(E)
        for f_from, f_to in zip(faces_seq[:-1], faces_seq[1:]):
            ce = e if (f_from, f_to) == (fa, fb) else face_pair_edge[(min(f_from, f_to), max(f_from, f_to))]
            omega[ce] = sign_lookup[(f_from, int(ce))]
        closed.append(omega)

    lu = splu(dec.laplacian[1:, 1:].tocsc())
    forms = []
    for omega in closed:
        rhs = dec.d0.T @ (dec.star1 * omega)
        a = np.zeros(V)
        a[1:] = lu.solve(rhs[1:])
        forms.append(omega - dec.d0 @ a)
    ortho = []
    for h in forms:
        for q in ortho:
            h = h - np.dot(dec.star1 * h, q) * q
        ortho.append(h / np.sqrt(np.dot(dec.star1 * h, h)))
    forms = np.stack(ortho)
    hb = HarmonicBasis(S, forms, loops, np.zeros((len(loops), len(loops))))
    alpha = np.stack([hb.loop_integrals(f) for f in forms], axis=1)
    report = {
        "method": "tree-cotree",
        "closed_residual": float(np.max(np.abs(dec.d1 @ forms.T))),
        "coclosed_residual": float(np.max(np.abs(dec.codifferential @ forms.T))),
        "alpha_condition": float(np.linalg.cond(alpha)),
    }
    if audit:
        report.update(kernel_audit(S, 2 * S.genus))
    logger.info(f"Harmonic basis on {S.name}: {report}")
    return HarmonicBasis(S, forms, loops, alpha, report)


def kernel_audit(S: SurfaceModel, expected: int) -> Dict:
    """Smallest generalized eigenvalues of the weak 1-form Laplacian against star1."""
    dec = S.dec
    M = sp.diags(dec.star1).tocsc()
    K = dec.hodge_laplacian1.tocsc()
    try:
        vals = eigsh(K, k=expected + 1, M=M, sigma=-1e-3, which="LM", return_eigenvectors=False)
    except ArpackNoConvergence as e:
        logger.warning(f"kernel audit did not converge: {e}")
        return {"kernel_dim": None}
    vals = np.sort(np.abs(vals))
    dim = int(np.sum(vals < KERNEL_RATIO * vals[-1]))
    if dim != expected:
        logger.warning(f"kernel dimension {dim} != {expected}; mesh too coarse")
    return {"kernel_dim": dim, "eigenvalues": vals.tolist()}


# ---------------------------------------------------------------- zeta
def zeta(HB: HarmonicBasis, gev: GreenEvaluator, cfg: VortexConfig, method: str = "auto",
         offsets: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Angles zeta_l in [0, 2pi): integral of d*psi + A over loops homologous to the generators."""
    S = HB.surface
    if HB.dim == 0:
        return np.zeros(0)
    if S.kind == FLAT_TORUS:
        if method in ("auto", "closed"):
            return zeta_torus_closed(cfg)
        if method == "path":
            return np.array([torus_line_integral(gev, cfg, axis=l, offset=offsets[l]) for l in range(2)]) % TWO_PI
        raise ConfigError(f"unknown zeta method {method!r}", module="harmonic")
    pot = psi_field(gev, cfg)
    return HB.loop_integrals(pot.dstar_psi + S.frames.rho) % TWO_PI


def zeta_torus_closed(cfg: VortexConfig) -> np.ndarray:
    # d*psi = psi_y dx - psi_x dy with loops traversed along +x and +y; the opposite orientation flips z1
    d = cfg.degrees.astype(np.float64)
    z1 = -TWO_PI * np.sum(d * cfg.points[:, 1])
    z2 = TWO_PI * np.sum(d * cfg.points[:, 0])
    return np.mod(np.array([z1, z2]), TWO_PI)


def _segment_integral(gev, cfg, p0, p1, panels: int) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    edges = np.linspace(0.0, 1.0, panels + 1)
    s = (edges[:-1, None] + 0.5 * (nodes[None, :] + 1.0) * np.diff(edges)[:, None]).ravel()
    w = (0.5 * weights[None, :] * np.diff(edges)[:, None]).ravel()
    dx = p1 - p0
    x = p0[None, :] + s[:, None] * dx[None, :]
    J = gev.dstar_psi(cfg, x)
    return float(np.sum(w * (J @ dx)))


def _arc_integral(gev, cfg, center, radius, theta0, theta1, panels: int = 16) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    edges = np.linspace(theta0, theta1, panels + 1)
    th = (edges[:-1, None] + 0.5 * (nodes[None, :] + 1.0) * np.diff(edges)[:, None]).ravel()
    w = (0.5 * weights[None, :] * np.diff(edges)[:, None]).ravel()
    x = center[None, :] + radius * np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
    dx = radius * np.stack([-np.sin(th), np.cos(th), np.zeros_like(th)], axis=1)
    J = gev.dstar_psi(cfg, x)
    return float(np.sum(w * np.sum(J * dx, axis=1)))


def torus_line_integral(gev, cfg: VortexConfig, axis: int, offset: float = 0.0, r_min: float = R_MIN) -> float:
    """Integral of d*psi along the loop s -> (s, c) (axis 0) or s -> (c, s) (axis 1).

    Vortices within r_min of the line are bypassed by circular arcs of radius 2 r_min;
    the offset c is shifted when arcs would overlap or pass within r_min of a vortex.
    """
    along, across = axis, 1 - axis
    for attempt in range(MAX_LOOP_SHIFTS):
        c = (offset + attempt * LOOP_SHIFT) % 1.0
        rel = cfg.points[:, across] - c
        rel -= np.round(rel)
        close = np.flatnonzero(np.abs(rel) < r_min)
        R = 2.0 * r_min
        stops = np.sort(np.mod(cfg.points[close, along], 1.0))
        if len(stops) > 1 and np.min(np.diff(np.concatenate([stops, [stops[0] + 1.0]]))) <= 2.0 * R:
            continue
        if not _arcs_clear(cfg, close, along, across, c, R, r_min):
            continue
        return _detoured_integral(gev, cfg, stops, along, c, R)
    raise VortexError("no admissible loop homologous to the generator", module="harmonic")


def _arcs_clear(cfg, close, along, across, c, R, r_min) -> bool:
    for k in close:
        center = np.zeros(2)
        center[along], center[across] = cfg.points[k, along], c
        for m in range(len(cfg.points)):
            d = cfg.points[m, :2] - center
            d -= np.round(d)
            if abs(np.hypot(d[0], d[1]) - R) < r_min:
                return False
    return True


def _point(along, a, c):
    p = np.zeros(3)
    p[along], p[1 - along] = a, c
    return p


def _detoured_integral(gev, cfg, stops, along, c, R) -> float:
    start = 0.0 if len(stops) == 0 else stops[0] + R
    cursor = start
    total = 0.0
    targets = list(stops[1:]) + ([stops[0] + 1.0] if len(stops) else [1.0])
    for stop in targets:
        end = stop - R if len(stops) else stop
        span = end - cursor
        total += _segment_integral(gev, cfg, _point(along, cursor, c), _point(along, end, c),
                                   max(8, int(LINE_PANELS * span)))
        if len(stops):
            center = _point(along, stop, c)
            # pass above a horizontal line, to the right of a vertical one
            if along == 0:
                total += _arc_integral(gev, cfg, center, R, np.pi, 0.0)
            else:
                total += _arc_integral(gev, cfg, center, R, -0.5 * np.pi, 0.5 * np.pi)
            cursor = stop + R
    return total


# ---------------------------------------------------------------- lattice
@dataclass(frozen=True, eq=False)
class FluxLattice:
    """The translate 2pi alpha^{-1} Z^{2g} - alpha^{-1} zeta of admissible flux vectors."""
    alpha: np.ndarray
    zeta: np.ndarray
    tol: float
    surface_hash: str = ""

    @property
    def dim(self) -> int:
        return len(self.zeta)

    @property
    def alpha_inv(self) -> np.ndarray:
        return np.linalg.inv(self.alpha) if self.dim else np.zeros((0, 0))

    @property
    def generator(self) -> np.ndarray:
        return TWO_PI * self.alpha_inv

    @property
    def offset(self) -> np.ndarray:
        return -self.alpha_inv @ self.zeta if self.dim else np.zeros(0)

    def coordinates(self, phi) -> np.ndarray:
        return (self.alpha @ np.asarray(phi, dtype=np.float64) + self.zeta) / TWO_PI

    def defect(self, phi) -> np.ndarray:
        """Per-row distance of alpha phi + zeta to 2pi Z, signed in (-pi, pi]."""
        if self.dim == 0:
            return np.zeros(0)
        return wrap_angle(self.alpha @ np.asarray(phi, dtype=np.float64) + self.zeta)

    def contains(self, phi) -> bool:
        return bool(np.all(np.abs(self.defect(phi)) < self.tol))

    def point(self, n) -> np.ndarray:
        return self.alpha_inv @ (TWO_PI * np.asarray(n, dtype=np.float64) - self.zeta)

    def nearest_point(self, phi) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return self.point(closest_coefficients(self.generator, self.coordinates(phi)))


def closest_coefficients(G: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Integer n minimizing |G (n - c)|.

    Rounding c gives a first candidate at squared distance r2; every better n lies
    in the ellipsoid (n - c)^T Q (n - c) <= r2 with Q = G^T G, whose extent along
    axis k is sqrt(r2 (Q^-1)_kk). That box is enumerated, so skewed bases are exact.
    """
    c = np.asarray(c, dtype=np.float64)
    Q = G.T @ G
    best = np.round(c)
    best_d = float((best - c) @ Q @ (best - c))
    half = np.sqrt(best_d * np.diag(np.linalg.inv(Q)))
    ranges = [range(int(np.floor(ck - hk)), int(np.ceil(ck + hk)) + 1) for ck, hk in zip(c, half)]
    for n in itertools.product(*ranges):
        n = np.array(n, dtype=np.float64)
        d = float((n - c) @ Q @ (n - c))
        if d < best_d - 1e-15 * max(1.0, best_d):
            best, best_d = n, d
    return best


def lattice(HB: HarmonicBasis, gev: GreenEvaluator, cfg: VortexConfig, method: str = "auto") -> FluxLattice:
    tol = ANALYTIC_LATTICE_TOL if HB.surface.analytic else MESH_LATTICE_TOL
    return FluxLattice(alpha=HB.alpha, zeta=zeta(HB, gev, cfg, method=method), tol=tol,
                       surface_hash=HB.surface.surface_hash)


def lattice_distance(L1: FluxLattice, L2: FluxLattice) -> float:
    """Hausdorff distance between two translates of the same lattice."""
    if L1.surface_hash != L2.surface_hash or L1.alpha.shape != L2.alpha.shape or not np.allclose(L1.alpha, L2.alpha):
        raise ConfigError("lattices come from different harmonic bases", module="harmonic")
    if L1.dim == 0:
        return 0.0
    diff = L1.offset - L2.offset
    n = closest_coefficients(L1.generator, L1.alpha @ diff / TWO_PI)
    return float(np.linalg.norm(diff - L1.generator @ n))


def w11_vortex_distance(S: SurfaceModel, cfg1: VortexConfig, cfg2: VortexConfig) -> float:
    """2pi times the minimal connection between sum d delta_a (cfg1) and (cfg2)."""
    if int(np.sum(cfg1.degrees)) != int(np.sum(cfg2.degrees)):
        raise ConfigError("configurations must carry the same total degree", module="harmonic")
    pos, neg = [], []
    for p, d in zip(cfg1.points, cfg1.degrees):
        (pos if d > 0 else neg).extend([p] * abs(int(d)))
    for p, d in zip(cfg2.points, cfg2.degrees):
        (neg if d > 0 else pos).extend([p] * abs(int(d)))
    if not pos:
        return 0.0
    pos, neg = np.array(pos), np.array(neg)
    cost = geodesic_dist(S, pos[:, None, :], neg[None, :, :])
    rows, cols = linear_sum_assignment(cost)
    return float(TWO_PI * cost[rows, cols].sum())
