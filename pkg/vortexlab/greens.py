import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from vortexlab.errors import ConfigError, ConvergenceError, VortexError
from vortexlab.geometry import FLAT_TORUS, UNIT_SPHERE, SurfaceModel, geodesic_dist

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SERIES_TOL = 1e-16
COINCIDENT_TOL = 1e-12
VORTEX_EXCLUSION = 1e-6
NEAR_SPLIT_RADIUS = 0.1
RICHARDSON_STEPS = (1e-2, 5e-3, 2.5e-3)
PSI0_TOL = 1e-8
GAUSS_POINTS = 8
ROBIN_ANNULUS = (4.0, 8.0)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_POINTS)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _series_cutoff(tol: float = SERIES_TOL) -> int:
    """Smallest M with sum_{m>M} exp(-pi m) below tol."""
    m = 1
    while np.exp(-np.pi * (m + 1)) / (1.0 - np.exp(-np.pi)) >= tol:
        m += 1
    return m


class GreenEvaluator:
    """Green's function of -Laplace-Beltrami with the mean-zero gauge on a closed surface.

    G solves -Delta_x G(., y) = delta_y - 1/Vol(S) and integrates to zero. The
    regular part is H(x, y) = G(x, y) + (1/2pi) log dist(x, y).
    """
    method = "abstract"

    def __init__(self, surface: SurfaceModel):
        self.surface = surface
        self._psi0: Optional[np.ndarray] = None

    def green(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x, y) -> np.ndarray:
        raise VortexError(f"gradient of G is not available for {self.method} evaluators", module="greens")

    def robin(self, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def psi0(self) -> np.ndarray:
        if self._psi0 is None:
            self._psi0 = psi0_field(self.surface)
        return self._psi0

    def psi0_at(self, x) -> np.ndarray:
        x = self.surface.as_points(x)
        if self.surface.analytic:
            return np.zeros(x.shape[:-1])
        return self.psi0[self.surface.nearest_vertex(x)]

    def _check_apart(self, x, y):
        d = geodesic_dist(self.surface, x, y)
        if np.any(d < COINCIDENT_TOL):
            raise VortexError("G(x, x) is singular; use robin_mass for the diagonal", module="greens")

    # ------------------------------------------------------------ vortex potential
    def psi_value(self, cfg, x) -> np.ndarray:
        """Scalar potential *psi = 2pi sum_k d_k G(x, a_k) + psi0(x)."""
        x = self.surface.as_points(x)
        self._check_exclusion(cfg, x)
        out = self.psi0_at(x).astype(np.float64)
        for a, d in zip(cfg.points, cfg.degrees):
            out = out + TWO_PI * d * self.green(x, a)
        return out

    def dstar_psi(self, cfg, x) -> np.ndarray:
        """The 1-form d*psi at x as an ambient vector J, d*psi(v) = J . v.

        J = grad(*psi) x N, so the counterclockwise circulation around a_k tends to 2pi d_k.
        """
        x = self.surface.as_points(x)
        self._check_exclusion(cfg, x)
        g = np.zeros(x.shape)
        for a, d in zip(cfg.points, cfg.degrees):
            g = g + TWO_PI * d * self.grad(x, a)
        _, _, n = self.surface.tangent_basis(x)
        return np.cross(g, n)

    def _check_exclusion(self, cfg, x):
        for a in cfg.points:
            if np.any(geodesic_dist(self.surface, x, a) < VORTEX_EXCLUSION):
                raise VortexError("evaluation point lies within 1e-6 of a vortex", module="greens")


class TorusGreen(GreenEvaluator):
    """Flat unit torus: Fourier series in x summed in closed form in y."""
    method = "analytic-series"

    def __init__(self, surface: SurfaceModel, tol: float = SERIES_TOL):
        super().__init__(surface)
        self.m = np.arange(1, _series_cutoff(tol) + 1, dtype=np.float64)
        self._weights = 1.0 / np.expm1(TWO_PI * self.m)
        self._robin = (-np.log(TWO_PI) / TWO_PI + 1.0 / 12.0
                       + np.sum(self._weights / self.m) / np.pi)

    @staticmethod
    def _offsets(x, y):
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        d = x[..., :2] - y[..., :2]
        d = d - np.round(d)
        return d[..., 0], d[..., 1]

    @staticmethod
    def _one_minus_q(X, aY):
        """1 - q for q = exp(2pi i X - 2pi |Y|), accurate near q = 1."""
        a, b = -TWO_PI * aY, TWO_PI * X
        re = 2.0 * np.sin(0.5 * b) ** 2 - np.cos(b) * np.expm1(a)
        im = -np.exp(a) * np.sin(b)
        return re + 1j * im

    def green(self, x, y) -> np.ndarray:
        self._check_apart(self.surface.as_points(x), self.surface.as_points(y))
        X, Y = self._offsets(x, y)
        aY = np.abs(Y)
        base = 0.5 * Y ** 2 - 0.5 * aY + 1.0 / 12.0 - np.log(np.abs(self._one_minus_q(X, aY))) / TWO_PI
        mX = TWO_PI * X[..., None] * self.m
        mY = TWO_PI * Y[..., None] * self.m
        series = np.sum(np.cos(mX) * 2.0 * np.cosh(mY) * self._weights / self.m, axis=-1) / TWO_PI
        return base + series

    def grad(self, x, y) -> np.ndarray:
        x = self.surface.as_points(x)
        X, Y = self._offsets(x, y)
        aY = np.abs(Y)
        one_minus_q = self._one_minus_q(X, aY)
        if np.any(np.abs(one_minus_q) < COINCIDENT_TOL):
            raise VortexError("gradient of G requested at its pole", module="greens")
        q_ratio = (1.0 - one_minus_q) / one_minus_q
        mX = TWO_PI * X[..., None] * self.m
        mY = TWO_PI * aY[..., None] * self.m
        gx = -q_ratio.imag - np.sum(2.0 * np.sin(mX) * np.cosh(mY) * self._weights, axis=-1)
        gy = np.sign(Y) * (aY - 0.5 - q_ratio.real + np.sum(2.0 * np.cos(mX) * np.sinh(mY) * self._weights, axis=-1))
        return np.stack([gx, gy, np.zeros_like(gx)], axis=-1)

    def robin(self, x) -> np.ndarray:
        x = self.surface.as_points(x)
        return np.full(x.shape[:-1], self._robin)


class SphereGreen(GreenEvaluator):
    """Round unit sphere: G(x, y) = -(1/4pi) log(1 - x.y) + (log 2 - 1)/4pi."""
    method = "analytic-zonal"
    CONSTANT = (np.log(2.0) - 1.0) / (4.0 * np.pi)
    ROBIN = (2.0 * np.log(2.0) - 1.0) / (4.0 * np.pi)

    @staticmethod
    def zonal(t) -> np.ndarray:
        return -np.log1p(-np.asarray(t, dtype=np.float64)) / (4.0 * np.pi) + SphereGreen.CONSTANT

    @staticmethod
    def _unit(x):
        x = np.asarray(x, dtype=np.float64)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def green(self, x, y) -> np.ndarray:
        x, y = self._unit(self.surface.as_points(x)), self._unit(self.surface.as_points(y))
        self._check_apart(x, y)
        # 1 - x.y = |x - y|^2 / 2 keeps precision for close points
        half_chord2 = 0.5 * np.sum((x - y) ** 2, axis=-1)
        return -np.log(half_chord2) / (4.0 * np.pi) + self.CONSTANT

    def grad(self, x, y) -> np.ndarray:
        x, y = self._unit(self.surface.as_points(x)), self._unit(self.surface.as_points(y))
        half_chord2 = 0.5 * np.sum((x - y) ** 2, axis=-1, keepdims=True)
        if np.any(half_chord2 < COINCIDENT_TOL ** 2):
            raise VortexError("gradient of G requested at its pole", module="greens")
        tangential = y - np.sum(x * y, axis=-1, keepdims=True) * x
        return tangential / (4.0 * np.pi * half_chord2)

    def robin(self, x) -> np.ndarray:
        x = self.surface.as_points(x)
        return np.full(x.shape[:-1], self.ROBIN)


class MeshGreen(GreenEvaluator):
    """Discrete Green's function: unit vertex source minus uniform density, mean-zero.

    The cotangent stiffness matrix is factorized once with the first vertex pinned;
    columns are solved on demand and cached per source vertex.
    """
    method = "numeric"

    def __init__(self, surface: SurfaceModel):
        super().__init__(surface)
        dec = surface.dec
        self._lu = splu(dec.laplacian[1:, 1:].tocsc())
        self._columns: Dict[int, np.ndarray] = {}
        logger.info(f"Factorized cotangent Laplacian of {surface.name} ({len(surface.vertices)} vertices)")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Mean-zero solution of L0 g = rhs for a right-hand side summing to zero."""
        dec = self.surface.dec
        g = np.zeros(len(rhs))
        g[1:] = self._lu.solve(rhs[1:])
        return g - np.dot(dec.star0, g) / np.sum(dec.star0)

    def column(self, v: int) -> np.ndarray:
        v = int(v)
        if v not in self._columns:
            dec = self.surface.dec
            rhs = -dec.star0 / self.surface.total_area
            rhs[v] += 1.0
            self._columns[v] = self.solve(rhs)
        return self._columns[v]

    def green(self, x, y) -> np.ndarray:
        vx = np.atleast_1d(self.surface.nearest_vertex(x))
        vy = np.atleast_1d(self.surface.nearest_vertex(y))
        vx, vy = np.broadcast_arrays(vx, vy)
        if np.any(vx == vy):
            raise VortexError("G(x, x) is singular; use robin_mass for the diagonal", module="greens")
        out = np.array([self.column(b)[a] for a, b in zip(vx.ravel(), vy.ravel())])
        shape = np.broadcast_shapes(np.shape(self.surface.nearest_vertex(x)), np.shape(self.surface.nearest_vertex(y)))
        return out.reshape(shape)

    def robin(self, x) -> np.ndarray:
        vs = np.atleast_1d(self.surface.nearest_vertex(x))
        out = np.array([self._robin_vertex(int(v)) for v in vs])
        return out.reshape(np.shape(self.surface.nearest_vertex(x)))

    def _robin_vertex(self, v: int) -> float:
        g = self.column(v)
        dist = np.linalg.norm(self.surface.vertices - self.surface.vertices[v], axis=1)
        lo, hi = ROBIN_ANNULUS
        ring = (dist >= lo * self.surface.mesh_size) & (dist <= hi * self.surface.mesh_size)
        if not np.any(ring):
            raise VortexError("mesh too coarse for the Robin-mass annulus", module="greens")
        return float(np.mean(g[ring] + np.log(dist[ring]) / TWO_PI))


def green_evaluator(S: SurfaceModel) -> GreenEvaluator:
    cached = S.__dict__.get("_green_evaluator")
    if cached is None:
        if S.kind == FLAT_TORUS:
            cached = TorusGreen(S)
        elif S.kind == UNIT_SPHERE:
            cached = SphereGreen(S)
        else:
            cached = MeshGreen(S)
        S.__dict__["_green_evaluator"] = cached
    return cached


def green_eval(gev: GreenEvaluator, x, y) -> np.ndarray:
    return gev.green(x, y)


def robin_mass(gev: GreenEvaluator, x, method: str = "extrapolate") -> np.ndarray:
    """H(x, x).

    "extrapolate" evaluates G(x, y) + (1/2pi) log dist(x, y) at the distances in
    RICHARDSON_STEPS and eliminates the d^2 and d^4 error terms; "closed" returns the
    series / zonal constant. Meshes always subtract the discrete log kernel.
    """
    S = gev.surface
    if not S.analytic:
        return gev.robin(x)
    if method == "closed":
        return gev.robin(x)
    x = S.project(S.as_points(x))
    t1, _, _ = S.tangent_basis(x)
    vals = []
    for d in RICHARDSON_STEPS:
        y = S.exp_map(x, d * t1)
        vals.append(gev.green(x, y) + np.log(geodesic_dist(S, x, y)) / TWO_PI)
    r1 = [(4.0 * vals[k + 1] - vals[k]) / 3.0 for k in range(len(vals) - 1)]
    return (16.0 * r1[1] - r1[0]) / 15.0


def robin_plus_psi0(gev: GreenEvaluator, x) -> np.ndarray:
    """H(x, x) + psi0(x) / 2pi; constant over a topological sphere whatever the metric."""
    if gev.surface.genus != 0:
        raise ConfigError("robin_plus_psi0 is only defined on genus-0 surfaces", module="greens")
    return robin_mass(gev, x) + gev.psi0_at(x) / TWO_PI


def psi0_field(S: SurfaceModel) -> np.ndarray:
    """Mean-zero vertex solution of -Delta psi0 = -kappa + kappa_bar."""
    if S.analytic:
        return np.zeros(len(S.vertices))
    dec = S.dec
    rhs = -S.frames.vertex_curvature + S.kappa_bar * dec.star0
    lu = splu(dec.laplacian[1:, 1:].tocsc())
    psi0 = np.zeros(len(rhs))
    psi0[1:] = lu.solve(rhs[1:])
    psi0 -= np.dot(dec.star0, psi0) / np.sum(dec.star0)
    residual = dec.laplacian @ psi0 - rhs
    scale = max(1.0, float(np.max(np.abs(rhs))))
    if np.max(np.abs(residual)) > PSI0_TOL * scale:
        raise ConvergenceError("psi0 solve did not reach tolerance", residual=float(np.max(np.abs(residual))),
                               module="greens")
    return psi0


@dataclass(frozen=True, eq=False)
class VortexPotential:
    """psi(a; d): vertex values of *psi and the 1-form d*psi integrated over every edge."""
    psi: np.ndarray
    dstar_psi: np.ndarray
    core_sites: np.ndarray


def core_sites(S: SurfaceModel, cfg) -> np.ndarray:
    """Vertices within the exclusion radius of a vortex; fields vanish there."""
    mask = np.zeros(len(S.vertices), dtype=bool)
    if not S.analytic:
        return mask
    for a in cfg.points:
        mask |= geodesic_dist(S, S.vertices, a) < VORTEX_EXCLUSION
    return mask


def psi_field(gev: GreenEvaluator, cfg) -> VortexPotential:
    S = gev.surface
    cores = core_sites(S, cfg)
    psi = np.full(len(S.vertices), np.nan)
    ok = ~cores
    if S.analytic:
        psi[ok] = gev.psi_value(cfg, S.vertices[ok])
        dstar = _edge_integrals_analytic(gev, cfg, cores)
    else:
        psi = gev.psi0.copy()
        for a, d in zip(cfg.points, cfg.degrees):
            psi += TWO_PI * d * gev.column(int(S.nearest_vertex(a)))
        dstar = _coexact_current_mesh(S, cfg)
    return VortexPotential(psi=psi, dstar_psi=dstar, core_sites=cores)


def vortex_faces(S: SurfaceModel, cfg) -> np.ndarray:
    faces = S.locate_face(np.asarray(cfg.points, dtype=np.float64))
    return np.atleast_1d(faces)


def _coexact_current_mesh(S: SurfaceModel, cfg) -> np.ndarray:
    """Edge values j with d1 j = 2pi sum_k d_k [face of a_k] - K_f and j coexact."""
    dec = S.dec
    rhs = -S.frames.face_curvature.copy()
    np.add.at(rhs, vortex_faces(S, cfg), TWO_PI * np.asarray(cfg.degrees, dtype=np.float64))
    A = (dec.d1 @ sp.diags(1.0 / dec.star1) @ dec.d1.T).tocsc()
    lu = splu(A[1:, 1:].tocsc())
    phi = np.zeros(len(rhs))
    phi[1:] = lu.solve(rhs[1:])
    return (dec.d1.T @ phi) / dec.star1


def _edge_integrals_analytic(gev: GreenEvaluator, cfg, cores: np.ndarray) -> np.ndarray:
    """Integral of d*psi along every edge (geodesic segment), 8-point Gauss-Legendre.

    Within NEAR_SPLIT_RADIUS of a vortex the 1/r part is integrated exactly as an angle increment.
    """
    S = gev.surface
    p = S.vertices[S.edges[:, 0]]
    q = p + S.edge_vectors
    out = np.zeros(len(S.edges))
    skip = cores[S.edges[:, 0]] | cores[S.edges[:, 1]]
    live = ~skip
    p, q = p[live], q[live]
    if S.kind == FLAT_TORUS:
        out[live] = _torus_segment_integrals(gev, cfg, p, q)
    else:
        out[live] = _sphere_arc_integrals(cfg, p, q)
    return out


def _torus_segment_integrals(gev: TorusGreen, cfg, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    dx = q - p
    total = np.zeros(len(p))
    for a, d in zip(cfg.points, cfg.degrees):
        a = gev.surface.as_points(a)
        ap = gev.surface._wrap(p - a)
        aq = ap + dx
        mid = ap + 0.5 * dx
        near = np.hypot(mid[:, 0], mid[:, 1]) < NEAR_SPLIT_RADIUS
        acc = np.zeros(len(p))
        for s, w in zip(_GL_NODES, _GL_WEIGHTS):
            x = p + s * dx
            J = TWO_PI * d * np.cross(gev.grad(x, a), np.array([0.0, 0.0, 1.0]))
            rel = ap + s * dx
            r2 = rel[:, 0] ** 2 + rel[:, 1] ** 2
            sing = d * np.stack([-rel[:, 1], rel[:, 0], np.zeros(len(p))], axis=1) / r2[:, None]
            J = np.where(near[:, None], J - sing, J)
            acc += w * np.sum(J * dx, axis=1)
        angle = np.arctan2(ap[:, 0] * aq[:, 1] - ap[:, 1] * aq[:, 0], ap[:, 0] * aq[:, 0] + ap[:, 1] * aq[:, 1])
        total += acc + np.where(near, d * angle, 0.0)
    return total


def _slerp(p: np.ndarray, q: np.ndarray, s: float):
    omega = np.arctan2(np.linalg.norm(np.cross(p, q), axis=1), np.sum(p * q, axis=1))[:, None]
    so = np.sin(omega)
    x = (np.sin((1 - s) * omega) * p + np.sin(s * omega) * q) / so
    dx = omega * (-np.cos((1 - s) * omega) * p + np.cos(s * omega) * q) / so
    return x, dx


def azimuth_increment(axis: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Signed rotation angle about `axis` taking p to q (projected), in (-pi, pi]."""
    pp = p - np.sum(p * axis, axis=-1, keepdims=True) * axis
    qq = q - np.sum(q * axis, axis=-1, keepdims=True) * axis
    return np.arctan2(np.sum(np.cross(pp, qq) * axis, axis=-1), np.sum(pp * qq, axis=-1))


def _sphere_arc_integrals(cfg, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    total = np.zeros(len(p))
    for a, d in zip(cfg.points, cfg.degrees):
        a = np.asarray(a, dtype=np.float64)
        a = a / np.linalg.norm(a)
        mid = p + q
        north = mid @ a >= 0.0
        acc = np.zeros(len(p))
        for s, w in zip(_GL_NODES, _GL_WEIGHTS):
            x, dx = _slerp(p, q, s)
            t = x @ a
            num = 0.5 * np.sum(np.cross(a, x) * dx, axis=1)
            acc += w * np.where(north, -num / (1.0 + t), num / (1.0 - t))
        total += d * (acc + np.where(north, azimuth_increment(a, p, q), 0.0))
    return total


__all__ = [
    "GreenEvaluator", "TorusGreen", "SphereGreen", "MeshGreen", "VortexPotential",
    "green_evaluator", "green_eval", "robin_mass", "robin_plus_psi0", "psi0_field", "psi_field", "core_sites",
    "vortex_faces", "azimuth_increment",
]
