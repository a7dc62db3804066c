import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from tqdm import tqdm

from vortexlab.canonical import CanonicalField, build_ustar
from vortexlab.errors import ConfigError, GeometryError, VortexError
from vortexlab.geometry import FLAT_TORUS, UNIT_SPHERE, SurfaceModel, geodesic_dist
from vortexlab.greens import GreenEvaluator, green_evaluator, psi_field
from vortexlab.harmonic import HarmonicBasis, VortexConfig, harmonic_basis, lattice

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
CUTOFF_FRACTION = 0.45
CUTOFF_CAP = {FLAT_TORUS: 0.25, UNIT_SPHERE: 1.0}
FAR_GRID = {FLAT_TORUS: (256, 256), UNIT_SPHERE: (192, 384)}
NEAR_PANEL_WIDTH = 0.5
NEAR_ANGLES = 128
GAUSS_POINTS = 8
FD_STEP = 1e-4
POSITION_TOL = 1e-6
ANNIHILATION_DIST = 1e-3
ARMIJO_C = 1e-4
MAX_W_ITER = 500
MAX_THETA_ITER = 10000
THETA_TOL = 1e-6


@dataclass
class RenormReport:
    W_closed: float
    terms: Dict[str, float]
    phi: np.ndarray
    W_quadrature: Dict[float, float] = field(default_factory=dict)
    tildeW: Optional[float] = None
    theta_field: Optional[np.ndarray] = None
    theta_gradient: Optional[float] = None
    zero_flux_admissible: Optional[bool] = None

    def to_dict(self) -> Dict:
        out = {"W_closed": self.W_closed, "terms": dict(self.terms), "phi": [float(x) for x in self.phi],
               "W_quadrature": {f"{r:g}": v for r, v in self.W_quadrature.items()}}
        if self.tildeW is not None:
            out["tildeW"] = self.tildeW
            out["theta_gradient"] = self.theta_gradient
        if self.zero_flux_admissible is not None:
            out["zero_flux_admissible"] = self.zero_flux_admissible
        return out


# ---------------------------------------------------------------- closed form
def W_closed_form(gev: GreenEvaluator, HB: HarmonicBasis, cfg: VortexConfig, phi) -> RenormReport:
    S = gev.surface
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if len(cfg) > 1 and cfg.min_separation(S) < 1e-12:
        raise VortexError("coincident vortices: W diverges to -infinity", module="renorm")
    d = cfg.degrees.astype(np.float64)
    pairs = 0.0
    for l in range(len(cfg)):
        for k in range(l + 1, len(cfg)):
            pairs += d[l] * d[k] * float(gev.green(cfg.points[l], cfg.points[k]))
    robin = gev.robin(cfg.points)
    psi0 = gev.psi0_at(cfg.points)
    terms = {
        "green_pairs": 4.0 * np.pi ** 2 * pairs,
        "robin": TWO_PI * float(np.sum(np.pi * d ** 2 * robin)),
        "psi0_vortex": TWO_PI * float(np.sum(d * psi0)),
        "flux_sq": 0.5 * float(np.dot(phi, phi)),
        "psi0_dirichlet": _psi0_dirichlet(gev),
    }
    return RenormReport(W_closed=float(sum(terms.values())), terms=terms, phi=phi)


def _psi0_dirichlet(gev: GreenEvaluator) -> float:
    S = gev.surface
    if S.analytic:
        return 0.0
    psi0 = gev.psi0
    return 0.5 * float(psi0 @ (S.dec.laplacian @ psi0))


def psi0_pair_energy(gev: GreenEvaluator, a1, a2) -> float:
    """4pi G(a1, a2) + psi0(a1) + psi0(a2): the position-dependent part of W for degrees (1, 1)."""
    return float(4.0 * np.pi * gev.green(a1, a2) + gev.psi0_at(a1) + gev.psi0_at(a2))


# ---------------------------------------------------------------- quadrature
def _bump(s):
    s = np.asarray(s, dtype=np.float64)
    return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)


def smooth_cutoff(rho, R: float) -> np.ndarray:
    """1 on [0, R/2], 0 beyond R, smooth in between."""
    t = np.clip((np.asarray(rho) - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    a, b = _bump(1.0 - t), _bump(t)
    return a / (a + b)


def _cutoff_radii(S: SurfaceModel, cfg: VortexConfig) -> np.ndarray:
    cap = CUTOFF_CAP[S.kind]
    radii = np.full(len(cfg), cap)
    for k in range(len(cfg)):
        others = np.delete(cfg.points, k, axis=0)
        if len(others):
            radii[k] = min(cap, CUTOFF_FRACTION * float(np.min(geodesic_dist(S, cfg.points[k][None, :], others))))
    return radii


def _current_density(gev: GreenEvaluator, cfg: VortexConfig, phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pointwise |j*|^2 on an analytic surface."""
    J = gev.dstar_psi(cfg, x)
    if len(phi):
        J = J + phi[0] * np.array([1.0, 0.0, 0.0]) + phi[1] * np.array([0.0, 1.0, 0.0])
    return np.sum(J ** 2, axis=-1)


def _far_nodes(S: SurfaceModel):
    n1, n2 = FAR_GRID[S.kind]
    if S.kind == FLAT_TORUS:
        g = np.arange(n1) / n1
        X, Y = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
        return pts, np.full(len(pts), 1.0 / n1 ** 2)
    t, wt = np.polynomial.legendre.leggauss(n1)
    ph = TWO_PI * np.arange(n2) / n2
    T, P = np.meshgrid(t, ph, indexing="ij")
    st = np.sqrt(1.0 - T ** 2)
    pts = np.stack([st * np.cos(P), st * np.sin(P), T], axis=-1).reshape(-1, 3)
    return pts, (wt[:, None] * np.full(n2, TWO_PI / n2)[None, :]).ravel()


def _near_integral(gev, cfg, phi, a, R, r, weight_fn: Callable) -> float:
    S = gev.surface
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    total = 0.0
    for lo, hi in ((r, 0.5 * R), (0.5 * R, R)):
        if hi <= lo:
            continue
        span = np.log(hi) - np.log(lo)
        panels = max(1, int(np.ceil(span / NEAR_PANEL_WIDTH)))
        edges = np.linspace(np.log(lo), np.log(hi), panels + 1)
        s = (edges[:-1, None] + 0.5 * (nodes[None, :] + 1.0) * np.diff(edges)[:, None]).ravel()
        ws = (0.5 * weights[None, :] * np.diff(edges)[:, None]).ravel()
        rho = np.exp(s)
        theta = TWO_PI * np.arange(NEAR_ANGLES) / NEAR_ANGLES
        t1, t2, _ = S.tangent_basis(a)
        dirs = np.cos(theta)[:, None] * t1 + np.sin(theta)[:, None] * t2
        jac = rho if S.kind == FLAT_TORUS else np.sin(rho)
        for rk, wk, jk in zip(rho, ws, jac):
            x = S.exp_map(np.broadcast_to(a, dirs.shape), rk * dirs)
            f = 0.5 * _current_density(gev, cfg, phi, x) * weight_fn(rk)
            total += wk * rk * jk * np.sum(f) * (TWO_PI / NEAR_ANGLES)
    return total


def W_quadrature(gev: GreenEvaluator, HB: HarmonicBasis, cfg: VortexConfig, phi, r: float) -> float:
    """Integral of |j*|^2 / 2 over S minus the r-balls, plus pi log r sum d_k^2."""
    S = gev.surface
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if r <= 0:
        raise ConfigError("quadrature radius must be positive", module="renorm")
    if len(cfg) > 1 and np.sqrt(r) > cfg.min_separation(S):
        raise ConfigError(f"sqrt(r) = {np.sqrt(r):.3g} exceeds the vortex separation", module="renorm")
    renorm_term = np.pi * np.log(r) * float(np.sum(cfg.degrees.astype(np.float64) ** 2))
    if not S.analytic:
        return _mesh_quadrature(gev, HB, cfg, phi, r) + renorm_term

    radii = _cutoff_radii(S, cfg)
    if np.any(r >= 0.5 * radii):
        raise ConfigError(f"radius {r} too large for the near-field split", module="renorm")
    pts, w = _far_nodes(S)
    chi = np.zeros(len(pts))
    for a, R in zip(cfg.points, radii):
        chi += smooth_cutoff(geodesic_dist(S, a[None, :], pts), R)
    live = chi < 1.0
    far = 0.5 * float(np.sum(w[live] * (1.0 - chi[live]) * _current_density(gev, cfg, phi, pts[live])))
    near = 0.0
    for a, R in zip(cfg.points, radii):
        near += _near_integral(gev, cfg, phi, a, R, r, lambda rho, R=R: smooth_cutoff(rho, R))
    return far + near + renorm_term


def _mesh_quadrature(gev, HB, cfg, phi, r) -> float:
    S = gev.surface
    j = psi_field(gev, cfg).dstar_psi + (phi @ HB.forms if HB.dim else 0.0)
    centers = S.face_centers
    outside = np.ones(len(S.faces), dtype=bool)
    for a in cfg.points:
        outside &= geodesic_dist(S, a[None, :], centers) > r
    he = S.halfedge_vectors
    vals = S.face_signs * j[S.face_edges]
    total = 0.0
    for f in np.flatnonzero(outside):
        vec, *_ = np.linalg.lstsq(he[f], vals[f], rcond=None)
        total += 0.5 * S.face_areas[f] * float(vec @ vec)
    return total


# ---------------------------------------------------------------- minimization
@dataclass
class MinimizeResult:
    cfg: VortexConfig
    phi: np.ndarray
    W: float
    status: str
    iterations: int
    history: List[float] = field(default_factory=list)


def _diameter(S: SurfaceModel) -> float:
    if S.kind == FLAT_TORUS:
        return 1.0
    if S.kind == UNIT_SPHERE:
        return np.pi
    return float(np.linalg.norm(S.vertices.max(axis=0) - S.vertices.min(axis=0)))


def optimal_flux(HB: HarmonicBasis, gev: GreenEvaluator, cfg: VortexConfig) -> np.ndarray:
    if HB.dim == 0:
        return np.zeros(0)
    return lattice(HB, gev, cfg).nearest_point(np.zeros(HB.dim))


def _objective(gev, HB, extrinsic: bool) -> Callable[[VortexConfig], float]:
    def evaluate(cfg: VortexConfig) -> float:
        phi = optimal_flux(HB, gev, cfg)
        value = W_closed_form(gev, HB, cfg, phi).W_closed
        if extrinsic:
            value += theta_minimize(gev.surface, build_ustar(gev, HB, cfg, phi))["tildeW"]
        return value
    return evaluate


def _annihilating(S: SurfaceModel, cfg: VortexConfig) -> bool:
    for l in range(len(cfg)):
        for k in range(l + 1, len(cfg)):
            if cfg.degrees[l] * cfg.degrees[k] < 0 and geodesic_dist(S, cfg.points[l], cfg.points[k]) < ANNIHILATION_DIST:
                return True
    return False


def minimize_W(S: SurfaceModel, init: VortexConfig, max_iter: int = MAX_W_ITER, extrinsic: bool = False,
               gev: Optional[GreenEvaluator] = None, HB: Optional[HarmonicBasis] = None) -> MinimizeResult:
    """Local minimizer of W over vortex positions, with the flux set to the lattice point nearest 0."""
    if int(np.sum(init.degrees)) != S.euler_char:
        raise ConfigError(f"sum of degrees must equal chi(S) = {S.euler_char}", module="renorm")
    gev = gev or green_evaluator(S)
    HB = HB or harmonic_basis(S, audit=False)
    objective = _objective(gev, HB, extrinsic)
    if not S.analytic:
        return _vertex_search(S, init, objective, max_iter, gev, HB)

    h = FD_STEP * _diameter(S)
    cfg = init
    value = objective(cfg)
    history = [value]
    tau = 0.1 * _diameter(S)
    status = "max_iter"
    pbar = tqdm(range(max_iter), desc="minimize W", leave=False)
    it = 0
    for it in pbar:
        if _annihilating(S, cfg):
            status = "annihilation"
            break
        grad = _fd_gradient(S, cfg, objective, h)
        gnorm = float(np.sqrt(np.sum(grad ** 2)))
        if gnorm == 0.0:
            status = "converged"
            break
        step = tau / gnorm
        while True:
            trial = cfg.moved(S, S.exp_map(cfg.points, -step * grad))
            try:
                trial_value = objective(trial)
            except VortexError:
                trial_value = np.inf
            if trial_value <= value - ARMIJO_C * step * gnorm ** 2 or step * gnorm < POSITION_TOL:
                break
            step *= 0.5
        moved = step * gnorm
        if trial_value > value:
            status = "converged"
            break
        cfg, value = trial, trial_value
        history.append(value)
        tau = min(2.0 * moved, 0.1 * _diameter(S))
        pbar.set_postfix({"W": f"{value:.8f}", "step": f"{moved:.2e}"})
        if moved < POSITION_TOL:
            status = "converged"
            break
    pbar.close()
    if status == "annihilation":
        logger.warning("opposite-degree vortices collapse: annihilation direction, no interior minimum")
    phi = optimal_flux(HB, gev, cfg)
    logger.info(f"minimize_W finished ({status}) after {it + 1} iterations, W = {value:.10f}")
    return MinimizeResult(cfg=cfg, phi=phi, W=value, status=status, iterations=it + 1, history=history)


def _fd_gradient(S: SurfaceModel, cfg: VortexConfig, objective, h: float) -> np.ndarray:
    """Central differences in exponential coordinates; returns ambient tangent vectors per vortex."""
    grad = np.zeros_like(cfg.points)
    t1, t2, _ = S.tangent_basis(cfg.points)
    for k in range(len(cfg)):
        for t in (t1[k], t2[k]):
            vals = []
            for sgn in (1.0, -1.0):
                pts = cfg.points.copy()
                pts[k] = S.exp_map(pts[k], sgn * h * t)
                vals.append(objective(cfg.moved(S, pts)))
            grad[k] += (vals[0] - vals[1]) / (2.0 * h) * t
    return grad


def _vertex_search(S, init, objective, max_iter, gev, HB) -> MinimizeResult:
    faces = [int(f) for f in S.locate_face(init.points)]
    cfg = VortexConfig(points=S.face_centers[faces], degrees=init.degrees)
    value = objective(cfg)
    history = [value]
    adjacency = S.face_adjacency
    status = "max_iter"
    it = 0
    for it in tqdm(range(max_iter), desc="minimize W (faces)", leave=False):
        best = (value, None, None)
        for k, f in enumerate(faces):
            for g in adjacency[f].indices:
                if int(g) in faces:
                    continue
                trial_faces = list(faces)
                trial_faces[k] = int(g)
                trial = VortexConfig(points=S.face_centers[trial_faces], degrees=cfg.degrees)
                try:
                    v = objective(trial)
                except VortexError:
                    continue
                if v < best[0]:
                    best = (v, trial_faces, trial)
        if best[1] is None:
            status = "converged"
            break
        value, faces, cfg = best
        history.append(value)
        if _annihilating(S, cfg):
            status = "annihilation"
            break
    return MinimizeResult(cfg=cfg, phi=optimal_flux(HB, gev, cfg), W=value, status=status,
                          iterations=it + 1, history=history)


# ---------------------------------------------------------------- extrinsic
def shape_operator_field(S: SurfaceModel) -> np.ndarray:
    """(V, 2, 2) shape operators in the vertex frames (t1, t2)."""
    cached = S.__dict__.get("_shape_operators")
    if cached is not None:
        return cached
    if not S.embedded:
        raise GeometryError("shape operator needs an embedded surface", module="renorm")
    V = len(S.vertices)
    if S.kind == UNIT_SPHERE:
        out = np.tile(-np.eye(2), (V, 1, 1))
    else:
        A = (S.vertex_adjacency > 0).astype(np.float64)
        ring2 = (A + A @ A).tocsr()
        out = np.zeros((V, 2, 2))
        fr = S.frames
        for v in range(V):
            nb = ring2[v].indices
            nb = nb[nb != v]
            p = S.vertices[nb] - S.vertices[v]
            u, w, h = p @ fr.t1[v], p @ fr.t2[v], p @ fr.normals[v]
            design = np.stack([u * u, u * w, w * w, u, w], axis=1)
            (a, b, c, _, _), *_ = np.linalg.lstsq(design, h, rcond=None)
            out[v] = [[2.0 * a, b], [b, 2.0 * c]]
    S.__dict__["_shape_operators"] = out
    return out


def shape_operator(S: SurfaceModel, x, v) -> np.ndarray:
    """S(v) = -D_v N as an ambient tangent vector at x."""
    if not S.embedded:
        raise GeometryError("shape operator needs an embedded surface", module="renorm")
    x, v = S.as_points(x), np.asarray(v, dtype=np.float64)
    if S.kind == UNIT_SPHERE:
        n = x / np.linalg.norm(x, axis=-1, keepdims=True)
        return -(v - np.sum(v * n, axis=-1, keepdims=True) * n)
    ops = shape_operator_field(S)
    k = S.nearest_vertex(x)
    t1, t2 = S.frames.t1[k], S.frames.t2[k]
    comps = np.stack([np.sum(v * t1, axis=-1), np.sum(v * t2, axis=-1)], axis=-1)
    out = np.einsum("...ij,...j->...i", ops[k], comps)
    return out[..., :1] * t1 + out[..., 1:] * t2


def _theta_terms(ops: np.ndarray, u: np.ndarray, core: np.ndarray, theta: np.ndarray):
    w = np.exp(1j * theta) * u
    wv = np.stack([w.real, w.imag], axis=1)
    iw = np.stack([-w.imag, w.real], axis=1)
    Sw = np.einsum("vij,vj->vi", ops, wv)
    Siw = np.einsum("vij,vj->vi", ops, iw)
    core_density = 0.5 * np.einsum("vij,vij->v", ops, ops)
    density = np.where(core, core_density, np.sum(Sw ** 2, axis=1))
    cross = np.where(core, 0.0, np.sum(Sw * Siw, axis=1))
    return density, cross


def theta_residual(S: SurfaceModel, cf: CanonicalField, theta: np.ndarray) -> np.ndarray:
    """-Delta Theta + cos 2Theta (Su, Siu) + sin 2Theta (|Siu|^2 - |Su|^2) / 2 at every vertex."""
    ops = shape_operator_field(S)
    u = cf.field
    uv = np.stack([u.real, u.imag], axis=1)
    iu = np.stack([-u.imag, u.real], axis=1)
    Su, Siu = np.einsum("vij,vj->vi", ops, uv), np.einsum("vij,vj->vi", ops, iu)
    lap = (S.dec.laplacian @ theta) / S.dec.star0
    nonlinear = (np.cos(2 * theta) * np.sum(Su * Siu, axis=1)
                 + 0.5 * np.sin(2 * theta) * (np.sum(Siu ** 2, axis=1) - np.sum(Su ** 2, axis=1)))
    return lap + np.where(cf.core_sites, 0.0, nonlinear)


def theta_minimize(S: SurfaceModel, cf: CanonicalField, theta0=None, max_iter: int = MAX_THETA_ITER,
                   tol: float = THETA_TOL) -> Dict:
    """Minimize 1/2 |dTheta|^2 + 1/2 |S(e^{iTheta} u*)|^2 by preconditioned gradient descent."""
    ops = shape_operator_field(S)
    dec = S.dec
    L0, star0 = dec.laplacian, dec.star0
    u = cf.field
    core = cf.core_sites | (np.abs(u) == 0)
    theta = np.zeros(len(u)) if theta0 is None else np.array(theta0, dtype=np.float64)
    lipschitz = 2.0 * float(np.max(np.einsum("vij,vij->v", ops, ops)))
    pre = splu((L0 + lipschitz * sp.diags(star0)).tocsc())
    scale = max(1.0, lipschitz)

    def energy(th):
        density, _ = _theta_terms(ops, u, core, th)
        return 0.5 * float(th @ (L0 @ th)) + 0.5 * float(np.sum(star0 * density))

    def gradient(th):
        _, cross = _theta_terms(ops, u, core, th)
        return L0 @ th + star0 * cross

    value = energy(theta)
    residual = np.inf
    converged = False
    pbar = tqdm(range(max_iter), desc="theta", leave=False)
    it = 0
    for it in pbar:
        g = gradient(theta)
        residual = float(np.sqrt(np.sum(g ** 2 / star0)))
        if residual < tol * scale:
            converged = True
            break
        direction = -pre.solve(g)
        slope = float(g @ direction)
        step = 1.0
        while step > 1e-12:
            trial = theta + step * direction
            trial_value = energy(trial)
            if trial_value <= value + ARMIJO_C * step * slope:
                break
            step *= 0.5
        theta, value = trial, trial_value
        pbar.set_postfix({"tildeW": f"{value:.10f}", "res": f"{residual:.2e}"})
    pbar.close()
    if not converged:
        logger.warning(f"theta_minimize stopped after {it + 1} iterations with residual {residual:.3e}")
    # L2 norm of dTheta, zero exactly when the minimizing Theta is constant
    theta_gradient = float(np.sqrt(max(float(theta @ (L0 @ theta)), 0.0)))
    return {"theta": theta, "tildeW": value, "residual": residual, "theta_gradient": theta_gradient,
            "converged": converged, "iterations": it + 1}


# ---------------------------------------------------------------- report
def renorm_report(S: SurfaceModel, cfg: VortexConfig, phi=None, radii: Sequence[float] = (),
                  extrinsic: bool = False) -> RenormReport:
    gev = green_evaluator(S)
    HB = harmonic_basis(S, audit=False)
    if phi is None:
        phi = optimal_flux(HB, gev, cfg)
    report = W_closed_form(gev, HB, cfg, phi)
    for r in radii:
        report.W_quadrature[float(r)] = W_quadrature(gev, HB, cfg, phi, float(r))
    if HB.dim:
        report.zero_flux_admissible = lattice(HB, gev, cfg).contains(np.zeros(HB.dim))
    if extrinsic:
        res = theta_minimize(S, build_ustar(gev, HB, cfg, phi))
        report.tildeW, report.theta_field = res["tildeW"], res["theta"]
        report.theta_gradient = res["theta_gradient"]
    return report
