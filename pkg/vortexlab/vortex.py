import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.csgraph import connected_components
from tqdm import tqdm

from vortexlab.errors import ConfigError, VortexError
from vortexlab.geometry import SurfaceModel, geodesic_dist, wrap_angle
from vortexlab.greens import green_evaluator, psi_field
from vortexlab.harmonic import HarmonicBasis, VortexConfig

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
CONTOUR_MODULUS = 0.25
DEGREE_DEFECT_TOL = 0.2
ZERO_SET_LEVEL = 0.5
GROWTH_FACTOR = 1.01
C2 = 0.25
FLOOR_CONSTANT = 5.0


# ---------------------------------------------------------------- currents
def current(S: SurfaceModel, u: np.ndarray) -> np.ndarray:
    """j(u) = (Du, iu) integrated over each edge: Im(conj(u_i) u_j e^{-i rho})."""
    u = np.asarray(u, dtype=np.complex128)
    return np.imag(np.conj(u[S.edges[:, 0]]) * u[S.edges[:, 1]] * np.exp(-1j * S.frames.rho))


def phase_current(S: SurfaceModel, u: np.ndarray) -> np.ndarray:
    """Transported phase difference along each edge, in (-pi, pi]; zero where u vanishes."""
    u = np.asarray(u, dtype=np.complex128)
    w = np.conj(u[S.edges[:, 0]]) * u[S.edges[:, 1]] * np.exp(-1j * S.frames.rho)
    return np.where(np.abs(w) > 0, wrap_angle(np.angle(w)), 0.0)


def vorticity(S: SurfaceModel, u: np.ndarray, mode: str = "phase") -> np.ndarray:
    """Per-face dj + K_f.

    mode="phase" uses wrapped phase differences, so every face value lies in 2pi Z;
    mode="current" uses the bilinear current j(u).
    """
    if mode == "phase":
        j = phase_current(S, u)
    elif mode == "current":
        j = current(S, u)
    else:
        raise ConfigError(f"unknown vorticity mode {mode!r}", module="vortex")
    return S.dec.d1 @ j + S.frames.face_curvature


def renormalize(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    return u / np.maximum(np.abs(u), ZERO_SET_LEVEL)


# ---------------------------------------------------------------- degrees
def _boundary(S: SurfaceModel, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ef = S.edge_faces
    in0, in1 = mask[ef[:, 0]], mask[ef[:, 1]]
    edges = np.flatnonzero(in0 ^ in1)
    inner = np.where(in0[edges], ef[edges, 0], ef[edges, 1])
    k = np.argmax(S.face_edges[inner] == edges[:, None], axis=1)
    return edges, S.face_signs[inner, k]


def region_degree(S: SurfaceModel, u: np.ndarray, mask: np.ndarray) -> Tuple[int, float]:
    """Degree of u around the boundary of a face region, and the pre-rounding defect."""
    mask = np.asarray(mask, dtype=bool)
    u = np.asarray(u, dtype=np.complex128)
    edges, signs = _boundary(S, mask)
    if len(edges):
        ends = np.unique(S.edges[edges])
        if np.min(np.abs(u[ends])) < CONTOUR_MODULUS:
            raise VortexError(f"|u| = {float(np.min(np.abs(u[ends]))):.3g} on the contour is below "
                              f"{CONTOUR_MODULUS}", module="vortex")
    delta = phase_current(S, u)[edges]
    enclosed = float(np.sum(S.frames.face_curvature[mask]))
    exact = (float(np.sum(signs * delta)) + enclosed) / TWO_PI
    raw = (float(np.sum(signs * np.sin(delta))) + enclosed) / TWO_PI
    d = int(np.round(exact))
    defect = abs(raw - d)
    if defect >= DEGREE_DEFECT_TOL:
        raise VortexError(f"degree defect {defect:.3f}: contour too close to a core", module="vortex",
                          details={"defect": defect})
    return d, defect


def contour_region(S: SurfaceModel, contour: Sequence[int]) -> np.ndarray:
    """Faces to the left of a closed counterclockwise vertex contour."""
    contour = [int(v) for v in contour]
    if contour[0] != contour[-1]:
        contour.append(contour[0])
    ids, _ = S.edge_ids(contour)
    a, b = contour[0], contour[1]
    left = -1
    for f in S.edge_faces[ids[0]]:
        cyc = [int(x) for x in S.faces[f]]
        k = cyc.index(a)
        if cyc[(k + 1) % 3] == b:
            left = int(f)
    if left < 0:
        raise VortexError("contour edge has no face on its left", module="vortex")
    cut = np.zeros(len(S.edges), dtype=bool)
    cut[ids] = True
    ef = S.edge_faces[~cut]
    F = len(S.faces)
    A = sp.coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])), shape=(F, F)).tocsr()
    _, labels = connected_components(A, directed=False)
    return labels == labels[left]


def degree(S: SurfaceModel, u: np.ndarray, contour: Sequence[int]) -> int:
    d, defect = region_degree(S, u, contour_region(S, contour))
    logger.debug(f"contour degree {d} (defect {defect:.2e})")
    return d


def disk_region(S: SurfaceModel, center, radius: float) -> np.ndarray:
    center = S.as_points(center)
    return geodesic_dist(S, center[None, :], S.face_centers) < radius


# ---------------------------------------------------------------- fluxes
def flux_integrals(S: SurfaceModel, u: np.ndarray, HB: HarmonicBasis,
                   cfg: Optional[VortexConfig] = None) -> np.ndarray:
    """Phi(u)_k = <j(u), eta_k> in the star1 inner product.

    The current is |u_i||u_j| times the transported phase difference. Passing the
    vortex configuration removes its coexact part d*psi before projecting.
    """
    if HB.dim == 0:
        return np.zeros(0)
    u = np.asarray(u, dtype=np.complex128)
    mod = np.abs(u)
    j = mod[S.edges[:, 0]] * mod[S.edges[:, 1]] * phase_current(S, u)
    if cfg is not None:
        j = j - psi_field(green_evaluator(S), cfg).dstar_psi
    return HB.forms @ (S.dec.star1 * j)


# ---------------------------------------------------------------- balls
@dataclass
class Ball:
    center: np.ndarray
    radius: float
    degree: int

    def to_dict(self) -> Dict:
        return {"center": [float(x) for x in self.center], "radius": float(self.radius), "degree": int(self.degree)}


@dataclass
class BallSet:
    balls: List[Ball]
    sigma: float
    epsilon: float
    trace: List[Dict] = field(default_factory=list)
    diagnostics: Dict = field(default_factory=dict)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([b.degree for b in self.balls], dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.balls]).reshape(-1, 3)

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])

    def as_config(self) -> VortexConfig:
        keep = self.degrees != 0
        return VortexConfig(points=self.centers[keep], degrees=self.degrees[keep])

    def to_dict(self) -> Dict:
        return {"balls": [b.to_dict() for b in self.balls], "sigma": self.sigma, "epsilon": self.epsilon}


def vertex_energy(S: SurfaceModel, u: np.ndarray, eps: float,
                  potential: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """GL energy lumped to vertices: half of every edge term to each endpoint, plus star0 F/(4 eps^2)."""
    u = np.asarray(u, dtype=np.complex128)
    F = potential or (lambda s: (1.0 - s) ** 2)
    diff = u[S.edges[:, 1]] * np.exp(-1j * S.frames.rho) - u[S.edges[:, 0]]
    edge = 0.5 * S.dec.star1 * np.abs(diff) ** 2
    out = S.dec.star0 * F(np.abs(u) ** 2) / (4.0 * eps ** 2)
    np.add.at(out, S.edges[:, 0], 0.5 * edge)
    np.add.at(out, S.edges[:, 1], 0.5 * edge)
    return out


def _merge(S: SurfaceModel, b1: Ball, b2: Ball) -> Ball:
    D = float(geodesic_dist(S, b1.center, b2.center))
    deg = b1.degree + b2.degree
    if D + b2.radius <= b1.radius:
        return Ball(b1.center, b1.radius, deg)
    if D + b1.radius <= b2.radius:
        return Ball(b2.center, b2.radius, deg)
    R = 0.5 * (D + b1.radius + b2.radius)
    t = (R - b1.radius) / D
    return Ball(np.asarray(S.geodesic_point(b1.center, b2.center, t)).reshape(3), R, deg)


def _merge_overlapping(S: SurfaceModel, balls: List[Ball]) -> List[Ball]:
    balls = list(balls)
    merged = True
    while merged:
        merged = False
        for p in range(len(balls)):
            for q in range(p + 1, len(balls)):
                if geodesic_dist(S, balls[p].center, balls[q].center) <= balls[p].radius + balls[q].radius:
                    new = _merge(S, balls[p], balls[q])
                    balls = [b for k, b in enumerate(balls) if k not in (p, q)] + [new]
                    merged = True
                    break
            if merged:
                break
    return balls


def _seed_balls(S: SurfaceModel, u: np.ndarray, eps: float) -> List[Ball]:
    mod = np.abs(u)
    zfaces = mod[S.faces].min(axis=1) <= ZERO_SET_LEVEL
    if not np.any(zfaces):
        return []
    zidx = np.flatnonzero(zfaces)
    _, labels = connected_components(S.face_adjacency[zfaces][:, zfaces], directed=False)
    seeds = []
    for c in np.unique(labels):
        faces_c = zidx[labels == c]
        verts = np.unique(S.faces[faces_c])
        center = S.vertices[verts[np.argmin(mod[verts])]]
        radius = max(eps, float(np.max(geodesic_dist(S, center[None, :], S.vertices[verts]))))
        mask = np.zeros(len(S.faces), dtype=bool)
        mask[faces_c] = True
        d, _ = region_degree(S, u, mask)
        seeds.append(Ball(center.copy(), radius, d))
    return seeds


def ball_construction(S: SurfaceModel, u: np.ndarray, eps: float, sigma: float, budget: Optional[int] = None,
                      potential=None, floor_constant: float = FLOOR_CONSTANT, record_trace: bool = False) -> BallSet:
    if not 0.0 < eps < sigma:
        raise ConfigError(f"need 0 < epsilon < sigma, got epsilon={eps}, sigma={sigma}", module="vortex")
    u = np.asarray(u, dtype=np.complex128)
    seeds = _seed_balls(S, u, eps)
    active = [b for b in seeds if b.degree != 0]
    neutral = [b for b in seeds if b.degree == 0]
    n_seed = int(sum(abs(b.degree) for b in active))
    n = n_seed if budget is None else int(budget)
    if n_seed > n:
        logger.warning(f"seed degrees sum to {n_seed} in absolute value, above the budget {n}")

    trace = []
    s = min([b.radius / abs(b.degree) for b in active] + [sigma])
    steps = int(np.ceil(np.log(sigma / s) / np.log(GROWTH_FACTOR))) + 1 if s < sigma else 1
    pbar = tqdm(total=steps, desc="ball growth", disable=steps < 50, leave=False)
    while True:
        for b in active:
            if b.degree != 0:
                b.radius = max(b.radius, s * abs(b.degree))
        active = _merge_overlapping(S, active)
        if record_trace:
            trace.append({"sigma": s, "balls": len(active), "radius_sum": float(sum(b.radius for b in active))})
        pbar.update(1)
        pbar.set_postfix({"sigma": f"{s:.3g}", "balls": len(active)})
        if s >= sigma:
            break
        s = min(sigma, s * GROWTH_FACTOR)
    pbar.close()
    balls = _merge_overlapping(S, active + neutral)

    result = BallSet(balls=balls, sigma=sigma, epsilon=eps, trace=trace)
    result.diagnostics = _ball_diagnostics(S, u, result, n, potential, floor_constant)
    return result


def _ball_diagnostics(S, u, bs: BallSet, n: int, potential, floor_constant: float) -> Dict:
    diag = {"budget": n, "radius_sum": float(np.sum(bs.radii)), "radius_bound": (n + 1) * bs.sigma}
    diag["radius_sum_ok"] = diag["radius_sum"] <= diag["radius_bound"] * (1 + 1e-12)
    if not diag["radius_sum_ok"]:
        logger.warning(f"sum of radii {diag['radius_sum']:.4g} exceeds (n+1) sigma = {diag['radius_bound']:.4g}")
    low = np.abs(u) <= ZERO_SET_LEVEL
    covered = np.zeros(len(u), dtype=bool)
    e_vertex = vertex_energy(S, u, bs.epsilon, potential)
    floors = []
    for b in bs.balls:
        inside = geodesic_dist(S, b.center[None, :], S.vertices) <= b.radius + 1e-12
        covered |= inside
        if b.degree:
            energy = float(np.sum(e_vertex[inside]))
            implied = np.pi * np.log(bs.sigma / bs.epsilon) - energy / abs(b.degree)
            floors.append({"degree": b.degree, "energy": energy, "implied_constant": float(implied)})
            if implied > floor_constant:
                logger.warning(f"ball energy {energy:.4g} below the floor |d|(pi log(sigma/eps) - {floor_constant})")
    diag["covered"] = bool(np.all(covered[low]))
    diag["energy_floor"] = floors
    disjoint = True
    for p in range(len(bs.balls)):
        for q in range(p + 1, len(bs.balls)):
            gap = geodesic_dist(S, bs.balls[p].center, bs.balls[q].center)
            disjoint &= bool(gap > bs.balls[p].radius + bs.balls[q].radius)
    diag["disjoint"] = disjoint
    return diag


# ---------------------------------------------------------------- lambda
def curvature_bound(S: SurfaceModel) -> float:
    return float(np.max(np.abs(S.frames.vertex_curvature / S.dec.star0)))


def lambda_eps(r, eps: float, c2: float = C2, c3: float = 0.0) -> np.ndarray:
    """min over 0 < s <= 1 of c2/(4 eps) (1-s)^2 + s^2 pi/r (1 - c3 r^2)."""
    r = np.asarray(r, dtype=np.float64)
    A = c2 / (4.0 * eps)
    B = np.pi / r * (1.0 - c3 * r ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = A * B / (A + B)
    return np.where(B > 0, inner, B)


def lambda_lower_bound(r, eps: float, c2: float = C2, c3: float = 0.0) -> np.ndarray:
    c4 = 4.0 * np.pi / c2
    r = np.asarray(r, dtype=np.float64)
    return np.pi * (1.0 - c3 * r ** 2) / (r + c4 * eps)


def Lambda_eps(sigma: float, eps: float, c2: float = C2, c3: float = 0.0) -> float:
    value, _ = quad(lambda r: float(lambda_eps(r, eps, c2, c3)), 0.0, sigma, points=[eps], limit=200)
    return value


def Lambda_log_bound(sigma: float, eps: float, c2: float = C2, c3: float = 0.0) -> float:
    """pi log(1 + sigma/(c4 eps)) - (pi c3 / 2) sigma^2, a lower bound for Lambda_eps."""
    c4 = 4.0 * np.pi / c2
    return float(np.pi * np.log1p(sigma / (c4 * eps)) - 0.5 * np.pi * c3 * sigma ** 2)


def best_constant(eps: float, sigmas: Sequence[float], c2: float = C2, c3: float = 0.0) -> float:
    """Smallest C with Lambda_eps(sigma) >= pi (log(sigma/eps) - C) on the grid."""
    return float(max(np.log(s / eps) - Lambda_eps(s, eps, c2, c3) / np.pi for s in sigmas))
