import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy.linalg import LinAlgError, solveh_banded
from tqdm import tqdm

from vortexlab.errors import ConfigError, ConvergenceError, GeometryError
from vortexlab.geometry import SurfaceModel
from vortexlab.greens import green_evaluator
from vortexlab.harmonic import HarmonicBasis, harmonic_basis, lattice
from vortexlab.renorm import W_closed_form, shape_operator_field, theta_minimize
from vortexlab.canonical import build_ustar
from vortexlab.vortex import ball_construction, flux_integrals

logger = logging.getLogger(__name__)

FLOW_STEPS = 200
LBFGS_OUTER = 500
LBFGS_INNER = 20
GRAD_TOL = 1e-6
CONSTRAINT_TOL = 1e-8
PROFILE_POINTS = 2000
PROFILE_RMIN = 1e-6
PROFILE_TOL = 1e-10
PROFILE_MAX_ITER = 200
ENERGY_KINDS = ("intrinsic", "extrinsic", "micromagnetic")


# ---------------------------------------------------------------- potentials
@dataclass(frozen=True)
class Potential:
    """F with F(1) = 0; callables accept numpy arrays and torch tensors."""
    name: str
    F: Callable
    dF: Callable
    d2F: Callable

    def growth_constant(self, grid: Optional[np.ndarray] = None) -> float:
        """Largest C with F(s^2) >= C (1 - s)^2 on the grid."""
        s = np.linspace(0.0, 2.0, 2001) if grid is None else np.asarray(grid, dtype=np.float64)
        s = s[np.abs(1.0 - s) > 1e-9]
        return float(np.min(self.F(s ** 2) / (1.0 - s) ** 2))


POTENTIALS = {
    "gl": Potential("gl", lambda s: (1.0 - s) ** 2, lambda s: -2.0 * (1.0 - s), lambda s: 2.0 + 0.0 * s),
    "mm": Potential("mm", lambda s: abs(1.0 - s), lambda s: -1.0 + 0.0 * s, lambda s: 0.0 * s),
}


def get_potential(name: str) -> Potential:
    if name not in POTENTIALS:
        raise ConfigError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}", module="gl")
    return POTENTIALS[name]


# ---------------------------------------------------------------- fields
@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Complex amplitudes in the vertex frames; `mperp` is the normal component for micromagnetic fields."""
    surface: SurfaceModel
    values: np.ndarray
    mperp: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.values) != len(self.surface.vertices):
            raise ConfigError("field size does not match the surface", module="gl")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("field amplitudes must be finite", module="gl")

    @staticmethod
    def random(S: SurfaceModel, seed: int, scale: float = 0.5) -> "DiscreteField":
        rng = np.random.default_rng(seed)
        z = scale * (rng.standard_normal(len(S.vertices)) + 1j * rng.standard_normal(len(S.vertices)))
        return DiscreteField(S, z / np.maximum(1.0, np.abs(z)))

    def ambient(self) -> np.ndarray:
        out = self.surface.to_ambient(self.values)
        if self.mperp is not None:
            out = out + self.mperp[:, None] * self.surface.frames.normals
        return out


@dataclass(frozen=True, eq=False)
class GLProblem:
    """Torch views of the DEC data used by the energies."""
    tail: torch.Tensor
    head: torch.Tensor
    cos_rho: torch.Tensor
    sin_rho: torch.Tensor
    star1: torch.Tensor
    star0: torch.Tensor
    frames: torch.Tensor
    shape_ops: Optional[torch.Tensor]


def gl_problem(S: SurfaceModel) -> GLProblem:
    cached = S.__dict__.get("_gl_problem")
    if cached is None:
        fr = S.frames
        ops = torch.from_numpy(shape_operator_field(S)) if S.embedded else None
        cached = GLProblem(
            tail=torch.from_numpy(S.edges[:, 0].astype(np.int64)),
            head=torch.from_numpy(S.edges[:, 1].astype(np.int64)),
            cos_rho=torch.from_numpy(np.cos(fr.rho)),
            sin_rho=torch.from_numpy(np.sin(fr.rho)),
            star1=torch.from_numpy(S.dec.star1.copy()),
            star0=torch.from_numpy(S.dec.star0.copy()),
            frames=torch.from_numpy(np.stack([fr.t1, fr.t2, fr.normals], axis=1)),
            shape_ops=ops,
        )
        S.__dict__["_gl_problem"] = cached
    return cached


class GLEnergy:
    """Discrete GL energies on (V, 2) real amplitude tensors (micromagnetic: (V, 3) frame components)."""

    @staticmethod
    def dirichlet(P: GLProblem, z: torch.Tensor) -> torch.Tensor:
        """
        Covariant Dirichlet term 1/2 sum_e w_e |z_j e^{-i rho_e} - z_i|^2.
        :param P: problem data
        :param z: amplitudes, shape [V, 2]
        :return: scalar tensor
        """
        zi, zj = z[P.tail], z[P.head]
        re = zj[:, 0] * P.cos_rho + zj[:, 1] * P.sin_rho - zi[:, 0]
        im = zj[:, 1] * P.cos_rho - zj[:, 0] * P.sin_rho - zi[:, 1]
        return 0.5 * torch.sum(P.star1 * (re ** 2 + im ** 2))

    @staticmethod
    def potential(P: GLProblem, s: torch.Tensor, eps: float, pot: Potential) -> torch.Tensor:
        return torch.sum(P.star0 * pot.F(s)) / (4.0 * eps ** 2)

    @staticmethod
    def shape_term(P: GLProblem, z: torch.Tensor) -> torch.Tensor:
        if P.shape_ops is None:
            raise GeometryError("extrinsic energy needs an embedded surface", module="gl")
        Sm = torch.einsum("vij,vj->vi", P.shape_ops, z)
        return 0.5 * torch.sum(P.star0 * torch.sum(Sm ** 2, dim=1))

    @staticmethod
    def intrinsic(P: GLProblem, z: torch.Tensor, eps: float, pot: Potential) -> torch.Tensor:
        return GLEnergy.dirichlet(P, z) + GLEnergy.potential(P, torch.sum(z ** 2, dim=1), eps, pot)

    @staticmethod
    def extrinsic(P: GLProblem, z: torch.Tensor, eps: float, pot: Potential) -> torch.Tensor:
        return GLEnergy.intrinsic(P, z, eps, pot) + GLEnergy.shape_term(P, z)

    @staticmethod
    def micromagnetic(P: GLProblem, p: torch.Tensor, eps: float, pot: Potential) -> torch.Tensor:
        """
        Direct evaluation 1/2 sum_e w_e |M_j - M_i|^2 + potential F(|m|^2) with M = p / |p| in ambient space.
        :param p: frame components (t1, t2, N) per vertex, shape [V, 3]
        """
        M = p / torch.linalg.norm(p, dim=1, keepdim=True)
        amb = torch.einsum("vk,vkd->vd", M, P.frames)
        diff = amb[P.head] - amb[P.tail]
        dirichlet = 0.5 * torch.sum(P.star1 * torch.sum(diff ** 2, dim=1))
        return dirichlet + GLEnergy.potential(P, torch.sum(M[:, :2] ** 2, dim=1), eps, pot)


def _as_tensor(u: np.ndarray) -> torch.Tensor:
    u = np.asarray(u, dtype=np.complex128)
    return torch.from_numpy(np.stack([u.real, u.imag], axis=1))


def energy_in(S: SurfaceModel, u, eps: float, pot: Potential) -> float:
    if eps <= 0:
        raise ConfigError("epsilon must be positive", module="gl")
    with torch.no_grad():
        return float(GLEnergy.intrinsic(gl_problem(S), _as_tensor(u), eps, pot))


def energy_ex(S: SurfaceModel, m, eps: float, pot: Potential) -> float:
    if not S.embedded:
        raise GeometryError("extrinsic energy needs an embedded surface", module="gl")
    with torch.no_grad():
        return float(GLEnergy.extrinsic(gl_problem(S), _as_tensor(m), eps, pot))


def _mm_tensor(m, mperp) -> torch.Tensor:
    m = np.asarray(m, dtype=np.complex128)
    mperp = np.asarray(mperp, dtype=np.float64)
    violation = float(np.max(np.abs(np.abs(m) ** 2 + mperp ** 2 - 1.0)))
    if violation > CONSTRAINT_TOL:
        raise ConfigError(f"|m|^2 + M_perp^2 = 1 violated by {violation:.2e}", module="gl")
    return torch.from_numpy(np.stack([m.real, m.imag, mperp], axis=1))


def energy_mm(S: SurfaceModel, m, mperp, eps: float, pot: Potential) -> float:
    if not S.embedded:
        raise GeometryError("micromagnetic energy needs an embedded surface", module="gl")
    with torch.no_grad():
        return float(GLEnergy.micromagnetic(gl_problem(S), _mm_tensor(m, mperp), eps, pot))


def mm_decomposition(S: SurfaceModel, m, mperp, eps: float, pot: Potential) -> Dict[str, float]:
    """Direct micromagnetic energy against |Dm|^2 + |S(m)|^2 + |dM_perp|^2 (cross terms dropped)."""
    P = gl_problem(S)
    with torch.no_grad():
        p = _mm_tensor(m, mperp)
        direct = float(GLEnergy.micromagnetic(P, p, eps, pot))
        z = p[:, :2]
        w = p[:, 2]
        normal = 0.5 * float(torch.sum(P.star1 * (w[P.head] - w[P.tail]) ** 2))
        decomposed = float(GLEnergy.extrinsic(P, z, eps, pot)) + normal
    return {"direct": direct, "decomposed": decomposed, "gap": abs(direct - decomposed)}


# ---------------------------------------------------------------- minimization
@dataclass
class MinimizeOutcome:
    field: DiscreteField
    energy: float
    history: List[float]
    grad_norm: float
    converged: bool


def _project(kind: str, x: torch.Tensor) -> bool:
    """Amplitude cap |u| <= 1 (unit sphere for micromagnetic fields); True if anything moved."""
    with torch.no_grad():
        norm = torch.linalg.norm(x, dim=1, keepdim=True)
        if kind == "micromagnetic":
            x.div_(norm)
            return bool(torch.any(torch.abs(norm - 1.0) > 1e-15))
        over = norm > 1.0
        if torch.any(over):
            x.copy_(torch.where(over, x / norm, x))
            return True
    return False


def minimize_energy(S: SurfaceModel, init: DiscreteField, eps: float, pot: Potential, kind: str = "intrinsic",
                    flow_steps: int = FLOW_STEPS, max_outer: int = LBFGS_OUTER) -> MinimizeOutcome:
    """Gradient flow with adaptive step, then L-BFGS, projecting after every step."""
    if kind not in ENERGY_KINDS:
        raise ConfigError(f"unknown energy kind {kind!r}", module="gl")
    if kind != "intrinsic" and not S.embedded:
        raise GeometryError(f"{kind} energy needs an embedded surface", module="gl")
    energy_fn = getattr(GLEnergy, kind)
    P = gl_problem(S)
    if kind == "micromagnetic":
        mperp = init.mperp if init.mperp is not None else np.sqrt(np.clip(1.0 - np.abs(init.values) ** 2, 0.0, None))
        x = torch.from_numpy(np.stack([init.values.real, init.values.imag, mperp], axis=1)).clone()
    else:
        x = _as_tensor(init.values).clone()
    _project(kind, x)
    x.requires_grad_(True)

    def evaluate():
        value = energy_fn(P, x, eps, pot)
        grad, = torch.autograd.grad(value, x)
        return float(value), grad

    value, grad = evaluate()
    history = [value]
    tau = 0.1 * S.mesh_size ** 2
    tk0 = tqdm(range(flow_steps), desc=f"{kind} flow", leave=False)
    for _ in tk0:
        old = x.detach().clone()
        while True:
            with torch.no_grad():
                x.copy_(old - tau * grad)
            _project(kind, x)
            trial, trial_grad = evaluate()
            if not np.isfinite(trial):
                raise ConvergenceError("energy diverged during gradient flow", residual=trial, module="gl")
            if trial <= value:
                break
            tau *= 0.5
            if tau < 1e-30:
                with torch.no_grad():
                    x.copy_(old)
                trial, trial_grad = value, grad
                break
        value, grad = trial, trial_grad
        history.append(value)
        tau *= 1.5
        tk0.set_postfix(energy=value, step=tau)

    optimizer = torch.optim.LBFGS([x], lr=1.0, max_iter=LBFGS_INNER, history_size=20,
                                  line_search_fn="strong_wolfe", tolerance_grad=1e-14, tolerance_change=1e-16)

    def closure():
        optimizer.zero_grad()
        loss = energy_fn(P, x, eps, pot)
        loss.backward()
        return loss

    grad_norm = float(torch.linalg.norm(grad))
    converged = grad_norm < GRAD_TOL * max(abs(value), 1.0)
    tk1 = tqdm(range(max_outer), desc=f"{kind} lbfgs", leave=False)
    for _ in tk1:
        if converged:
            break
        old = x.detach().clone()
        optimizer.step(closure)
        if _project(kind, x):
            optimizer = torch.optim.LBFGS([x], lr=1.0, max_iter=LBFGS_INNER, history_size=20,
                                          line_search_fn="strong_wolfe", tolerance_grad=1e-14,
                                          tolerance_change=1e-16)
        new_value, grad = evaluate()
        if not np.isfinite(new_value):
            raise ConvergenceError("energy diverged during L-BFGS", residual=new_value, module="gl")
        if new_value > value:
            with torch.no_grad():
                x.copy_(old)
            logger.debug("L-BFGS step raised the energy; stopping at the previous iterate")
            break
        stalled = value - new_value <= 1e-15 * max(abs(value), 1.0)
        value = new_value
        history.append(value)
        grad_norm = float(torch.linalg.norm(grad))
        converged = grad_norm < GRAD_TOL * max(abs(value), 1.0)
        tk1.set_postfix(energy=value, grad=grad_norm)
        if stalled:
            break
    if not converged:
        logger.warning(f"{kind} minimization stopped with gradient norm {grad_norm:.3e} (energy {value:.8f})")

    out = x.detach().numpy()
    if kind == "micromagnetic":
        fld = DiscreteField(S, out[:, 0] + 1j * out[:, 1], mperp=out[:, 2].copy())
    else:
        fld = DiscreteField(S, out[:, 0] + 1j * out[:, 1])
    logger.info(f"{kind} minimization on {S.name}: eps={eps}, E={value:.10f}, |grad|={grad_norm:.2e}")
    return MinimizeOutcome(field=fld, energy=value, history=history, grad_norm=grad_norm, converged=converged)


# ---------------------------------------------------------------- radial profiles
@dataclass
class ProfileSolution:
    r: np.ndarray
    values: np.ndarray
    I_value: float
    t: float
    kind: str
    residual: float
    converged: bool

    @property
    def shifted(self) -> float:
        """I(t) + pi log t."""
        return self.I_value + np.pi * np.log(self.t)


def profile_grid(size: int = PROFILE_POINTS, r_min: float = PROFILE_RMIN) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(r_min, 1.0, size)])


class _ProfileElements:
    """P1 elements of pi int [v'^2 + s(v)/r^2 + F(s(v))/(2 t^2)] r dr with midpoint quadrature."""

    def __init__(self, r: np.ndarray, t: float, pot: Potential, kind: str):
        dr = np.diff(r)
        self.c = (r[:-1] + r[1:]) / (2.0 * dr)
        self.ell = np.empty(len(dr))
        self.ell[0] = 2.0
        self.ell[1:] = np.log(r[2:] / r[1:-1])
        self.area = 0.5 * (r[1:] ** 2 - r[:-1] ** 2)
        self.t2 = 2.0 * t ** 2
        self.pot = pot
        self.kind = kind

    def lift(self, m):
        if self.kind == "intrinsic":
            return m ** 2, 2.0 * m, 2.0 + 0.0 * m
        return np.sin(m) ** 2, np.sin(2.0 * m), 2.0 * np.cos(2.0 * m)

    def energy(self, f: np.ndarray) -> float:
        m = 0.5 * (f[:-1] + f[1:])
        s, _, _ = self.lift(m)
        h = self.ell * s + self.area * self.pot.F(s) / self.t2
        return float(np.pi * np.sum(self.c * np.diff(f) ** 2 + h))

    def derivatives(self, f: np.ndarray, clip: bool = False):
        m = 0.5 * (f[:-1] + f[1:])
        s, ds, d2s = self.lift(m)
        G1 = self.pot.dF(s) / self.t2
        G2 = self.pot.d2F(s) / self.t2
        h1 = (self.ell + self.area * G1) * ds
        h2 = (self.ell + self.area * G1) * d2s + self.area * G2 * ds ** 2
        if clip:
            h2 = np.maximum(h2, 0.0)
        n = len(f)
        grad = np.zeros(n)
        df = np.diff(f)
        grad[:-1] += -2.0 * self.c * df + 0.5 * h1
        grad[1:] += 2.0 * self.c * df + 0.5 * h1
        diag = np.zeros(n)
        diag[:-1] += 2.0 * self.c + 0.25 * h2
        diag[1:] += 2.0 * self.c + 0.25 * h2
        off = -2.0 * self.c + 0.25 * h2
        return np.pi * grad, np.pi * diag, np.pi * off


def _solve_profile(t: float, pot: Potential, kind: str, size: int) -> ProfileSolution:
    if not 0.0 < t < 0.5:
        raise ConfigError(f"profile ratio t must lie in (0, 0.5), got {t}", module="gl")
    r = profile_grid(size)
    el = _ProfileElements(r, t, pot, kind)
    upper = 1.0 if kind == "intrinsic" else 0.5 * np.pi
    f = r / np.sqrt(r ** 2 + t ** 2) * np.sqrt(1.0 + t ** 2)
    if kind != "intrinsic":
        f = np.arcsin(np.clip(f, 0.0, 1.0))
    f[-1] = upper
    value = el.energy(f)
    residual, converged = np.inf, False
    for _ in range(PROFILE_MAX_ITER):
        grad, diag, off = el.derivatives(f)
        grad, diag, off = grad[:-1], diag[:-1], off[:-1]
        free = ~(((f[:-1] <= 0.0) & (grad > 0)) | ((f[:-1] >= upper) & (grad < 0)))
        residual = float(np.max(np.abs(grad[free]))) if np.any(free) else 0.0
        if residual < PROFILE_TOL:
            converged = True
            break
        step = _newton_step(grad, diag, off)
        if step is None:
            _, diag, off = el.derivatives(f, clip=True)
            step = _newton_step(grad, diag[:-1], off[:-1])
        alpha = 1.0
        while True:
            trial = f.copy()
            trial[:-1] = np.clip(f[:-1] - alpha * step, 0.0, upper)
            trial_value = el.energy(trial)
            if trial_value <= value or alpha < 1e-12:
                break
            alpha *= 0.5
        if trial_value > value:
            break
        if value - trial_value < 1e-16 * max(1.0, abs(value)) and np.max(np.abs(trial - f)) < 1e-14:
            f, value = trial, trial_value
            converged = residual < 1e3 * PROFILE_TOL
            break
        f, value = trial, trial_value
    if not converged:
        logger.warning(f"{kind} profile at t={t} stopped with residual {residual:.3e}")
    return ProfileSolution(r=r, values=f, I_value=value, t=t, kind=kind, residual=residual, converged=converged)


def _newton_step(grad, diag, off) -> Optional[np.ndarray]:
    ab = np.zeros((2, len(diag)))
    ab[0, 1:] = off[:len(diag) - 1]
    ab[1] = diag
    try:
        return solveh_banded(ab, grad)
    except LinAlgError:
        return None


def radial_profile_in(t: float, grid_size: int = PROFILE_POINTS, pot: Optional[Potential] = None) -> ProfileSolution:
    return _solve_profile(t, pot or POTENTIALS["gl"], "intrinsic", grid_size)


def radial_profile_mm(t: float, grid_size: int = PROFILE_POINTS, pot: Optional[Potential] = None) -> ProfileSolution:
    return _solve_profile(t, pot or POTENTIALS["gl"], "micromagnetic", grid_size)


def iota_estimate(ts: Sequence[float], kind: str = "intrinsic", pot: Optional[Potential] = None,
                  grid_size: int = PROFILE_POINTS) -> Dict:
    """Raw last value of I(t) + pi log t and its Richardson extrapolation in t^2 from the two smallest t."""
    solver = radial_profile_in if kind == "intrinsic" else radial_profile_mm
    ts = sorted(ts, reverse=True)
    sols = [solver(t, grid_size, pot) for t in tqdm(ts, desc=f"{kind} profiles", leave=False)]
    g = np.array([s.shifted for s in sols])
    t1, t2 = ts[-2], ts[-1]
    rich = (t1 ** 2 * g[-1] - t2 ** 2 * g[-2]) / (t1 ** 2 - t2 ** 2)
    return {"t": list(ts), "I": [s.I_value for s in sols], "shifted": g.tolist(), "raw": float(g[-1]),
            "richardson": float(rich), "final_increment": float(abs(g[-1] - g[-2]))}


# ---------------------------------------------------------------- expansion
@dataclass
class EnergyReport:
    epsilon: float
    energy: float
    n: int
    log_term: float
    W: float
    iota_term: float
    tildeW: Optional[float]
    residual: float
    points: np.ndarray
    degrees: np.ndarray
    phi: np.ndarray
    flux_distance: float

    def row(self) -> Dict:
        return {"epsilon": self.epsilon, "E": self.energy, "n_pi_log": self.log_term, "W": self.W,
                "n_iota": self.iota_term, "tildeW": np.nan if self.tildeW is None else self.tildeW,
                "residual": self.residual}


def expansion_report(S: SurfaceModel, u: DiscreteField, eps: float, pot: Potential, iota: float,
                     kind: str = "intrinsic", sigma: Optional[float] = None,
                     HB: Optional[HarmonicBasis] = None) -> EnergyReport:
    gev = green_evaluator(S)
    HB = HB or harmonic_basis(S, audit=False)
    if kind == "micromagnetic":
        if u.mperp is None:
            raise ConfigError("micromagnetic expansion needs the normal component M_perp", module="gl")
        energy = energy_mm(S, u.values, u.mperp, eps, pot)
    elif kind == "extrinsic":
        energy = energy_ex(S, u.values, eps, pot)
    else:
        energy = energy_in(S, u.values, eps, pot)
    sigma = sigma or max(4.0 * eps, 3.0 * S.mesh_size)
    balls = ball_construction(S, u.values, eps, sigma)
    cfg = balls.as_config()
    n = int(np.sum(np.abs(cfg.degrees)))
    if int(np.sum(cfg.degrees)) != S.euler_char or n != abs(S.euler_char):
        raise ConvergenceError(f"detected degrees {cfg.degrees.tolist()} do not match chi(S) = {S.euler_char}",
                               residual=float(n), module="gl")
    phi_u = flux_integrals(S, u.values, HB)
    phi = lattice(HB, gev, cfg).nearest_point(phi_u) if HB.dim else np.zeros(0)
    W = W_closed_form(gev, HB, cfg, phi).W_closed
    tildeW = None
    if kind != "intrinsic":
        tildeW = theta_minimize(S, build_ustar(gev, HB, cfg, phi))["tildeW"]
    log_term = n * np.pi * np.log(1.0 / eps)
    residual = energy - log_term - W - n * iota - (tildeW or 0.0)
    report = EnergyReport(epsilon=eps, energy=energy, n=n, log_term=log_term, W=W, iota_term=n * iota,
                          tildeW=tildeW, residual=residual, points=cfg.points, degrees=cfg.degrees, phi=phi,
                          flux_distance=float(np.linalg.norm(phi - phi_u)) if HB.dim else 0.0)
    logger.info(f"expansion at eps={eps}: E={energy:.6f}, W={W:.6f}, residual={residual:.4f}")
    return report


def two_eps_check(r1: EnergyReport, r2: EnergyReport) -> Dict[str, float]:
    """Compare E(eps1) - E(eps2) with n pi log(eps2/eps1) and the residual gap."""
    expected = r1.n * np.pi * np.log(r2.epsilon / r1.epsilon)
    actual = r1.energy - r2.energy
    rel = abs(actual - expected) / abs(expected) if expected else abs(actual)
    return {"expected": expected, "actual": actual, "relative_error": rel,
            "residual_gap": abs(r1.residual - r2.residual)}


# ---------------------------------------------------------------- checkpoints
def save_checkpoint(path: Union[str, Path], fld: DiscreteField, eps: float, potential: str, kind: str,
                    config_hash: str = ""):
    S = fld.surface
    header = {"surface_hash": S.surface_hash, "epsilon": repr(float(eps)), "potential": potential,
              "frame": "vertex", "energy_kind": kind, "config_hash": config_hash}
    df = pd.DataFrame({"site": np.arange(len(fld.values)), "re": fld.values.real, "im": fld.values.imag})
    if fld.mperp is not None:
        df["mperp"] = fld.mperp
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for k, v in header.items():
            f.write(f"# {k}={v}\n")
        df.to_csv(f, index=False, float_format="%.17g")


def load_checkpoint(path: Union[str, Path], S: Optional[SurfaceModel] = None) -> Tuple[Dict, np.ndarray, Optional[np.ndarray]]:
    header = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
    df = pd.read_csv(path, comment="#")
    if S is not None and header.get("surface_hash") != S.surface_hash:
        raise ConfigError("checkpoint was written for a different surface", module="gl")
    values = df["re"].to_numpy() + 1j * df["im"].to_numpy()
    mperp = df["mperp"].to_numpy() if "mperp" in df.columns else None
    return header, values, mperp
