import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from tqdm import tqdm

from vortexlab.errors import ConfigError, ConvergenceError, GeometryError, QuantizationError, VortexError
from vortexlab.geometry import SurfaceModel, geodesic_dist, wrap_angle
from vortexlab.greens import GreenEvaluator, psi_field
from vortexlab.harmonic import R_MIN, HarmonicBasis, VortexConfig, lattice

logger = logging.getLogger(__name__)

AUDIT_LOOPS = 20
AUDIT_TOL = 1e-2


@dataclass(frozen=True, eq=False)
class CanonicalField:
    """Canonical harmonic unit field u* for (cfg, phi), fixed up to the gauge (base_site, base_vector).

    `field` holds complex amplitudes in the vertex frames, zero on core sites.
    """
    jstar: np.ndarray
    field: np.ndarray
    base_site: int
    base_vector: complex
    cfg: VortexConfig
    phi: np.ndarray
    core_sites: np.ndarray
    audit: Dict = field(default_factory=dict)

    @property
    def current_error(self) -> float:
        return self.audit.get("current_error", np.nan)


def vortex_distance(S: SurfaceModel, cfg: VortexConfig) -> np.ndarray:
    """Distance from every vertex to the nearest vortex point."""
    out = np.full(len(S.vertices), np.inf)
    for a in cfg.points:
        out = np.minimum(out, geodesic_dist(S, a[None, :], S.vertices))
    return out


def jstar(gev: GreenEvaluator, HB: HarmonicBasis, cfg: VortexConfig, phi) -> np.ndarray:
    """Edge integrals of j* = d*psi + sum_k phi_k eta_k."""
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if len(phi) != HB.dim:
        raise ConfigError(f"flux vector has {len(phi)} entries, expected {HB.dim}", module="canonical")
    j = psi_field(gev, cfg).dstar_psi.copy()
    if HB.dim:
        j += phi @ HB.forms
    return j


def holonomy_transport(S: SurfaceModel, j: np.ndarray, path, v0: complex,
                       cfg: Optional[VortexConfig] = None, r_min: float = R_MIN) -> complex:
    """Transport the amplitude v0 (start-vertex frame) along a vertex path, rotating by j + A.

    The result is expressed in the frame of the last vertex.
    """
    path = np.asarray(path, dtype=np.int64)
    if cfg is not None and len(cfg):
        d = vortex_distance(S, cfg)[path]
        if np.min(d) < r_min:
            raise VortexError(f"path passes within {float(np.min(d)):.3g} of a vortex", module="canonical")
    ids, signs = S.edge_ids(path)
    angle = float(np.sum(signs * (j[ids] + S.frames.rho[ids])))
    return complex(v0) * np.exp(1j * angle)


def _transport_angles(S: SurfaceModel, j: np.ndarray) -> np.ndarray:
    return j + S.frames.rho


def build_ustar(gev: GreenEvaluator, HB: HarmonicBasis, cfg: VortexConfig, phi,
                base_vector: complex = 1.0 + 0.0j, seed: int = 0, audit_loops: int = AUDIT_LOOPS) -> CanonicalField:
    S = gev.surface
    phi = np.asarray(phi, dtype=np.float64).ravel()
    L = lattice(HB, gev, cfg)
    defects = L.defect(phi)
    for row, dft in enumerate(defects):
        if abs(dft) >= L.tol:
            raise QuantizationError(f"flux vector violates quantization row {row}: defect {dft:.3e}",
                                    row=row, defect=float(dft))

    pot = psi_field(gev, cfg)
    j = pot.dstar_psi + (phi @ HB.forms if HB.dim else 0.0)
    theta = _transport_angles(S, j)
    cores = pot.core_sites
    dist = vortex_distance(S, cfg)
    dist[cores] = -np.inf
    base = int(np.argmax(dist))

    live_edges = ~(cores[S.edges[:, 0]] | cores[S.edges[:, 1]])
    a, b = S.edges[live_edges, 0], S.edges[live_edges, 1]
    V = len(S.vertices)
    graph = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(V, V)).tocsr()
    order, pred = breadth_first_order(graph, base, directed=False, return_predecessors=True)
    if len(order) != int(np.sum(~cores)):
        raise GeometryError("sample sites outside the core are not connected", module="canonical")

    z = np.zeros(V, dtype=np.complex128)
    base_vector = complex(base_vector) / abs(complex(base_vector))
    z[base] = base_vector
    tree_edge = np.zeros(len(S.edges), dtype=bool)
    for v in order[1:]:
        p = int(pred[v])
        e = S.edge_index[(min(p, v), max(p, v))]
        tree_edge[e] = True
        z[v] = z[p] * np.exp(1j * (theta[e] if p < v else -theta[e]))

    closing = np.flatnonzero(live_edges & ~tree_edge)
    rng = np.random.default_rng(seed)
    picks = rng.choice(closing, size=min(audit_loops, len(closing)), replace=False) if len(closing) else []
    audit_defects = []
    for e in tqdm(picks, desc="loop audit", disable=len(picks) < 2, leave=False):
        i, k = S.edges[e]
        audit_defects.append(abs(float(wrap_angle(np.angle(z[k]) - np.angle(z[i]) - theta[e]))))
    worst = max(audit_defects) if audit_defects else 0.0
    if worst >= AUDIT_TOL:
        raise ConvergenceError(f"loop audit defect {worst:.3e} exceeds {AUDIT_TOL}", residual=worst,
                               module="canonical")

    current = np.imag(np.conj(z[S.edges[:, 0]]) * z[S.edges[:, 1]] * np.exp(-1j * S.frames.rho))
    w = S.dec.star1 * live_edges
    err = float(np.sqrt(np.sum(w * (current - j) ** 2) / max(np.sum(w * j ** 2), 1e-300)))
    audit = {"loop_defects": audit_defects, "max_defect": worst, "current_error": err,
             "quantization_defects": defects.tolist()}
    logger.info(f"Built u* on {S.name}: base site {base}, max loop defect {worst:.2e}, current error {err:.2e}")
    return CanonicalField(jstar=j, field=z, base_site=base, base_vector=base_vector, cfg=cfg, phi=phi,
                          core_sites=cores, audit=audit)


def dirichlet_comparison(cf: CanonicalField, S: SurfaceModel, sigma: float) -> Dict[str, float]:
    """Dirichlet energies of u* on S minus sigma-balls: from field differences and from |j*|^2."""
    far = vortex_distance(S, cf.cfg) >= sigma
    keep = far[S.edges[:, 0]] & far[S.edges[:, 1]]
    z = cf.field
    diff = z[S.edges[:, 1]] * np.exp(-1j * S.frames.rho) - z[S.edges[:, 0]]
    w = S.dec.star1 * keep
    from_field = 0.5 * float(np.sum(w * np.abs(diff) ** 2))
    from_current = 0.5 * float(np.sum(w * cf.jstar ** 2))
    return {"from_field": from_field, "from_current": from_current,
            "relative_gap": abs(from_field - from_current) / max(from_current, 1e-300)}
