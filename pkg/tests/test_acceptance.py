"""Fine-resolution end-to-end checks; run with --runslow."""
import numpy as np
import pytest

from vortexlab.canonical import build_ustar, vortex_distance
from vortexlab.errors import QuantizationError
from vortexlab.geometry import geodesic_dist, make_surface
from vortexlab.gl import POTENTIALS, DiscreteField, expansion_report, iota_estimate, minimize_energy, two_eps_check
from vortexlab.greens import green_evaluator
from vortexlab.harmonic import VortexConfig, harmonic_basis, lattice, w11_vortex_distance
from vortexlab.renorm import W_closed_form, W_quadrature, minimize_W, optimal_flux, theta_minimize
from vortexlab.vortex import ball_construction

pytestmark = pytest.mark.slow

RADII = (4e-2, 1e-2, 2.5e-3)
T_GRID = (0.2, 0.1, 0.05, 0.025, 0.0125)


def random_sphere_points(rng, k):
    p = rng.standard_normal((k, 3))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def assert_quadrature_converges(gev, HB, cfg, phi):
    W = W_closed_form(gev, HB, cfg, phi).W_closed
    errors = np.array([abs(W_quadrature(gev, HB, cfg, phi, r) - W) for r in RADII])
    assert errors[-1] <= 1e-2
    if errors[0] > 1e-8:
        rate = np.polyfit(np.log(RADII), np.log(np.maximum(errors, 1e-14)), 1)[0]
        assert rate >= 0.45


def test_quadrature_matches_closed_form_on_sphere():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 3})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    rng = np.random.default_rng(2024)
    done = 0
    while done < 5:
        p = random_sphere_points(rng, 2)
        if geodesic_dist(S, p[0], p[1]) < 1.0:
            continue
        assert_quadrature_converges(gev, HB, VortexConfig.create(S, p, [1, 1]), np.zeros(0))
        done += 1


@pytest.mark.parametrize("sep", [0.3, 0.5, 0.7])
def test_quadrature_matches_closed_form_on_torus(sep):
    S = make_surface({"kind": "flat_torus", "n": 32})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    cfg = VortexConfig.create(S, [[0.5 - sep / 2, 0.5, 0.0], [0.5 + sep / 2, 0.5, 0.0]], [1, -1])
    assert_quadrature_converges(gev, HB, cfg, optimal_flux(HB, gev, cfg))


def test_sphere_minimizers_are_antipodal():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 3})
    rng = np.random.default_rng(99)
    for _ in range(10):
        result = minimize_W(S, VortexConfig.create(S, random_sphere_points(rng, 2), [1, 1]))
        assert float(geodesic_dist(S, *result.cfg.points)) == pytest.approx(np.pi, abs=1e-3)


def test_sphere_extrinsic_correction_at_fine_resolution():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 5})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    a = np.array([0.0, 1.0, (1.0 + np.sqrt(5.0)) / 2.0])
    a /= np.linalg.norm(a)
    configs = [([[0, 0, 1.0], [0, 0, -1.0]], [1, 1]), ([a, -a], [1, 1]), ([[0, 0, 1.0]], [2])]
    tol = max(1e-3, 2.0 * S.mesh_size ** 2)
    for points, degrees in configs:
        cf = build_ustar(gev, HB, VortexConfig.create(S, points, degrees), np.zeros(0))
        res = theta_minimize(S, cf)
        assert res["tildeW"] == pytest.approx(2.0 * np.pi, abs=tol)
        assert res["residual"] < 1e-4
        assert res["theta_gradient"] < 1e-4


def test_flux_quantization_dichotomy_at_fine_resolution():
    S = make_surface({"kind": "flat_torus", "n": 64})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    cfg = VortexConfig.create(S, [[0.25, 0.25, 0.0], [0.75, 0.75, 0.0]], [1, -1])
    L = lattice(HB, gev, cfg)
    for n in ([0, 0], [2, -1], [-3, 1]):
        assert build_ustar(gev, HB, cfg, L.point(n)).audit["max_defect"] < 1e-2
    with pytest.raises(QuantizationError) as info:
        build_ustar(gev, HB, cfg, L.point([0, 0]) + 0.5 * L.generator[:, 0])
    assert abs(info.value.defect) == pytest.approx(np.pi, abs=1e-2)


def test_energy_expansion_slope_on_sphere():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 6})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    cfg = VortexConfig.create(S, [[0, 0, 1.0], [0, 0, -1.0]], [1, 1])
    ustar = build_ustar(gev, HB, cfg, np.zeros(0)).field
    iota = iota_estimate(T_GRID)["richardson"]
    reports = []
    for eps in (0.08, 0.04):
        init = DiscreteField(S, ustar * np.tanh(vortex_distance(S, cfg) / eps))
        outcome = minimize_energy(S, init, eps, POTENTIALS["gl"])
        report = expansion_report(S, outcome.field, eps, POTENTIALS["gl"], iota, HB=HB)
        assert report.n == 2 and report.degrees.tolist() == [1, 1]
        assert float(geodesic_dist(S, *report.points)) >= 0.9 * np.pi
        reports.append(report)
    check = two_eps_check(*reports)
    assert check["relative_error"] < 0.05
    assert check["residual_gap"] < 0.3


def test_profile_constants():
    est_in = iota_estimate(T_GRID, kind="intrinsic")
    est_mm = iota_estimate(T_GRID, kind="micromagnetic")
    for est in (est_in, est_mm):
        g = est["shifted"]
        assert all(b <= a + 1e-9 for a, b in zip(g, g[1:]))
    assert est_in["final_increment"] < 1e-3
    coarse = iota_estimate(T_GRID[:-1])["richardson"]
    assert abs(est_in["richardson"] - coarse) < 1e-3
    t = np.array(est_mm["t"])
    I_mm = np.array(est_mm["I"])
    for i in range(len(t)):
        for j in range(i):
            # t[i] < t[j]
            assert I_mm[i] <= np.pi * np.log(t[j] / t[i]) + I_mm[j] + 1e-9
    assert np.all(np.array(est_in["I"]) <= I_mm + 1e-6)


PLANTED = [[1, -1], [2, -2], [1, 1, -2], [1, -1, 1, -1], [2, -1, -1]]


def planted_field(S, gev, HB, cfg, eps):
    phi = lattice(HB, gev, cfg).nearest_point(np.zeros(2))
    field = build_ustar(gev, HB, cfg, phi).field
    for a, d in zip(cfg.points, cfg.degrees):
        field = field * np.tanh(geodesic_dist(S, a[None, :], S.vertices) / eps) ** abs(int(d))
    return field


def well_separated(S, points, degrees, sigma, margin=0.06):
    """Grown balls of radius sigma |d| stay apart by at least margin."""
    for i in range(len(points)):
        for j in range(i):
            gap = float(geodesic_dist(S, points[i], points[j]))
            if gap < sigma * (abs(degrees[i]) + abs(degrees[j])) + margin:
                return False
    return True


def test_ball_construction_on_planted_fields():
    n, eps, sigma = 96, 0.06, 0.08
    S = make_surface({"kind": "flat_torus", "n": n})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    rng = np.random.default_rng(7)
    for trial in range(20):
        degrees = PLANTED[trial % len(PLANTED)]
        while True:
            idx = rng.integers(0, n, size=(len(degrees), 2))
            points = np.concatenate([idx / n, np.zeros((len(degrees), 1))], axis=1)
            if well_separated(S, points, degrees, sigma):
                break
        cfg = VortexConfig.create(S, points, degrees)
        u = planted_field(S, gev, HB, cfg, eps)
        bs = ball_construction(S, u, eps, sigma)
        diag = bs.diagnostics
        assert diag["disjoint"] and diag["covered"]
        assert diag["radius_sum"] <= (diag["budget"] + 1) * sigma + 1e-12
        assert int(np.sum(bs.degrees)) == S.euler_char
        bound = 2.0 * sigma * 2.0 * np.pi * np.sum(np.abs(degrees))
        assert w11_vortex_distance(S, bs.as_config(), cfg) <= bound
