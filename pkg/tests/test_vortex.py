import numpy as np
import pytest

from vortexlab.canonical import build_ustar, vortex_distance
from vortexlab.errors import ConfigError, VortexError
from vortexlab.geometry import make_surface
from vortexlab.gl import POTENTIALS, energy_in
from vortexlab.greens import green_evaluator
from vortexlab.harmonic import VortexConfig, harmonic_basis, lattice, w11_vortex_distance
from vortexlab.vortex import (Lambda_eps, Lambda_log_bound, ball_construction, best_constant, contour_region,
                              current, curvature_bound, degree, disk_region, flux_integrals, lambda_eps,
                              lambda_lower_bound, phase_current, region_degree, renormalize, vertex_energy,
                              vorticity)

N = 64
EPS = 0.04


@pytest.fixture(scope="module")
def dipole():
    S = make_surface({"kind": "flat_torus", "n": N})
    gev, HB = green_evaluator(S), harmonic_basis(S)
    cfg = VortexConfig.create(S, [[0.25, 0.25, 0.0], [0.75, 0.75, 0.0]], [1, -1])
    phi = lattice(HB, gev, cfg).nearest_point(np.zeros(2))
    return S, HB, cfg, build_ustar(gev, HB, cfg, phi).field


@pytest.fixture(scope="module")
def planted(dipole):
    """Dipole u* on a 64x64 torus with a tanh core profile of width EPS."""
    S, HB, cfg, field = dipole
    return S, HB, cfg, field * np.tanh(vortex_distance(S, cfg) / EPS)


def square(a0, a1):
    """Counterclockwise vertex loop around the square [a0, a1]^2 of grid indices."""
    side = range(a0, a1)
    loop = [a * N + a0 for a in side] + [a1 * N + b for b in side]
    loop += [a * N + a1 for a in range(a1, a0, -1)] + [a0 * N + b for b in range(a1, a0, -1)]
    return loop + [loop[0]]


def test_current_is_sine_of_phase_difference_for_unit_fields():
    S = make_surface({"kind": "flat_torus", "n": 16})
    x = S.vertices
    u = np.exp(2j * np.pi * (x[:, 0] + 2.0 * x[:, 1]))
    np.testing.assert_allclose(current(S, u), np.sin(phase_current(S, u)), atol=1e-12)


def test_vorticity_modes():
    S = make_surface({"kind": "flat_torus", "n": 16})
    u = np.exp(2j * np.pi * S.vertices[:, 0])
    np.testing.assert_allclose(vorticity(S, u), 0.0, atol=1e-12)
    with pytest.raises(ConfigError):
        vorticity(S, u, mode="curl")


def test_renormalize_caps_modulus():
    u = np.array([0.0, 0.25, 0.5j, 0.9, 2.0 + 0j])
    out = renormalize(u)
    np.testing.assert_allclose(np.abs(out), [0.0, 0.5, 1.0, 1.0, 1.0])


def test_contour_degree(planted):
    S, HB, cfg, u = planted
    assert degree(S, u, square(12, 20)) == 1
    assert degree(S, u, square(44, 52)) == -1
    assert degree(S, u, square(28, 36)) == 0


def test_contour_region_is_inside(planted):
    S, HB, cfg, u = planted
    mask = contour_region(S, square(12, 20))
    assert mask.sum() == 2 * 8 * 8


def test_region_degree_refuses_contours_through_cores(dipole):
    S, HB, cfg, field = dipole
    wide = field * np.tanh(vortex_distance(S, cfg) / 0.2)
    with pytest.raises(VortexError):
        region_degree(S, wide, disk_region(S, [0.25, 0.25, 0.0], 0.02))


def test_disk_degree_matches_vorticity(planted):
    S, HB, cfg, u = planted
    mask = disk_region(S, [0.75, 0.75, 0.0], 0.15)
    d, defect = region_degree(S, u, mask)
    assert d == -1 and defect < 0.05
    assert np.sum(vorticity(S, u)[mask]) == pytest.approx(-2.0 * np.pi, abs=1e-9)


def test_flux_of_winding_field():
    S = make_surface({"kind": "flat_torus", "n": 32})
    HB = harmonic_basis(S)
    u = np.exp(2j * np.pi * S.vertices[:, 0])
    np.testing.assert_allclose(flux_integrals(S, u, HB), [2.0 * np.pi, 0.0], atol=1e-5)
    np.testing.assert_allclose(flux_integrals(S, 1j * u, HB), flux_integrals(S, u, HB), atol=1e-12)


def test_flux_on_sphere_is_empty():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 1})
    assert flux_integrals(S, np.ones(len(S.vertices)), harmonic_basis(S)).shape == (0,)


def test_vertex_energy_sums_to_intrinsic_energy(planted):
    S, HB, cfg, u = planted
    assert float(np.sum(vertex_energy(S, u, EPS))) == pytest.approx(energy_in(S, u, EPS, POTENTIALS["gl"]))


def test_ball_construction_finds_the_dipole(planted):
    S, HB, cfg, u = planted
    sigma = 0.1
    bs = ball_construction(S, u, EPS, sigma, record_trace=True)
    diag = bs.diagnostics
    assert sorted(bs.degrees.tolist()) == [-1, 1]
    assert int(np.sum(bs.degrees)) == S.euler_char
    assert diag["disjoint"] and diag["covered"] and diag["radius_sum_ok"]
    assert diag["radius_sum"] <= (diag["budget"] + 1) * sigma
    assert w11_vortex_distance(S, bs.as_config(), cfg) <= 2.0 * sigma * 2.0 * np.pi * 2
    assert bs.trace[-1]["sigma"] == pytest.approx(sigma)
    assert len(bs.to_dict()["balls"]) == 2


def test_ball_construction_merges_at_large_sigma(planted):
    S, HB, cfg, u = planted
    bs = ball_construction(S, u, EPS, 0.5)
    assert bs.degrees.tolist() == [0]
    assert len(bs.as_config().degrees) == 0
    assert bs.diagnostics["radius_sum_ok"]


def test_ball_construction_without_zeros():
    S = make_surface({"kind": "flat_torus", "n": 16})
    bs = ball_construction(S, np.ones(len(S.vertices)), 0.05, 0.2)
    assert bs.balls == [] and bs.diagnostics["covered"]


@pytest.mark.parametrize("eps, sigma", [(0.1, 0.1), (0.2, 0.1), (0.0, 0.1)])
def test_ball_construction_checks_scales(planted, eps, sigma):
    S, HB, cfg, u = planted
    with pytest.raises(ConfigError):
        ball_construction(S, u, eps, sigma)


def test_lambda_lower_bound():
    r = np.geomspace(1e-4, 0.5, 50)
    np.testing.assert_allclose(lambda_eps(r, 0.01), lambda_lower_bound(r, 0.01), rtol=1e-12)
    assert np.all(lambda_eps(r, 0.01, c3=1.0) >= lambda_lower_bound(r, 0.01, c3=1.0) - 1e-12)


def test_Lambda_log_bound():
    eps = 1e-3
    for sigma in (0.01, 0.1, 0.5):
        assert Lambda_eps(sigma, eps) == pytest.approx(Lambda_log_bound(sigma, eps), rel=1e-8)
        assert Lambda_eps(sigma, eps, c3=1.0) >= Lambda_log_bound(sigma, eps, c3=1.0) - 1e-10
    values = [Lambda_eps(s, eps) for s in (0.01, 0.1, 0.5)]
    assert values == sorted(values)


def test_best_constant():
    eps, c4 = 1e-3, 16.0 * np.pi
    sigmas = [0.01, 0.05, 0.2]
    C = best_constant(eps, sigmas)
    assert C == pytest.approx(np.log(c4 * 0.2 / (c4 * eps + 0.2)), abs=1e-7)
    assert C < np.log(c4)


def test_curvature_bound():
    assert curvature_bound(make_surface({"kind": "flat_torus", "n": 8})) == pytest.approx(0.0, abs=1e-12)
    assert curvature_bound(make_surface({"kind": "unit_sphere", "subdivisions": 3})) == pytest.approx(1.0, abs=0.2)


def test_lambda_is_decreasing_and_Lambda_subadditive():
    eps = 1e-2
    r = np.geomspace(1e-4, 1.0, 200)
    assert np.all(np.diff(lambda_eps(r, eps)) < 0.0)
    grid = [0.02, 0.05, 0.1, 0.2]
    for s1 in grid:
        for s2 in grid:
            assert Lambda_eps(s1 + s2, eps) <= Lambda_eps(s1, eps) + Lambda_eps(s2, eps) + 1e-10
