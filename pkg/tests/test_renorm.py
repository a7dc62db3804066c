import numpy as np
import pytest

from vortexlab.canonical import build_ustar
from vortexlab.errors import ConfigError, GeometryError
from vortexlab.geometry import geodesic_dist, make_surface, torus_angles
from vortexlab.greens import green_evaluator
from vortexlab.harmonic import VortexConfig, harmonic_basis
from vortexlab.renorm import (W_closed_form, W_quadrature, minimize_W, optimal_flux, psi0_pair_energy,
                              renorm_report, shape_operator, shape_operator_field, smooth_cutoff, theta_minimize,
                              theta_residual)

DIPOLE = [[0.25, 0.25, 0.0], [0.75, 0.75, 0.0]]


@pytest.fixture(scope="module")
def sphere():
    return make_surface({"kind": "unit_sphere", "subdivisions": 3})


@pytest.fixture(scope="module")
def torus():
    return make_surface({"kind": "flat_torus", "n": 32})


def test_antipodal_sphere_closed_form(sphere):
    cfg = VortexConfig.create(sphere, [[0, 0, 1.0], [0, 0, -1.0]], [1, 1])
    report = W_closed_form(green_evaluator(sphere), harmonic_basis(sphere), cfg, np.zeros(0))
    assert report.W_closed == pytest.approx(2.0 * np.pi * (np.log(2.0) - 1.0), abs=1e-12)
    assert report.terms["flux_sq"] == 0.0


def test_closed_form_separates_flux_term(torus):
    cfg = VortexConfig.create(torus, DIPOLE, [1, -1])
    gev, HB = green_evaluator(torus), harmonic_basis(torus)
    phi = optimal_flux(HB, gev, cfg)
    a = W_closed_form(gev, HB, cfg, phi)
    b = W_closed_form(gev, HB, cfg, phi + np.array([2.0 * np.pi, 0.0]))
    assert b.W_closed - a.W_closed == pytest.approx(0.5 * (np.dot(phi + [2 * np.pi, 0], phi + [2 * np.pi, 0])
                                                           - np.dot(phi, phi)))


def test_smooth_cutoff():
    rho = np.linspace(0.0, 2.0, 401)
    c = smooth_cutoff(rho, 1.0)
    assert np.all(c[rho <= 0.5] == 1.0)
    assert np.all(c[rho >= 1.0] == 0.0)
    assert np.all(np.diff(c) <= 0.0)


@pytest.mark.parametrize("r", [1e-2, 2.5e-3])
def test_sphere_quadrature_agrees_with_closed_form(sphere, r):
    cfg = VortexConfig.create(sphere, [[0, 0, 1.0], [0.6, 0.0, -0.8]], [1, 1])
    gev, HB = green_evaluator(sphere), harmonic_basis(sphere)
    W = W_closed_form(gev, HB, cfg, np.zeros(0)).W_closed
    assert W_quadrature(gev, HB, cfg, np.zeros(0), r) == pytest.approx(W, abs=1e-2)


def test_torus_quadrature_agrees_with_closed_form(torus):
    cfg = VortexConfig.create(torus, DIPOLE, [1, -1])
    gev, HB = green_evaluator(torus), harmonic_basis(torus)
    phi = optimal_flux(HB, gev, cfg)
    W = W_closed_form(gev, HB, cfg, phi).W_closed
    assert W_quadrature(gev, HB, cfg, phi, 2.5e-3) == pytest.approx(W, abs=1e-2)


def test_quadrature_radius_checks(sphere):
    cfg = VortexConfig.create(sphere, [[0, 0, 1.0], [0, 0, -1.0]], [1, 1])
    gev, HB = green_evaluator(sphere), harmonic_basis(sphere)
    with pytest.raises(ConfigError):
        W_quadrature(gev, HB, cfg, np.zeros(0), 0.6)
    with pytest.raises(ConfigError):
        W_quadrature(gev, HB, cfg, np.zeros(0), -1.0)


def test_minimize_W_sphere_goes_antipodal(sphere):
    rng = np.random.default_rng(11)
    for _ in range(3):
        p = rng.standard_normal((2, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        result = minimize_W(sphere, VortexConfig.create(sphere, p, [1, 1]))
        assert result.status == "converged"
        assert float(geodesic_dist(sphere, *result.cfg.points)) == pytest.approx(np.pi, abs=1e-3)
        assert result.W == pytest.approx(2.0 * np.pi * (np.log(2.0) - 1.0), abs=1e-5)
        assert all(b <= a + 1e-12 for a, b in zip(result.history, result.history[1:]))


def test_minimize_W_dipole_annihilates(torus):
    cfg = VortexConfig.create(torus, [[0.45, 0.5, 0.0], [0.55, 0.5, 0.0]], [1, -1])
    result = minimize_W(torus, cfg, max_iter=200)
    assert result.status in ("annihilation", "max_iter", "converged")
    assert float(geodesic_dist(torus, *result.cfg.points)) <= 0.1 + 1e-12


def test_minimize_W_checks_degrees(sphere):
    cfg = VortexConfig.create(sphere, [[0, 0, 1.0], [0, 0, -1.0]], [1, 1])
    bad = VortexConfig(points=cfg.points, degrees=np.array([1, 2]))
    with pytest.raises(ConfigError):
        minimize_W(sphere, bad)


def test_pair_energy_is_green_on_sphere(sphere):
    gev = green_evaluator(sphere)
    a1, a2 = np.array([0, 0, 1.0]), np.array([0, 1.0, 0])
    assert psi0_pair_energy(gev, a1, a2) == pytest.approx(4.0 * np.pi * float(gev.green(a1, a2)))


def test_sphere_shape_operator(sphere):
    ops = shape_operator_field(sphere)
    np.testing.assert_allclose(ops, np.tile(-np.eye(2), (len(sphere.vertices), 1, 1)))
    x, v = np.array([0, 0, 1.0]), np.array([1.0, 2.0, 0.0])
    np.testing.assert_allclose(shape_operator(sphere, x, v), -v)


def test_ellipsoid_shape_operator_at_pole():
    S = make_surface({"kind": "ellipsoid", "axes": [1.0, 1.0, 0.6], "subdivisions": 3})
    k = int(S.nearest_vertex([0.0, 0.0, 0.6]))
    ops = shape_operator_field(S)[k]
    np.testing.assert_allclose(ops, ops.T, atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(ops), [-0.6, -0.6], atol=0.1)


def test_torus_of_revolution_principal_curvatures():
    R, r = 1.0, 0.4
    S = make_surface({"kind": "torus_of_revolution", "R": R, "r": r, "n_major": 96, "n_minor": 32})
    u, theta = torus_angles(S.vertices, R)
    outward = np.stack([np.cos(theta) * np.cos(u), np.cos(theta) * np.sin(u), np.sin(theta)], axis=1)
    s = np.sign(np.sum(S.frames.normals * outward, axis=1))
    ops = shape_operator_field(S)
    np.testing.assert_allclose(ops, np.transpose(ops, (0, 2, 1)), atol=1e-12)
    # -dN has eigenvalues -1/r across the tube and -cos(theta)/(R + r cos(theta)) around it
    expected = np.sort(np.stack([-s / r, -s * np.cos(theta) / (R + r * np.cos(theta))], axis=1), axis=1)
    np.testing.assert_allclose(np.linalg.eigvalsh(ops), expected, atol=0.15)


def test_shape_operator_needs_embedding(torus):
    with pytest.raises(GeometryError):
        shape_operator_field(torus)


def test_sphere_extrinsic_correction_is_two_pi(sphere):
    cfg = VortexConfig.create(sphere, [[0, 0, 1.0], [0, 0, -1.0]], [1, 1])
    cf = build_ustar(green_evaluator(sphere), harmonic_basis(sphere), cfg, np.zeros(0))
    res = theta_minimize(sphere, cf)
    assert res["converged"]
    assert res["tildeW"] == pytest.approx(2.0 * np.pi, abs=1e-9)
    assert np.max(np.abs(theta_residual(sphere, cf, res["theta"]))) < 1e-8
    assert res["theta_gradient"] < 1e-4
    report = renorm_report(sphere, cfg, extrinsic=True)
    assert report.to_dict()["theta_gradient"] < 1e-4


def test_renorm_report(torus):
    cfg = VortexConfig.create(torus, DIPOLE, [1, -1])
    report = renorm_report(torus, cfg, radii=[1e-2])
    assert report.zero_flux_admissible is False
    assert set(report.W_quadrature) == {1e-2}
    assert report.W_quadrature[1e-2] == pytest.approx(report.W_closed, abs=5e-2)
    d = report.to_dict()
    assert d["W_closed"] == report.W_closed and len(d["phi"]) == 2
