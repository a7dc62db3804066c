import numpy as np
import pytest

from vortexlab.canonical import build_ustar, vortex_distance
from vortexlab.cli import DEFAULT_T_GRID
from vortexlab.errors import ConfigError, ConvergenceError, GeometryError
from vortexlab.geometry import geodesic_dist, make_surface
from vortexlab.gl import (POTENTIALS, DiscreteField, energy_ex, energy_in, energy_mm, expansion_report,
                          get_potential, iota_estimate, load_checkpoint, minimize_energy, mm_decomposition,
                          radial_profile_in, radial_profile_mm, save_checkpoint, two_eps_check)
from vortexlab.greens import green_evaluator
from vortexlab.harmonic import VortexConfig, harmonic_basis
from vortexlab.vortex import ball_construction, vorticity

GL = POTENTIALS["gl"]
T_GRID = (0.2, 0.1, 0.05)


@pytest.fixture(scope="module")
def sphere():
    return make_surface({"kind": "unit_sphere", "subdivisions": 2})


@pytest.fixture(scope="module")
def torus():
    return make_surface({"kind": "flat_torus", "n": 16})


@pytest.fixture(scope="module")
def profiles():
    return {t: (radial_profile_in(t), radial_profile_mm(t)) for t in T_GRID}


def tangent_field(S, scale=0.6):
    """Projection of a constant ambient vector, scaled so that |m| <= scale."""
    m = scale * S.from_ambient(np.tile([1.0, 0.0, 0.0], (len(S.vertices), 1)))
    return m, np.sqrt(1.0 - np.abs(m) ** 2)


@pytest.mark.parametrize("name", ["gl", "mm"])
def test_potentials(name):
    pot = get_potential(name)
    assert pot.F(1.0) == 0.0
    assert pot.growth_constant() == pytest.approx(1.0)
    s = np.linspace(0.0, 1.0, 11)
    assert np.all(pot.F(s) >= 0.0)


def test_unknown_potential():
    with pytest.raises(ConfigError):
        get_potential("quartic")


def test_discrete_field_checks(sphere):
    with pytest.raises(ConfigError):
        DiscreteField(sphere, np.ones(3))
    with pytest.raises(ConfigError):
        DiscreteField(sphere, np.full(len(sphere.vertices), np.nan))
    fld = DiscreteField.random(sphere, seed=5)
    assert np.all(np.abs(fld.values) <= 1.0)
    np.testing.assert_allclose(np.sum(fld.ambient() * sphere.frames.normals, axis=1), 0.0, atol=1e-12)


def test_energies_are_gauge_invariant(sphere):
    u = DiscreteField.random(sphere, seed=1).values
    c = np.exp(0.7j)
    assert energy_in(sphere, c * u, 0.2, GL) == pytest.approx(energy_in(sphere, u, 0.2, GL), rel=1e-12)
    assert energy_ex(sphere, c * u, 0.2, GL) == pytest.approx(energy_ex(sphere, u, 0.2, GL), rel=1e-12)


def test_constant_field_has_zero_energy_on_flat_torus(torus):
    assert energy_in(torus, np.ones(len(torus.vertices)), 0.1, GL) == pytest.approx(0.0, abs=1e-12)


def test_energy_argument_checks(sphere, torus):
    u = np.ones(len(torus.vertices))
    with pytest.raises(ConfigError):
        energy_in(torus, u, 0.0, GL)
    with pytest.raises(GeometryError):
        energy_ex(torus, u, 0.1, GL)
    m = 0.5 * np.ones(len(sphere.vertices))
    with pytest.raises(ConfigError):
        energy_mm(sphere, m, np.zeros(len(sphere.vertices)), 0.1, GL)


def test_mm_decomposition(sphere):
    m, mperp = tangent_field(sphere)
    parts = mm_decomposition(sphere, m, mperp, 0.2, GL)
    assert parts["direct"] == pytest.approx(energy_mm(sphere, m, mperp, 0.2, GL))
    assert parts["direct"] > 0.0 and parts["decomposed"] > 0.0
    assert parts["gap"] == pytest.approx(abs(parts["direct"] - parts["decomposed"]))


@pytest.mark.parametrize("kind", ["intrinsic", "extrinsic", "micromagnetic"])
def test_minimize_energy_descends(sphere, kind):
    init = DiscreteField.random(sphere, seed=0)
    out = minimize_energy(sphere, init, 0.3, GL, kind=kind, flow_steps=30, max_outer=30)
    assert all(b <= a + 1e-12 for a, b in zip(out.history, out.history[1:]))
    assert out.energy == pytest.approx(out.history[-1])
    if kind == "micromagnetic":
        norms = np.abs(out.field.values) ** 2 + out.field.mperp ** 2
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    else:
        assert np.all(np.abs(out.field.values) <= 1.0 + 1e-12)


def test_minimize_energy_checks_kind(sphere, torus):
    with pytest.raises(ConfigError):
        minimize_energy(sphere, DiscreteField.random(sphere, seed=0), 0.3, GL, kind="magnetic")
    with pytest.raises(GeometryError):
        minimize_energy(torus, DiscreteField.random(torus, seed=0), 0.3, GL, kind="extrinsic")


def test_profiles_converge(profiles):
    for sol_in, sol_mm in profiles.values():
        assert sol_in.converged and sol_mm.converged
        assert sol_in.values[-1] == 1.0
        assert sol_mm.values[-1] == pytest.approx(0.5 * np.pi)
        assert np.all(np.diff(sol_in.values) >= -1e-9)


@pytest.mark.parametrize("k", [0, 1])
def test_profile_monotonicity(profiles, k):
    shifted = [profiles[t][k].shifted for t in T_GRID]
    assert all(b <= a + 1e-9 for a, b in zip(shifted, shifted[1:]))


def test_intrinsic_profile_is_below_micromagnetic(profiles):
    for sol_in, sol_mm in profiles.values():
        assert sol_in.I_value <= sol_mm.I_value + 1e-6


@pytest.mark.parametrize("t", [0.0, 0.5, -0.1])
def test_profile_ratio_checks(t):
    with pytest.raises(ConfigError):
        radial_profile_in(t)


def test_iota_estimate(profiles):
    est = iota_estimate([0.05, 0.2, 0.1])
    assert est["t"] == list(T_GRID)
    np.testing.assert_allclose(est["shifted"], [profiles[t][0].shifted for t in T_GRID], rtol=1e-12)
    g1, g2 = est["shifted"][-2:]
    assert est["final_increment"] == pytest.approx(abs(g2 - g1))
    assert est["richardson"] == pytest.approx((0.1 ** 2 * g2 - 0.05 ** 2 * g1) / (0.1 ** 2 - 0.05 ** 2))


def test_checkpoint_round_trip(sphere, tmp_path):
    m, mperp = tangent_field(sphere)
    fld = DiscreteField(sphere, m, mperp=mperp)
    path = tmp_path / "field.csv"
    save_checkpoint(path, fld, 0.05, "gl", "micromagnetic", config_hash="abc")
    header, values, loaded_mperp = load_checkpoint(path, sphere)
    assert header["epsilon"] == "0.05" and header["config_hash"] == "abc"
    assert header["energy_kind"] == "micromagnetic"
    np.testing.assert_array_equal(values, m)
    np.testing.assert_array_equal(loaded_mperp, mperp)
    with pytest.raises(ConfigError):
        load_checkpoint(path, make_surface({"kind": "unit_sphere", "subdivisions": 1}))


@pytest.fixture(scope="module")
def planted_sphere():
    S = make_surface({"kind": "unit_sphere", "subdivisions": 4})
    a = np.array([0.0, 1.0, (1.0 + np.sqrt(5.0)) / 2.0])
    a /= np.linalg.norm(a)
    cfg = VortexConfig.create(S, [a, -a], [1, 1])
    cf = build_ustar(green_evaluator(S), harmonic_basis(S), cfg, np.zeros(0))
    return S, cfg, cf.field


@pytest.mark.parametrize("eps", [0.2, 0.1])
def test_expansion_report_on_planted_field(planted_sphere, eps):
    S, cfg, field = planted_sphere
    u = DiscreteField(S, field * np.tanh(vortex_distance(S, cfg) / 0.2))
    report = expansion_report(S, u, eps, GL, iota=0.0, sigma=0.8)
    assert report.n == 2 and sorted(report.degrees.tolist()) == [1, 1]
    assert report.W == pytest.approx(2.0 * np.pi * (np.log(2.0) - 1.0), abs=1e-9)
    assert report.log_term == pytest.approx(2.0 * np.pi * np.log(1.0 / eps))
    row = report.row()
    assert set(row) == {"epsilon", "E", "n_pi_log", "W", "n_iota", "tildeW", "residual"}
    assert np.isnan(row["tildeW"])


def test_two_eps_check(planted_sphere):
    S, cfg, field = planted_sphere
    u = DiscreteField(S, field * np.tanh(vortex_distance(S, cfg) / 0.2))
    r1 = expansion_report(S, u, 0.2, GL, iota=0.0, sigma=0.8)
    r2 = expansion_report(S, u, 0.1, GL, iota=0.0, sigma=0.8)
    check = two_eps_check(r1, r2)
    assert check["expected"] == pytest.approx(2.0 * np.pi * np.log(0.5))
    assert check["actual"] == pytest.approx(r1.energy - r2.energy)
    assert check["residual_gap"] == pytest.approx(abs(r1.residual - r2.residual))


def test_expansion_report_needs_matching_degrees(sphere):
    u = DiscreteField(sphere, np.ones(len(sphere.vertices)))
    with pytest.raises(ConvergenceError):
        expansion_report(sphere, u, 0.1, GL, iota=0.0)


def test_default_t_grid_stabilizes_iota():
    est = iota_estimate(DEFAULT_T_GRID)
    g = est["shifted"]
    assert all(b <= a + 1e-9 for a, b in zip(g, g[1:]))
    assert est["final_increment"] < 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_random_start_on_sphere_ends_with_antipodal_pair(seed):
    S = make_surface({"kind": "unit_sphere", "subdivisions": 3})
    eps = 0.25
    out = minimize_energy(S, DiscreteField.random(S, seed=seed), eps, GL, max_outer=2000)
    report = expansion_report(S, out.field, eps, GL, iota=0.0, sigma=0.6)
    assert report.n == 2 and report.degrees.tolist() == [1, 1]
    assert float(geodesic_dist(S, *report.points)) >= 0.8 * np.pi


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_random_start_on_flat_torus_ends_without_vortices(seed):
    S = make_surface({"kind": "flat_torus", "n": 32})
    eps = 0.1
    out = minimize_energy(S, DiscreteField.random(S, seed=seed), eps, GL, max_outer=2000)
    u = out.field.values
    np.testing.assert_allclose(vorticity(S, u), 0.0, atol=1e-9)
    balls = ball_construction(S, u, eps, 0.3)
    assert len(balls.as_config()) == 0
