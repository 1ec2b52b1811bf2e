import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dampedlab.errors import ConstructionError, InputError
from dampedlab.flow import (
    Bump,
    EscapeFunction,
    build_escape_function,
    f0_bracket,
    flow_map,
    hamiltonian,
    poisson_bracket_check,
    sample_energy_shell,
    write_bracket_csv,
)
from dampedlab.flow.escape import CORE
from dampedlab.medium import free_medium, get_medium

SHELL = (0.5, 1.5)


@pytest.fixture(scope="module")
def well():
    return get_medium("trapping-well", 2)


@pytest.fixture(scope="module")
def well_function(well):
    return build_escape_function(well, SHELL, count=400, damping_level=0.6)


def test_f0_bracket_free_is_twice_energy(rng):
    m = free_medium(3)
    X, XI = sample_energy_shell(m, SHELL, 200, 5.0, seed=1)
    assert_allclose(f0_bracket(m, X, XI), 2 * hamiltonian(m, X, XI), rtol=1e-14)


def test_f0_bracket_radial_formula(well):
    X, XI = sample_energy_shell(well, SHELL, 200, 5.0, seed=2)
    r = np.linalg.norm(X, axis=1)
    g, dg = well.radial_metric.evaluate(r)
    expected = 2 * g * np.sum(XI ** 2, axis=1) - r * dg * np.sum(XI ** 2, axis=1)
    assert_allclose(f0_bracket(well, X, XI), expected, rtol=1e-12, atol=1e-14)


def test_free_medium_uses_f0_only():
    m = free_medium(2)
    f = build_escape_function(m, SHELL, count=1000)
    assert f.bumps == [] and f.beta == 0 and f.c0 == pytest.approx(SHELL[0] / 8)
    X, XI = sample_energy_shell(m, SHELL, 1000, 5.0, seed=3)
    rep = poisson_bracket_check(f, X, XI)
    assert np.all(rep.brackets >= 1 - 1e-9)
    assert rep.passed and rep.c0_achieved >= 0.25 - 1e-9
    assert_allclose(rep.brackets, 2 * hamiltonian(m, X, XI), rtol=1e-8)


def test_bump_value_profile():
    b = Bump(np.zeros(4), 0.5, "trapped", -1, 10)
    W = np.array([[0, 0, 0, 0], [CORE * 0.5, 0, 0, 0], [0.5, 0, 0, 0], [0.43, 0, 0, 0]], float)
    v = b.value(W)
    assert v[0] == 1 and v[1] == pytest.approx(1) and v[2] == 0 and 0 < v[3] < 1
    assert b.travel_time(0.01) == pytest.approx(0.1)
    assert Bump(np.zeros(4), 0.5, "escape", 1, None).travel_time(0.01) is None


def single_bump_function(f, b):
    return EscapeFunction(f.medium, [b], 1.0, 0.0, f.c0, f.dt, f.r_g, f.interval, f.escape_horizon)


def test_single_bump_sign_at_center(well_function):
    # -sigma * int_0^h g(phi^{sigma t} w) dt, with a positive integrand at the centre
    d = well_function.medium.dimension
    for b in well_function.bumps:
        fb = single_bump_function(well_function, b)
        val = fb.compact_part(b.center[None, :d], b.center[None, d:])[0]
        assert -b.sigma * val > 0


def test_single_bump_bracket_identity(well_function, rng):
    f = well_function
    m = f.medium
    d = m.dimension
    b = f.bumps[0]
    fb = single_bump_function(f, b)
    v = rng.standard_normal((50, 2 * d))
    v *= (b.radius * rng.random(50) ** 0.25 / np.linalg.norm(v, axis=1))[:, None]
    near = b.center + v
    X, XI = sample_energy_shell(m, SHELL, 50, 5.0, seed=11)
    X = np.vstack([near[:, :d], X])
    XI = np.vstack([near[:, d:], XI])
    rep = poisson_bracket_check(fb, X, XI)
    assert np.max(np.abs(rep.brackets - fb.bracket_formula(X, XI))) <= 1e-3
    # at the centre the landing point is outside the support
    c = b.center[None]
    Xe, XIe = flow_map(m, c[:, :d], c[:, d:], b.sigma * b.horizon * f.dt, b.horizon)
    assert b.value(np.hstack([Xe, XIe]))[0] == 0
    at_c = poisson_bracket_check(fb, c[:, :d], c[:, d:]).brackets[0]
    assert at_c == pytest.approx(f0_bracket(m, c[:, :d], c[:, d:])[0] + 1.0, abs=1e-3)


def test_full_bracket_formula(well_function):
    X, XI = sample_energy_shell(well_function.medium, SHELL, 100, 5.0, seed=5)
    rep = poisson_bracket_check(well_function, X, XI)
    err = np.max(np.abs(rep.brackets - well_function.bracket_formula(X, XI)))
    assert err <= 1e-3 * max(1.0, well_function.weight)


def test_well_construction_passes(well_function, well):
    f = well_function
    assert f.info["trapped_bumps"] > 0
    assert f.info["trapped_bumps"] + f.info["escape_bumps"] == len(f.bumps)
    assert f.beta > 0 and f.c0 > 0
    X, XI = sample_energy_shell(well, SHELL, 400, 5.0, seed=0)
    assert poisson_bracket_check(f, X, XI).passed
    X, XI = sample_energy_shell(well, SHELL, 400, 5.0, seed=7)
    rep = poisson_bracket_check(f, X, XI)
    assert rep.passed and rep.c0_achieved >= f.c0


def test_well_default_level_uses_beta_only(well):
    f = build_escape_function(well, SHELL, count=300)
    assert f.bumps == [] and f.beta > 0
    X, XI = sample_energy_shell(well, SHELL, 300, 5.0, seed=0)
    assert poisson_bracket_check(f, X, XI).passed
    assert not poisson_bracket_check(f, X, XI, beta=0.0).passed


def test_escape_type_bumps_bump_metric():
    m = get_medium("bump-metric", 2, amplitude=0.8)
    X, XI = sample_energy_shell(m, SHELL, 300, 5.0, seed=0)
    f = build_escape_function(m, SHELL, samples=(X, XI))
    assert f.info["escape_bumps"] == len(f.bumps) > 0 and f.beta == 0
    rep = poisson_bracket_check(f, X, XI)
    assert rep.passed
    assert np.max(np.abs(rep.brackets - f.bracket_formula(X, XI))) <= 1e-3 * max(1.0, f.weight)


def test_compact_part_vanishes_beyond_radius(well, rng):
    f = build_escape_function(well, SHELL, count=200, damping_level=0.6, T_max=20.0)
    R = f.vanishing_radius(SHELL[1])
    assert R > f.support_radius > 0
    d = well.dimension
    dirs = rng.standard_normal((40, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = dirs * (R + 0.1)
    U = rng.standard_normal((40, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    XI = U * np.sqrt(rng.uniform(*SHELL, 40) / hamiltonian(well, X, U))[:, None]
    assert np.all(f.compact_part(X, XI) == 0)
    inside = sample_energy_shell(well, SHELL, 200, 5.0, seed=0)
    assert np.any(f.compact_part(*inside) != 0)


def test_displaced_damping_fails_construction():
    m = get_medium("trapping-well-offset", 2)
    with pytest.raises(ConstructionError, match="phase point"):
        build_escape_function(m, SHELL, count=300)


def test_interval_validation(well):
    with pytest.raises(InputError):
        build_escape_function(well, (0.0, 1.0), count=10)


def test_bracket_csv(tmp_path):
    m = free_medium(2)
    f = build_escape_function(m, SHELL, count=20)
    X, XI = sample_energy_shell(m, SHELL, 20, 5.0, seed=0)
    rep = poisson_bracket_check(f, X, XI)
    write_bracket_csv(rep, tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["sample", "bracket", "a", "margin"] and len(rows) == 21
    assert float(rows[1][3]) == rep.margins[0]
