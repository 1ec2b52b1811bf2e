import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dampedlab.errors import InputError
from dampedlab.medium import (
    MediumSpec,
    MetricDensitySpec,
    RadialProfile,
    builtin_media,
    damped_free_medium,
    evaluate_fields,
    free_medium,
    get_medium,
    japanese_bracket,
    radial_medium,
    trapping_well_medium,
    verify_symbol_decay,
)

RADII = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]


def test_builtin_names():
    names = {m.name for m in builtin_media(2)}
    assert {"free", "damped-free", "bump-metric", "trapping-well"} <= names
    # the trapping media need d >= 2
    assert "trapping-well" not in {m.name for m in builtin_media(1)}


def test_free_fields(rng):
    m = free_medium(3)
    for x in rng.normal(size=(5, 3)) * 10:
        G, a = evaluate_fields(m, x)
        assert_array_equal(G, np.eye(3))
        assert a == 0.0


def test_damped_free_values():
    m = damped_free_medium(2, c0=1.0, rho=1.0)
    assert evaluate_fields(m, np.zeros(2))[1] == pytest.approx(1.0)
    x = np.array([1.0, np.sqrt(2.0)])
    assert evaluate_fields(m, x)[1] == pytest.approx(0.25)


def test_bump_metric_far_field():
    m = get_medium("bump-metric", 2)
    G, _ = evaluate_fields(m, np.array([10.0, -3.0]))
    assert_array_equal(G, np.eye(2))


def test_evaluate_fields_rejects_bad_points():
    m = free_medium(2)
    with pytest.raises(InputError):
        evaluate_fields(m, np.array([np.nan, 0.0]))
    with pytest.raises(InputError):
        evaluate_fields(m, np.zeros(3))


def test_unknown_medium():
    with pytest.raises(InputError):
        get_medium("nope", 2)


def test_trapping_medium_needs_d2():
    with pytest.raises(InputError):
        trapping_well_medium(1)


@pytest.mark.parametrize("m", builtin_media(2) + builtin_media(3), ids=lambda m: f"{m.name}-{m.dimension}")
def test_builtin_decay_passes(m):
    assert verify_symbol_decay(m, RADII).passed


@pytest.mark.parametrize("m", builtin_media(2), ids=lambda m: m.name)
def test_builtin_field_invariants(m, rng):
    x = rng.uniform(-8, 8, size=(400, 2))
    G = m.metric(x)
    ev = np.linalg.eigvalsh(G)
    assert np.all(ev > 0)
    assert np.all(ev >= 1 - m.eps - 1e-12) and np.all(ev <= 1 + m.eps + 1e-12)
    assert np.all(m.absorption(x) >= 0)


def test_fields_deterministic():
    m = get_medium("trapping-well", 2)
    x = np.array([2.3, 1.1])
    first = evaluate_fields(m, x)
    second = evaluate_fields(m, x)
    assert_array_equal(first[0], second[0])
    assert first[1] == second[1]


def test_free_decay_constants_vanish():
    rep = verify_symbol_decay(free_medium(2), RADII)
    assert rep.passed
    assert_array_equal(rep.constants, 0.0)


def test_damped_free_decay_constant_one():
    rep = verify_symbol_decay(damped_free_medium(2), RADII)
    assert_allclose(rep.constants[:, 2], 1.0, rtol=1e-12)


def test_slow_absorption_flagged():
    base = free_medium(2)
    slow = base.with_absorption(lambda x: 1.0 / japanese_bracket(x), "slow")
    rep = verify_symbol_decay(slow, RADII)
    assert not rep.passed
    assert rep.violations


def test_decay_needs_radii():
    with pytest.raises(InputError):
        verify_symbol_decay(free_medium(2), [])
    with pytest.raises(InputError):
        verify_symbol_decay(free_medium(2), [2.0, 1.0])


def test_well_critical_circles():
    m = trapping_well_medium(2)
    r_s, r_u = m.info["stable_radius"], m.info["unstable_radius"]
    assert 0 < r_s < r_u
    gam = m.radial_metric
    # d/dr (gamma / r^2) vanishes at both circles
    for r in (r_s, r_u):
        g, dg = gam.evaluate(np.array([r]))
        assert abs(r * dg[0] - 2 * g[0]) < 1e-9
    # the damping annulus covers both circles
    a = m.absorption(np.array([[r_s, 0.0], [r_u, 0.0]]))
    assert np.all(a > 0.3)


@settings(max_examples=40, deadline=None)
@given(center=st.floats(1.0, 4.0), width=st.floats(0.2, 1.0), amp=st.floats(-0.5, 0.5),
       r=st.floats(0.0, 6.0))
def test_profile_derivative_matches_difference(center, width, amp, r):
    prof = RadialProfile.bump(center, width, amp, base=1.0)
    h = 1e-6
    v, dv = prof.evaluate(np.array([r]))
    vp, _ = prof.evaluate(np.array([r + h]))
    vm, _ = prof.evaluate(np.array([r - h]))
    assert abs(dv[0] - (vp[0] - vm[0]) / (2 * h)) < 1e-5 * max(1.0, abs(amp) / width ** 2)


def test_profile_roundtrip():
    prof = RadialProfile.bump(2.0, 1.0, 0.3, base=1.0)
    back = RadialProfile.from_dict(prof.to_dict())
    r = np.linspace(0, 4, 50)
    assert_array_equal(prof(r), back(r))


def test_profile_validation():
    with pytest.raises(InputError):
        RadialProfile((0.0, 1.0, 0.5), ((1.0,), (1.0,)))
    with pytest.raises(InputError):
        RadialProfile.bump(0.5, 1.0, 0.1)
    with pytest.raises(InputError):
        radial_medium(2, RadialProfile.constant(2.0), None)


def test_medium_validation():
    with pytest.raises(InputError):
        free_medium(0)
    with pytest.raises(InputError):
        MediumSpec(2, lambda x: x, lambda x: x, -1.0, "bad")


def test_metric_density_check():
    base = free_medium(2)
    ok = MetricDensitySpec(base, lambda x: np.ones(np.shape(x)[:-1]), 3.0)
    ok.check(np.array([[0.0, 0.0], [5.0, 0.0]]))
    bad = MetricDensitySpec(base, lambda x: 2.0 * np.ones(np.shape(x)[:-1]), 3.0)
    with pytest.raises(InputError):
        bad.check(np.array([[5.0, 0.0]]))
