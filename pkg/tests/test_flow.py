import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dampedlab.errors import EnergyDriftError, InputError
from dampedlab.flow import (
    PhasePoint,
    circular_orbit,
    classify_batch,
    classify_trajectory,
    escape_radius_estimate,
    flow_map,
    geometric_control_check,
    hamiltonian,
    integrate_flow,
    sample_energy_shell,
    trace_both,
    write_trajectory_csv,
)
from dampedlab.medium import builtin_media, free_medium, get_medium


def test_phase_point_validation():
    with pytest.raises(InputError):
        PhasePoint([0, 0], [1.0])
    with pytest.raises(InputError):
        PhasePoint([np.inf], [1.0])
    assert_allclose(PhasePoint([1, 2], [3, 4]).as_array(), [1, 2, 3, 4])


def test_free_straight_lines_exact():
    m = free_medium(2)
    w = PhasePoint([0.3, -1.0], [0.7, 0.4])
    tr = integrate_flow(m, w, 5.0, 0.1)
    assert_allclose(tr.X, w.x + 2 * tr.times[:, None] * w.xi, atol=1e-12)
    assert_allclose(tr.XI, np.broadcast_to(w.xi, tr.XI.shape), atol=1e-14)
    assert tr.energy_drift <= 1e-14


def test_backward_integration_reverses_forward():
    m = get_medium("bump-metric", 2)
    w = PhasePoint([1.0, 0.5], [0.3, 0.8])
    X1, XI1 = flow_map(m, w.x, w.xi, 2.0, 400)
    X0, XI0 = flow_map(m, X1, XI1, -2.0, 400)
    assert_allclose(np.hstack([X0[0], XI0[0]]), w.as_array(), atol=1e-10)
    bwd = integrate_flow(m, w, 1.0, 0.01, direction=-1)
    assert bwd.times[0] == pytest.approx(-1.0) and bwd.times[-1] == 0


def test_fourth_order_convergence():
    m = get_medium("bump-metric", 2, amplitude=0.5)
    w = PhasePoint([1.5, -0.4], [0.2, 0.9])
    T = 4.0

    def end(dt):
        return integrate_flow(m, w, T, dt, energy_tol=1e-2).points[-1]

    ref = end(0.005)
    e1 = np.linalg.norm(end(0.08) - ref)
    e2 = np.linalg.norm(end(0.04) - ref)
    assert e1 / e2 >= 14


@pytest.mark.parametrize("m", builtin_media(2), ids=lambda m: m.name)
def test_energy_conservation_builtin(m):
    X, XI = sample_energy_shell(m, (0.5, 1.5), 3, 3.0, seed=1)
    for x, xi in zip(X, XI):
        tr = integrate_flow(m, PhasePoint(x, xi), 100.0, 1e-3)
        assert tr.energy_drift <= 1e-6


def test_energy_drift_error():
    m = get_medium("trapping-well", 2)
    w = circular_orbit(m, m.info["stable_radius"], 1.0)
    with pytest.raises(EnergyDriftError):
        integrate_flow(m, w, 50.0, 0.5)


def test_free_classification_and_escape_time():
    m = free_medium(2)
    x0 = np.array([0.5, 0.0])
    times = []
    for s in (0.5, 1.0, 2.0):
        tr = trace_both(m, PhasePoint(x0, [0.0, s]), 50.0, 0.01, 0.0)
        assert classify_trajectory(tr, 5.0, 50.0, 0.0, m) == "nontrapped"
        times.append(tr.escape_time)
    # |x0 + 2 t xi| = |x0| + 1
    expected = [np.sqrt(1.5 ** 2 - 0.25) / (2 * s) for s in (0.5, 1.0, 2.0)]
    assert_allclose(times, expected, atol=0.011)
    assert times[0] > times[1] > times[2]


def test_stationary_point_trapped():
    m = free_medium(2)
    tr = trace_both(m, PhasePoint([1.0, 0.0], [0.0, 0.0]), 10.0, 0.1, 0.0)
    assert classify_trajectory(tr, 5.0, 10.0, 0.0, m) == "trapped"


def test_circular_orbit_trapped_long_time():
    m = get_medium("trapping-well", 2)
    r = m.info["stable_radius"]
    w = circular_orbit(m, r, 1.0)
    period = 2 * np.pi * r / (2 * np.sqrt(m.radial_metric(r) * 1.0))
    T = 1000 * period
    tr = integrate_flow(m, w, T, 0.01)
    radii = np.linalg.norm(tr.X, axis=1)
    assert np.max(np.abs(radii - r)) <= 1e-3
    res = classify_batch(m, w.x[None], w.xi[None], T, 0.01, escape_radius_estimate(m))
    assert res.classes[0] == "trapped"


def test_escape_monotonicity_after_predicate():
    m = get_medium("bump-metric", 2, amplitude=0.5)
    r_g = escape_radius_estimate(m)
    X, XI = sample_energy_shell(m, (0.5, 1.5), 20, 3.0, seed=4)
    for x, xi in zip(X, XI):
        tr = integrate_flow(m, PhasePoint(x, xi), 40.0, 0.01)
        r2 = np.sum(tr.X ** 2, axis=1)
        stop = max(r_g, np.linalg.norm(x) + 1)
        outward = np.einsum("ij,ij->i", tr.X, tr.XI) > 0
        hit = np.nonzero((np.sqrt(r2) >= stop) & outward)[0]
        if hit.size:
            assert np.all(np.diff(r2[hit[0]:]) >= 0)


def test_escape_radius_estimates():
    assert escape_radius_estimate(free_medium(2)) == 0.0
    well = get_medium("trapping-well", 2)
    r_g = escape_radius_estimate(well)
    # convexity of |X|^2 fails up to the unstable circle (radii sampled every 0.05)
    assert well.info["unstable_radius"] - 0.06 <= r_g / 2 <= well.info["unstable_radius"]


def test_classify_batch_matches_single():
    m = get_medium("trapping-well", 2)
    r_g = escape_radius_estimate(m)
    X, XI = sample_energy_shell(m, (0.5, 1.5), 12, 5.0, seed=2)
    batch = classify_batch(m, X, XI, 60.0, 0.01, r_g)
    for i in range(len(X)):
        tr = trace_both(m, PhasePoint(X[i], XI[i]), 60.0, 0.01, r_g)
        assert classify_trajectory(tr, 0.0, 60.0, r_g, m) == batch.classes[i]


def test_energy_shell_sampling():
    m = get_medium("bump-metric", 2)
    X, XI = sample_energy_shell(m, (0.5, 1.5), 500, 5.0, seed=0)
    p = hamiltonian(m, X, XI)
    assert np.all((p >= 0.5 - 1e-12) & (p <= 1.5 + 1e-12))
    assert np.all(np.linalg.norm(X, axis=1) <= 5.0)
    with pytest.raises(InputError):
        sample_energy_shell(m, (0.0, 1.0), 5, 1.0)


@pytest.mark.parametrize("m", builtin_media(2), ids=lambda m: m.name)
def test_undecided_fraction_small(m):
    r_g = escape_radius_estimate(m)
    X, XI = sample_energy_shell(m, (0.5, 1.5), 300, 5.0, seed=9)
    res = classify_batch(m, X, XI, 1000.0, 0.02, r_g)
    assert np.mean(res.classes == "undecided") <= 0.02


# ----------------------------------------------------------------- geometric control

def test_control_free_vacuous():
    rep = geometric_control_check(free_medium(2), count=200, T_max=50.0)
    assert rep.trapped == 0 and rep.passed and rep.fraction_controlled == 1.0


def test_control_well_passes():
    rep = geometric_control_check(get_medium("trapping-well", 2), count=400)
    assert rep.trapped > 0
    assert rep.passed and rep.controlled == rep.trapped + rep.semi_trapped
    assert rep.worst_margin > 0


def test_control_offset_fails_on_circle():
    m = get_medium("trapping-well-offset", 2)
    rep = geometric_control_check(m, count=400)
    assert not rep.passed
    r_s = m.info["stable_radius"]
    assert any(abs(np.linalg.norm(w.x) - r_s) < 1e-9 for w in rep.failures)


def test_trajectory_csv(tmp_path):
    m = free_medium(2)
    tr = integrate_flow(m, PhasePoint([0, 0], [1, 0]), 1.0, 0.25)
    write_trajectory_csv(m, tr, tmp_path / "traj.csv")
    rows = list(csv.reader(open(tmp_path / "traj.csv")))
    assert rows[0] == ["t", "x0", "x1", "xi0", "xi1", "p"]
    assert len(rows) == 6 and float(rows[-1][1]) == pytest.approx(2.0)
