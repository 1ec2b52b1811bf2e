import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dampedlab.flow import _fallback
from dampedlab.flow._backend import BACKEND, get_kernels
from dampedlab.flow.core import _profile_arrays, sample_energy_shell
from dampedlab.medium import get_medium

try:
    compiled = get_kernels("compiled")
except ImportError:  # pragma: no cover - extension not built
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")
MEDIA = ["trapping-well", "bump-metric", "free"]


def setup(name, count=40, seed=0):
    m = get_medium(name, 2)
    X, XI = sample_energy_shell(m, (0.5, 1.5), count, 5.0, seed)
    return m, _profile_arrays(m.radial_metric), _profile_arrays(m.radial_absorption), X, XI


def test_profile_eval_matches_medium():
    m = get_medium("trapping-well", 2)
    r = np.linspace(0, 12, 2001)
    v, dv = _fallback.profile_eval(*_profile_arrays(m.radial_metric), r)
    g, dg = m.radial_metric.evaluate(r)
    assert_allclose(v, g, rtol=1e-14, atol=1e-15)
    assert_allclose(dv, dg, rtol=1e-12, atol=1e-13)


def test_smooth_bump_slope_matches_difference():
    s = np.linspace(0, 1.2, 241)
    h = 1e-6
    fd = (_fallback.smooth_bump(s + h, 0.7) - _fallback.smooth_bump(s - h, 0.7)) / (2 * h)
    assert_allclose(_fallback.smooth_bump_slope(s, 0.7), fd, atol=1e-6)


@needs_compiled
@pytest.mark.parametrize("name", MEDIA)
@pytest.mark.parametrize("dt", [0.01, -0.01])
def test_paths_parity(name, dt):
    m, prof, _, X, XI = setup(name)
    stop = np.linspace(4.0, 9.0, len(X))
    pc, nc = compiled.radial_paths(*prof, X, XI, dt, 3000, stop)
    pp, npy = _fallback.radial_paths(*prof, X, XI, dt, 3000, stop)
    assert np.array_equal(nc, npy)
    assert np.array_equal(np.isnan(pc), np.isnan(pp))
    assert np.nanmax(np.abs(pc - pp)) <= 1e-12


@needs_compiled
@pytest.mark.parametrize("name", ["trapping-well", "trapping-well-offset", "bump-metric"])
def test_classify_parity(name):
    m, prof, aprof, X, XI = setup(name, count=60)
    oc = compiled.radial_classify(*prof, *aprof, X, XI, 0.01, 5000, 8.0)
    op = _fallback.radial_classify(*prof, *aprof, X, XI, 0.01, 5000, 8.0)
    assert np.array_equal(oc[0], op[0])
    for a, b in zip(oc[1:], op[1:]):
        assert_allclose(a, b, rtol=1e-10, atol=1e-13)


@needs_compiled
@pytest.mark.parametrize("dt", [0.005, -0.005])
def test_bump_integrals_parity(dt):
    m, prof, _, X, XI = setup("trapping-well", count=50)
    rng = np.random.default_rng(3)
    centers = np.hstack(sample_energy_shell(m, (0.5, 1.5), 8, 4.0, 5))
    radii = rng.uniform(0.2, 0.45, 8)
    horizons = rng.integers(0, 2000, 8)
    W = np.hstack([X, XI])
    # move half of the starting points into the bumps
    W[:8] = centers + 0.1 * rng.standard_normal((8, 4))
    X, XI = W[:, :2], W[:, 2:]
    oc = compiled.radial_bump_integrals(*prof, X, XI, dt, 2000, 9.0, centers, radii, 0.7, horizons)
    op = _fallback.radial_bump_integrals(*prof, X, XI, dt, 2000, 9.0, centers, radii, 0.7, horizons)
    assert np.any(op > 0)
    assert_allclose(oc, op, rtol=1e-10, atol=1e-13)


def test_bump_integral_converges_fast(rng):
    """The endpoint-corrected trapezoid beats the plain trapezoid's second order."""
    m, prof, _, _, _ = setup("bump-metric")
    k = get_kernels()
    c = np.hstack(sample_energy_shell(m, (0.5, 1.5), 1, 2.0, 4))
    X, XI = c[:, :2] + 0.05, c[:, 2:]
    T = 1.2

    def integral(dt):
        n = int(round(T / dt))
        return k.radial_bump_integrals(*prof, X, XI, dt, n, 50.0, c, np.array([0.4]), 0.7,
                                       np.array([n]))[0, 0]

    ref = integral(T / 6400)
    e1 = abs(integral(T / 100) - ref)
    e2 = abs(integral(T / 200) - ref)
    assert e1 / e2 >= 6.0
    assert ref > 0


def test_auto_backend_and_unknown_name():
    assert get_kernels() is (compiled if BACKEND == "compiled" else _fallback)
    assert get_kernels("python") is _fallback
    with pytest.raises(ValueError):
        get_kernels("fortran")


def test_pure_python_switch():
    env = dict(os.environ, LAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from dampedlab.flow import BACKEND, _backend; "
                          "print(BACKEND, _backend.kernels.__name__)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.split() == ["python", "dampedlab.flow._fallback"]
