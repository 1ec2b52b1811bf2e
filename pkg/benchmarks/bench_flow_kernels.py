"""Time the compiled flow kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_flow_kernels.py [--points 2000] [--steps 2000] [--repeat 3]

Prints the best wall time of each backend and the largest difference
between their outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dampedlab.flow import _fallback
from dampedlab.flow._backend import get_kernels
from dampedlab.flow.core import _profile_arrays, sample_energy_shell
from dampedlab.medium import get_medium


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--bumps", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        compiled = get_kernels("compiled")
    except ImportError:
        print("compiled kernels not built; only the fallback is available")
        return 1
    m = get_medium("trapping-well", 2)
    kn, cf, fi, fo = _profile_arrays(m.radial_metric)
    akn, acf, ai, ao = _profile_arrays(m.radial_absorption)
    X, XI = sample_energy_shell(m, (0.5, 1.5), args.points, 5.0, 0)
    rng = np.random.default_rng(1)
    centers = np.hstack(sample_energy_shell(m, (0.5, 1.5), args.bumps, 4.0, 2))
    radii = rng.uniform(0.2, 0.45, args.bumps)
    horizons = rng.integers(1, args.steps, args.bumps)
    stop = 20.0
    dt = 0.01
    cases = {
        "radial_paths": lambda k: k.radial_paths(kn, cf, fi, fo, X, XI, dt, args.steps, stop)[0],
        "radial_classify": lambda k: np.column_stack(
            k.radial_classify(kn, cf, fi, fo, akn, acf, ai, ao, X, XI, dt, args.steps, stop)),
        "radial_bump_integrals": lambda k: k.radial_bump_integrals(
            kn, cf, fi, fo, X, XI, dt, args.steps, stop, centers, radii, 0.7, horizons),
    }
    print(f"{'kernel':24s} {'compiled [s]':>13s} {'numpy [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases.items():
        tc, oc = best_time(lambda: fn(compiled), args.repeat)
        tp, op = best_time(lambda: fn(_fallback), args.repeat)
        diff = np.nanmax(np.abs(np.asarray(oc, float) - np.asarray(op, float)))
        print(f"{name:24s} {tc:13.4f} {tp:11.4f} {tp / tc:8.1f} {diff:10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
