"""Hamiltonian flow of ``p(x, xi) = <G(x) xi, xi>`` and trapping analysis.

Radial media (``G = gamma(|x|) I``) are integrated by the kernels selected in
:mod:`._backend` with the exact derivative of ``gamma``; other media use a
NumPy RK4 with a centred finite-difference gradient of ``p``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import EnergyDriftError, InputError
from ..medium import MediumSpec, RadialProfile
from ._backend import kernels

__all__ = [
    "PhasePoint",
    "Trajectory",
    "ControlReport",
    "hamiltonian",
    "hamiltonian_field",
    "integrate_flow",
    "flow_paths",
    "flow_map",
    "escape_radius_estimate",
    "trace_both",
    "classify_trajectory",
    "classify_batch",
    "sample_energy_shell",
    "circular_orbit",
    "geometric_control_check",
    "write_trajectory_csv",
]

CLASSES = ("trapped", "forward_nontrapped", "backward_nontrapped", "nontrapped", "undecided")
FD_STEP = 1e-6


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        xi = np.asarray(self.xi, dtype=float).ravel()
        if x.shape != xi.shape:
            raise InputError("x and xi must have the same dimension")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise InputError("phase point must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dimension(self) -> int:
        return self.x.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.xi])


def _profile_arrays(profile: RadialProfile | None):
    if profile is None:
        return np.zeros(0), np.zeros((0, 1)), 0.0, 0.0
    return profile.knot_array, profile.coefficient_table, profile.fill_inner, profile.fill_outer


def hamiltonian(m: MediumSpec, X, XI) -> np.ndarray:
    """``<G(x) xi, xi>`` for arrays of points of shape ``(..., d)``."""
    X = np.asarray(X, dtype=float)
    XI = np.asarray(XI, dtype=float)
    if m.radial_metric is not None:
        g = m.radial_metric(np.linalg.norm(X, axis=-1))
        return g * np.sum(XI * XI, axis=-1)
    G = m.metric(X)
    return np.einsum("...i,...ij,...j->...", XI, G, XI)


def hamiltonian_field(m: MediumSpec, X, XI):
    """``(dp/dxi, -dp/dx)`` for arrays of shape ``(M, d)``."""
    X = np.asarray(X, dtype=float)
    XI = np.asarray(XI, dtype=float)
    if m.radial_metric is not None:
        r = np.linalg.norm(X, axis=-1)
        g, dg = m.radial_metric.evaluate(r)
        safe = np.where(r > 0, r, 1.0)
        c = np.where(r > 0, -dg * np.sum(XI * XI, axis=-1) / safe, 0.0)
        return 2.0 * g[..., None] * XI, c[..., None] * X
    G = m.metric(X)
    dx = 2.0 * np.einsum("...ij,...j->...i", G, XI)
    dxi = np.zeros_like(X)
    h = FD_STEP * np.maximum(1.0, np.linalg.norm(X, axis=-1))
    for k in range(X.shape[-1]):
        e = np.zeros(X.shape[-1])
        e[k] = 1.0
        shift = h[..., None] * e
        dxi[..., k] = -(hamiltonian(m, X + shift, XI) - hamiltonian(m, X - shift, XI)) / (2 * h)
    return dx, dxi


def _rk4_generic(m, X, XI, dt):
    k1x, k1p = hamiltonian_field(m, X, XI)
    k2x, k2p = hamiltonian_field(m, X + 0.5 * dt * k1x, XI + 0.5 * dt * k1p)
    k3x, k3p = hamiltonian_field(m, X + 0.5 * dt * k2x, XI + 0.5 * dt * k2p)
    k4x, k4p = hamiltonian_field(m, X + dt * k3x, XI + dt * k3p)
    return (X + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            XI + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p))


def flow_paths(m: MediumSpec, X0, XI0, dt: float, nsteps: int, stop_radius=np.inf):
    """Sampled trajectories ``(paths[M, nsteps+1, 2d], nvalid[M])``.

    ``dt < 0`` integrates backwards.  A trajectory stops once
    ``|x| >= stop_radius`` while moving outward; later samples are NaN.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    XI0 = np.atleast_2d(np.asarray(XI0, dtype=float))
    if m.radial_metric is not None:
        kn, cf, fi, fo = _profile_arrays(m.radial_metric)
        return kernels.radial_paths(kn, cf, fi, fo, X0, XI0, float(dt), int(nsteps), stop_radius)
    M, d = X0.shape
    stop = np.broadcast_to(np.asarray(stop_radius, dtype=float), (M,))
    paths = np.full((M, nsteps + 1, 2 * d), np.nan)
    paths[:, 0] = np.hstack([X0, XI0])
    nvalid = np.ones(M, dtype=np.int64)
    X, XI = X0.copy(), XI0.copy()
    active = np.ones(M, dtype=bool)
    sgn = np.sign(dt)
    for step in range(1, nsteps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        X[idx], XI[idx] = _rk4_generic(m, X[idx], XI[idx], dt)
        paths[idx, step] = np.hstack([X[idx], XI[idx]])
        nvalid[idx] = step + 1
        outward = sgn * np.einsum("ij,ij->i", X[idx], np.einsum("...ij,...j->...i", m.metric(X[idx]), XI[idx]))
        done = (np.linalg.norm(X[idx], axis=1) >= stop[idx]) & (outward > 0)
        active[idx[done]] = False
    return paths, nvalid


def flow_map(m: MediumSpec, X0, XI0, t: float, steps: int = 1):
    """``phi^t`` applied to a batch of points with ``steps`` RK4 steps."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    XI0 = np.atleast_2d(np.asarray(XI0, dtype=float))
    paths, _ = flow_paths(m, X0, XI0, t / steps, steps)
    d = X0.shape[1]
    return paths[:, -1, :d], paths[:, -1, d:]


@dataclass
class Trajectory:
    """Samples of a trajectory; ``times`` may be negative for the backward part."""

    times: np.ndarray
    points: np.ndarray
    energy_drift: float
    classification: str = "undecided"
    escape_time: float | None = None

    @property
    def dimension(self) -> int:
        return self.points.shape[1] // 2

    @property
    def X(self) -> np.ndarray:
        return self.points[:, : self.dimension]

    @property
    def XI(self) -> np.ndarray:
        return self.points[:, self.dimension:]

    @property
    def samples(self):
        return [(float(t), PhasePoint(p[: self.dimension], p[self.dimension:]))
                for t, p in zip(self.times, self.points)]

    @property
    def initial(self) -> PhasePoint:
        i = int(np.argmin(np.abs(self.times)))
        return PhasePoint(self.X[i], self.XI[i])


def integrate_flow(m: MediumSpec, w0: PhasePoint, T: float, dt: float,
                   stop_radius: float = np.inf, energy_tol: float = 1e-6,
                   direction: int = 1) -> Trajectory:
    """RK4 trajectory from ``w0`` over ``[0, T]`` (``direction=-1``: ``[-T, 0]``)."""
    if not dt > 0:
        raise InputError("dt must be positive")
    if not T >= 0:
        raise InputError("T must be non-negative")
    if direction not in (1, -1):
        raise InputError("direction must be +1 or -1")
    nsteps = int(np.ceil(T / dt - 1e-12))
    step = T / nsteps if nsteps else dt
    paths, nvalid = flow_paths(m, w0.x[None], w0.xi[None], direction * step, nsteps, stop_radius)
    pts = paths[0, : nvalid[0]]
    times = direction * step * np.arange(nvalid[0])
    d = w0.dimension
    p = hamiltonian(m, pts[:, :d], pts[:, d:])
    p0 = p[0]
    drift = float(np.max(np.abs(p - p0)) / p0) if p0 > 0 else float(np.max(np.abs(p - p0)))
    if drift > energy_tol:
        raise EnergyDriftError(f"relative energy drift {drift:.2e} exceeds {energy_tol:.1e}; reduce dt")
    if direction < 0:
        times, pts = times[::-1], pts[::-1]
    return Trajectory(times, pts, drift)


def _r2_acceleration(m: MediumSpec, X, XI) -> np.ndarray:
    """``d^2/dt^2 |X(t)|^2`` at ``t = 0`` for points ``(X, XI)``."""
    dx, dxi = hamiltonian_field(m, X, XI)
    if m.radial_metric is not None:
        r = np.linalg.norm(X, axis=-1)
        g, dg = m.radial_metric.evaluate(r)
        safe = np.where(r > 0, r, 1.0)
        # d/dt (G xi) = gamma' (x.xdot / r) xi + gamma xi'
        gdot = np.where(r > 0, dg * np.sum(X * dx, axis=-1) / safe, 0.0)
        dGxi = gdot[..., None] * XI + g[..., None] * dxi
    else:
        h = FD_STEP
        G1 = m.metric(X + h * dx)
        G0 = m.metric(X - h * dx)
        Gdot = (G1 - G0) / (2 * h)
        dGxi = np.einsum("...ij,...j->...i", Gdot, XI) + np.einsum("...ij,...j->...i", m.metric(X), dxi)
    # |X|^2' = 2 X.xdot = 4 X.(G xi)
    return 2.0 * np.sum(dx * dx, axis=-1) + 4.0 * np.sum(X * dGxi, axis=-1)


def _sphere_directions(d: int, count: int, rng) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def escape_radius_estimate(m: MediumSpec, radii: Sequence[float] | None = None,
                           directions: int = 48, safety: float = 2.0, seed: int = 0) -> float:
    """Sampled ``R_G``: beyond it ``|X(t)|^2`` is strictly convex along the flow.

    Returns ``safety`` times the largest sampled radius at which the second
    derivative of ``|X|^2`` is non-positive for some direction pair, or 0 if
    it is positive at every sample.
    """
    d = m.dimension
    if radii is None:
        outer = 20.0
        if m.radial_metric is not None and m.radial_metric.knots:
            outer = max(outer, 2.0 * m.radial_metric.knots[-1] + 5.0)
        radii = np.linspace(0.05, outer, 400)
    rng = np.random.default_rng(seed)
    pos = _sphere_directions(d, directions, rng)
    mom = _sphere_directions(d, directions, rng)
    worst = 0.0
    for r in radii:
        X = np.repeat(r * pos, len(mom), axis=0)
        XI = np.tile(mom, (len(pos), 1))
        acc = _r2_acceleration(m, X, XI)
        if np.any(acc <= 0):
            worst = max(worst, float(r))
    return safety * worst


def escape_predicate_radius(r_g: float, x0) -> np.ndarray:
    """``max(R_G, |x0| + 1)`` for one or many starting points."""
    return np.maximum(r_g, np.linalg.norm(np.atleast_2d(x0), axis=1) + 1.0)


def trace_both(m: MediumSpec, w0: PhasePoint, T_max: float, dt: float, r_g: float,
               energy_tol: float = 1e-6) -> Trajectory:
    """Trajectory over ``[-T_max, T_max]``, each half stopped at its escape."""
    stop = float(escape_predicate_radius(r_g, w0.x)[0])
    fwd = integrate_flow(m, w0, T_max, dt, stop, energy_tol, 1)
    bwd = integrate_flow(m, w0, T_max, dt, stop, energy_tol, -1)
    times = np.concatenate([bwd.times[:-1], fwd.times])
    pts = np.vstack([bwd.points[:-1], fwd.points])
    return Trajectory(times, pts, max(fwd.energy_drift, bwd.energy_drift))


def _escaped(X, XI, G_xi, stop) -> np.ndarray:
    r = np.linalg.norm(X, axis=1)
    return (r >= stop) & (np.sum(X * G_xi, axis=1) > 0)


def classify_trajectory(traj: Trajectory, R_esc: float, T_max: float, r_g: float = 0.0,
                        m: MediumSpec | None = None) -> str:
    """Classify a two-sided trajectory.

    A side escapes when a sample satisfies ``|X| >= max(R_G, |x0| + 1)`` with
    ``X . dX/dt`` of the side's time direction positive.  A side is bounded
    when it reaches ``T_max`` with ``|X| <= max(R_esc, max(R_G, |x0| + 1))``.
    """
    x0 = traj.initial.x
    stop = float(escape_predicate_radius(r_g, x0)[0])
    bound = max(R_esc, stop)
    t = traj.times
    X, XI = traj.X, traj.XI
    Gxi = XI if m is None else np.einsum("...ij,...j->...i", m.metric(X), XI)
    result = {}
    escape_time = None
    for side, mask, sgn in (("fwd", t >= 0, 1.0), ("bwd", t <= 0, -1.0)):
        Xs, Gs = X[mask], sgn * Gxi[mask]
        ts = t[mask]
        hit = _escaped(Xs, XI[mask], Gs, stop)
        hit &= ts != 0
        if np.any(hit):
            result[side] = "escaped"
            if side == "fwd":
                escape_time = float(ts[np.argmax(hit)])
        elif np.max(np.abs(ts)) >= T_max * (1 - 1e-9) and np.all(np.linalg.norm(Xs, axis=1) <= bound):
            result[side] = "bounded"
        else:
            result[side] = "unknown"
    traj.escape_time = escape_time
    f, b = result["fwd"], result["bwd"]
    if f == "escaped" and b == "escaped":
        cls = "nontrapped"
    elif f == "escaped" and b == "bounded":
        cls = "forward_nontrapped"
    elif f == "bounded" and b == "escaped":
        cls = "backward_nontrapped"
    elif f == "bounded" and b == "bounded":
        cls = "trapped"
    else:
        cls = "undecided"
    traj.classification = cls
    return cls


@dataclass
class BatchClassification:
    """Per-point results of :func:`classify_batch`."""

    classes: np.ndarray
    forward_escape: np.ndarray
    backward_escape: np.ndarray
    forward_max_a: np.ndarray
    backward_max_a: np.ndarray
    max_radius: np.ndarray
    drift: np.ndarray


def classify_batch(m: MediumSpec, X0, XI0, T_max: float, dt: float, r_g: float,
                   R_esc: float | None = None) -> BatchClassification:
    """Classify many phase points at once (radial media use the compiled kernels)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    XI0 = np.atleast_2d(np.asarray(XI0, dtype=float))
    stop = escape_predicate_radius(r_g, X0)
    bound = np.maximum(stop, R_esc if R_esc is not None else 0.0)
    nsteps = int(np.ceil(T_max / dt))
    sides = []
    for sgn in (1.0, -1.0):
        if m.radial_metric is not None:
            kn, cf, fi, fo = _profile_arrays(m.radial_metric)
            akn, acf, ai, ao = _profile_arrays(m.radial_absorption)
            esc, max_r, max_a, drift = kernels.radial_classify(
                kn, cf, fi, fo, akn, acf, ai, ao, X0, XI0, sgn * dt, nsteps, stop)
            if m.radial_absorption is None:
                max_a = _generic_max_a(m, X0, XI0, sgn * dt, nsteps, stop, esc)
        else:
            esc, max_r, max_a, drift = _generic_classify(m, X0, XI0, sgn * dt, nsteps, stop)
        sides.append((esc, max_r, max_a, drift))
    (fe, fr, fa, fd), (be, br, ba, bd) = sides
    max_r = np.maximum(fr, br)
    f_esc, b_esc = fe >= 0, be >= 0
    f_bnd = ~f_esc & (fr <= bound)
    b_bnd = ~b_esc & (br <= bound)
    classes = np.full(len(X0), "undecided", dtype=object)
    classes[f_esc & b_esc] = "nontrapped"
    classes[f_esc & b_bnd] = "forward_nontrapped"
    classes[f_bnd & b_esc] = "backward_nontrapped"
    classes[f_bnd & b_bnd] = "trapped"
    return BatchClassification(classes, np.where(f_esc, fe * dt, np.nan),
                               np.where(b_esc, be * dt, np.nan), fa, ba, max_r,
                               np.maximum(fd, bd))


def _generic_max_a(m, X0, XI0, dt, nsteps, stop, esc):
    """Largest ``a`` along recorded paths (for media without a radial absorption profile)."""
    out = np.zeros(len(X0))
    chunk = max(1, int(2e6 // max(nsteps, 1)))
    for s in range(0, len(X0), chunk):
        paths, nvalid = flow_paths(m, X0[s:s + chunk], XI0[s:s + chunk], dt, nsteps, stop[s:s + chunk])
        d = X0.shape[1]
        a = m.absorption(np.nan_to_num(paths[:, :, :d], nan=0.0))
        a = np.where(np.isnan(paths[:, :, 0]), 0.0, a)
        out[s:s + chunk] = np.max(a, axis=1)
    return out


def _generic_classify(m, X0, XI0, dt, nsteps, stop):
    d = X0.shape[1]
    esc = np.full(len(X0), -1, dtype=np.int64)
    max_r = np.zeros(len(X0))
    max_a = np.zeros(len(X0))
    drift = np.zeros(len(X0))
    paths, nvalid = flow_paths(m, X0, XI0, dt, nsteps, stop)
    for i in range(len(X0)):
        pts = paths[i, : nvalid[i]]
        X, XI = pts[:, :d], pts[:, d:]
        r = np.linalg.norm(X, axis=1)
        max_r[i] = r.max()
        max_a[i] = np.max(m.absorption(X))
        p = hamiltonian(m, X, XI)
        drift[i] = np.max(np.abs(p - p[0])) / (p[0] if p[0] > 0 else 1.0)
        outward = np.sign(dt) * np.dot(X[-1], XI[-1]) > 0
        if nvalid[i] < nsteps + 1 or (r[-1] >= stop[i] and outward):
            esc[i] = nvalid[i] - 1
    return esc, max_r, max_a, drift


def sample_energy_shell(m: MediumSpec, interval: tuple, count: int, radius: float,
                        seed: int = 0):
    """Uniform positions in the ball of ``radius``, random directions, energies uniform in ``interval``.

    Returns ``(X, XI)`` with ``p(X, XI)`` in the interval.
    """
    lo, hi = interval
    if not 0 < lo <= hi:
        raise InputError("energy interval must lie in (0, inf)")
    d = m.dimension
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = dirs * radius * rng.random(count)[:, None] ** (1.0 / d)
    U = rng.standard_normal((count, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    E = rng.uniform(lo, hi, count)
    scale = np.sqrt(E / hamiltonian(m, X, U))
    return X, U * scale[:, None]


def circular_orbit(m: MediumSpec, radius: float, energy: float = 1.0):
    """Initial data of the circular geodesic of ``radius`` (radial media, ``d >= 2``)."""
    if m.radial_metric is None or m.dimension < 2:
        raise InputError("circular orbits need a radial medium with d >= 2")
    x = np.zeros(m.dimension)
    x[0] = radius
    xi = np.zeros(m.dimension)
    xi[1] = np.sqrt(energy / m.radial_metric(radius))
    return PhasePoint(x, xi)


@dataclass
class ControlReport:
    samples: int
    trapped: int
    semi_trapped: int
    controlled: int
    undecided: int
    worst_margin: float
    fraction_controlled: float
    inconclusive: bool
    passed: bool
    failures: list = field(default_factory=list)
    r_g: float = 0.0


def geometric_control_check(m: MediumSpec, interval: tuple = (0.5, 1.5), count: int = 1000,
                            radius: float = 5.0, T_max: float = 200.0, dt: float = 0.01,
                            threshold: float = 1e-8, max_undecided: float = 0.02, seed: int = 0,
                            extra_points: Sequence[PhasePoint] | None = None,
                            r_g: float | None = None) -> ControlReport:
    """Check that bounded half-trajectories meet ``{a > threshold}``.

    Samples the energy shell in the ball of ``radius``.  Circular geodesics
    recorded in the medium (``info["stable_radius"]``, ``info["unstable_radius"]``) are added at the ends
    and the midpoint of the interval.  Each sample bounded in forward
    (backward) time must see ``a > threshold`` on its forward (backward)
    half; trapped samples may use either half.
    """
    r_g = escape_radius_estimate(m) if r_g is None else r_g
    X, XI = sample_energy_shell(m, interval, count, radius, seed)
    pts = list(extra_points or [])
    for key in ("stable_radius", "unstable_radius"):
        if key in m.info and m.dimension >= 2:
            for e in (interval[0], 0.5 * (interval[0] + interval[1]), interval[1]):
                pts.append(circular_orbit(m, float(m.info[key]), e))
    if pts:
        X = np.vstack([X] + [p.x[None] for p in pts])
        XI = np.vstack([XI] + [p.xi[None] for p in pts])
    res = classify_batch(m, X, XI, T_max, dt, r_g)
    cls = res.classes
    trapped = cls == "trapped"
    fwd_b = cls == "backward_nontrapped"  # bounded forward
    bwd_b = cls == "forward_nontrapped"  # bounded backward
    reach = np.full(len(X), np.inf)
    reach[trapped] = np.maximum(res.forward_max_a, res.backward_max_a)[trapped]
    reach[fwd_b] = res.forward_max_a[fwd_b]
    reach[bwd_b] = res.backward_max_a[bwd_b]
    relevant = trapped | fwd_b | bwd_b
    controlled = relevant & (reach > threshold)
    undecided = int(np.count_nonzero(cls == "undecided"))
    failures = [PhasePoint(X[i], XI[i]) for i in np.nonzero(relevant & ~controlled)[0]]
    n_rel = int(np.count_nonzero(relevant))
    worst = float(np.min(reach[relevant]) - threshold) if n_rel else np.inf
    inconclusive = undecided > max_undecided * len(X)
    return ControlReport(len(X), int(np.count_nonzero(trapped)), int(np.count_nonzero(fwd_b | bwd_b)),
                         int(np.count_nonzero(controlled)), undecided, worst,
                         float(np.count_nonzero(controlled) / n_rel) if n_rel else 1.0,
                         inconclusive, not failures, failures, r_g)


def write_trajectory_csv(m: MediumSpec, traj: Trajectory, path) -> None:
    d = traj.dimension
    p = hamiltonian(m, traj.X, traj.XI)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j}" for j in range(d)] + [f"xi{j}" for j in range(d)] + ["p"])
        for t, row, pv in zip(traj.times, traj.points, p):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(pv))])
