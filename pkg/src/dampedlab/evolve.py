"""Time stepping of ``u'' + H0 u + a u' = 0`` and frequency-side cross-checks.

The stepper is leapfrog with the damping term treated implicitly:

    (1 + a dt/2) u[n+1] = (2 - dt^2 H0) u[n] - (1 - a dt/2) u[n-1].

With ``v[n] = (u[n+1] - u[n-1]) / (2 dt)`` and the staggered energy

    E[n+1/2] = ||(u[n+1] - u[n]) / dt||^2 + <H0 u[n+1], u[n]>,

the scheme satisfies ``E[n+1/2] - E[n-1/2] = -2 dt <a v[n], v[n]>`` exactly,
which is what the energy trace records.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .discretize import DiscreteOperator, Grid
from .errors import CFLError, InputError, InstabilityError
from .medium import japanese_bracket
from .resolvent import ResolventSolver
from .sweep import PowerLawFit, fit_power_law_arrays

__all__ = [
    "WaveState",
    "EnergyTrace",
    "DyadicPartition",
    "LaplaceReport",
    "gaussian_bump",
    "max_stable_step",
    "step_wave",
    "run_and_trace",
    "laplace_transform_check",
    "build_dyadic_partition",
    "decay_fit",
    "block_operator",
    "block_resolvent_formula",
    "write_trace_csv",
]

CFL_SAFETY = 0.9


@dataclass
class WaveState:
    """Displacement ``u`` and velocity ``v`` at time ``t``.

    ``u_prev`` is the displacement one step earlier; it is None for initial data.
    """

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0
    u_prev: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape:
            raise InputError("u and v must have the same shape")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise InputError("wave state must be finite")


def gaussian_bump(grid: Grid, center=None, width: float = 1.0, amplitude: float = 1.0) -> np.ndarray:
    """``amplitude * exp(-|x - center|^2 / width^2)`` at the grid nodes."""
    c = np.zeros(grid.dimension) if center is None else np.asarray(center, dtype=float)
    if c.shape != (grid.dimension,):
        raise InputError("bump centre has the wrong dimension")
    r2 = np.sum((grid.nodes() - c) ** 2, axis=1)
    return amplitude * np.exp(-r2 / width ** 2)


def _real_matrix(op) -> sp.csr_matrix:
    M = op.matrix if isinstance(op, DiscreteOperator) else sp.csr_matrix(op)
    if np.iscomplexobj(M.data):
        if M.nnz and np.max(np.abs(M.data.imag)) > 1e-12 * max(np.max(np.abs(M.data.real)), 1.0):
            raise InputError("the stepper needs a real operator")
        M = M.real
    return M.tocsr()


def _damping_vector(a_op, size: int) -> np.ndarray:
    if a_op is None:
        return np.zeros(size)
    if isinstance(a_op, DiscreteOperator):
        a = np.real(a_op.diagonal())
    else:
        a = np.real(np.asarray(a_op, dtype=complex))
    if a.shape != (size,) or np.any(a < 0):
        raise InputError("damping must be a non-negative vector matching the grid")
    return a


def max_stable_step(h0: DiscreteOperator, metric_max: float | None = None) -> float:
    """``0.9 h / (sqrt(d) sqrt(max G))``.

    Without ``metric_max`` the largest metric eigenvalue is read off the
    diagonal of ``H0`` (``2 d max G / h^2`` for scalar metrics).
    """
    g = h0.grid
    if metric_max is None:
        metric_max = float(np.max(np.real(h0.diagonal()))) * g.h ** 2 / (2 * g.dimension)
    return CFL_SAFETY * g.h / (np.sqrt(g.dimension) * np.sqrt(metric_max))


def _advance(u, u_prev, H, a, dt):
    return ((2.0 * u - dt * dt * (H @ u)) - (1.0 - 0.5 * dt * a) * u_prev) / (1.0 + 0.5 * dt * a)


def _start(u0, u1, H, a, dt):
    """Second-order Taylor start for the first step and the matching velocity."""
    acc = -(H @ u0) - a * u1
    u = u0 + dt * u1 + 0.5 * dt * dt * acc
    return u, u1 + dt * acc


def step_wave(state: WaveState, h0: DiscreteOperator, a_op, dt: float,
              metric_max: float | None = None) -> WaveState:
    """Advance one step of size ``dt``.

    The velocity of the new state is the second-order backward difference
    ``(3u[n+1] - 4u[n] + u[n-1]) / (2 dt)``.
    """
    if not dt > 0:
        raise InputError("time step must be positive")
    limit = max_stable_step(h0, metric_max)
    if dt > limit:
        raise CFLError(f"dt={dt:.4g} exceeds the stable step {limit:.4g}")
    H = _real_matrix(h0)
    a = _damping_vector(a_op, H.shape[0])
    if state.u_prev is None:
        u_new, v_new = _start(state.u, state.v, H, a, dt)
    else:
        u_new = _advance(state.u, state.u_prev, H, a, dt)
        v_new = (3.0 * u_new - 4.0 * state.u + state.u_prev) / (2.0 * dt)
    return WaveState(u_new, v_new, state.t + dt, state.u)


@dataclass
class EnergyTrace:
    """Energies sampled along a run.

    ``times`` are the staggered times ``t[n] + dt/2`` of ``global_energy`` and
    ``dissipated``; ``local_times`` are the node times of the local energies.
    """

    times: np.ndarray
    global_energy: np.ndarray
    dissipated: np.ndarray
    local_times: np.ndarray
    local_energy: dict
    grid: Grid
    dt: float
    final_state: WaveState | None = None
    data_radius: float | None = None

    def balance_error(self) -> float:
        """``|E(T) + dissipated(T) - E(0)| / E(0)``."""
        e0 = self.global_energy[0]
        if e0 == 0:
            return float(abs(self.global_energy[-1] + self.dissipated[-1]))
        return float(abs(self.global_energy[-1] + self.dissipated[-1] - e0) / e0)


def _local_energy(u, v, grid: Grid, delta: float, weight2) -> float:
    U = u.reshape(grid.shape)
    grads = np.gradient(U, grid.h) if grid.dimension > 1 else [np.gradient(U, grid.h)]
    hd = grid.h ** grid.dimension
    g2 = sum(np.sum(gr.ravel() ** 2 * weight2) for gr in grads)
    return float(np.sqrt(hd * g2) + np.sqrt(hd * np.sum(v ** 2 * weight2)))


def run_and_trace(h0: DiscreteOperator, a_op, u0, u1, T: float, dt: float,
                  deltas: Sequence[float] = (), sample_every: int = 1,
                  metric_max: float | None = None, growth_tol: float = 1e-6,
                  data_radius: float | None = None) -> EnergyTrace:
    """Evolve ``(u0, u1)`` to time ``T`` and record energies.

    The global energy is the staggered quadratic form (see module docstring);
    the dissipated energy accumulates ``2 dt <a v, v>``.  Raises
    :class:`InstabilityError` if the energy grows by more than ``growth_tol``
    relative in a single step.
    """
    if not T > 0:
        raise InputError("T must be positive")
    g = h0.grid
    limit = max_stable_step(h0, metric_max)
    if dt > limit:
        raise CFLError(f"dt={dt:.4g} exceeds the stable step {limit:.4g}")
    H = _real_matrix(h0)
    a = _damping_vector(a_op, H.shape[0])
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    state = WaveState(u0, u1)
    hd = g.h ** g.dimension
    nodes_w = {d: japanese_bracket(g.nodes()) ** (-2.0 * d) for d in deltas}
    steps = int(round(T / dt))
    if steps < 1:
        raise InputError("T must cover at least one step")

    def energy(u_new, u_old):
        du = (u_new - u_old) / dt
        return hd * (du @ du + u_new @ (H @ u_old))

    u_prev, u = u0, _start(u0, u1, H, a, dt)[0]
    e_last = energy(u, u0)
    times, energies, dissipated = [0.5 * dt], [e_last], [0.0]
    loc_t, loc = [0.0], {d: [_local_energy(u0, u1, g, d, nodes_w[d])] for d in deltas}
    total = 0.0
    for n in range(1, steps):
        u_next = _advance(u, u_prev, H, a, dt)
        v = (u_next - u_prev) / (2.0 * dt)
        total += 2.0 * dt * hd * ((a * v) @ v)
        e = energy(u_next, u)
        if e > e_last + growth_tol * abs(e_last):
            raise InstabilityError(f"energy grew at step {n}: {e_last:.6e} -> {e:.6e}")
        e_last = e
        if n % sample_every == 0 or n == steps - 1:
            times.append((n + 0.5) * dt)
            energies.append(e)
            dissipated.append(total)
            loc_t.append(n * dt)
            for d in deltas:
                loc[d].append(_local_energy(u, v, g, d, nodes_w[d]))
        u_prev, u = u, u_next
    final = WaveState(u, (u - u_prev) / dt, steps * dt, u_prev)
    return EnergyTrace(np.array(times), np.array(energies), np.array(dissipated),
                       np.array(loc_t), {d: np.array(vals) for d, vals in loc.items()},
                       g, dt, final, data_radius)


@dataclass
class LaplaceReport:
    """Time-side and resolvent-side Laplace transforms and their relative gaps."""

    z: complex
    time_side: np.ndarray
    resolvent_side: np.ndarray
    velocity_time_side: np.ndarray
    velocity_resolvent_side: np.ndarray
    relative_error: float
    velocity_error: float


def laplace_transform_check(h0: DiscreteOperator, a_op, u0, u1, tau: float, mu: float,
                            dt: float, T: float | None = None,
                            metric_max: float | None = None) -> LaplaceReport:
    """Compare ``int_0^T e^{izt} u(t) dt`` with ``R(z)(a u0 - i z u0 + u1)``.

    ``z = tau + i mu`` and ``T`` defaults to ``45 / mu``.  The integral uses
    the trapezoid rule on the discrete trajectory.  The velocity transform is
    compared with ``-u0 - i z`` times the displacement transform.
    """
    if not mu >= 0.3:
        raise InputError("mu must be at least 0.3 so that the truncated tail is negligible")
    T = 45.0 / mu if T is None else T
    z = complex(tau, mu)
    H = _real_matrix(h0)
    a = _damping_vector(a_op, H.shape[0])
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    steps = int(round(T / dt))
    limit = max_stable_step(h0, metric_max)
    if dt > limit:
        raise CFLError(f"dt={dt:.4g} exceeds the stable step {limit:.4g}")
    # trapezoid weights: dt/2 at both ends
    acc_u = 0.5 * dt * u0.astype(complex)
    acc_v = 0.5 * dt * u1.astype(complex)
    u_prev, u = u0, _start(u0, u1, H, a, dt)[0]
    for n in range(1, steps + 1):
        u_next = _advance(u, u_prev, H, a, dt)
        v = (u_next - u_prev) / (2.0 * dt)
        w = np.exp(1j * z * n * dt) * dt * (0.5 if n == steps else 1.0)
        acc_u += w * u
        acc_v += w * v
        u_prev, u = u, u_next
    solver = ResolventSolver(h0, DiscreteOperator(sp.diags(a.astype(complex)).tocsr(), "Absorption",
                                                  h0.grid, True))
    rhs = a * u0 - 1j * z * u0 + u1
    res = solver.solve(z, rhs)[0]
    vel = -u0 - 1j * z * res
    scale = max(np.linalg.norm(res), 1e-300)
    vscale = max(np.linalg.norm(vel), 1e-300)
    err = float(np.linalg.norm(acc_u - res) / scale) if np.any(res) else float(np.linalg.norm(acc_u))
    verr = float(np.linalg.norm(acc_v - vel) / vscale) if np.any(vel) else float(np.linalg.norm(acc_v))
    return LaplaceReport(z, acc_u, res, acc_v, vel, err, verr)


def _smooth_cutoff(t):
    """C-infinity function equal to 1 on ``[0, 1]`` and 0 on ``[2, inf)``."""
    t = np.asarray(t, dtype=float)

    def f(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    left = f(2.0 - t)
    right = f(t - 1.0)
    return left / (left + right)


@dataclass(frozen=True)
class DyadicPartition:
    """``chi0(tau) + sum_{j=1..J} chi(tau / 2^(j-1)) = 1`` on ``[0, 2^(J-1)]``.

    ``chi(tau) = psi(tau) - psi(2 tau)`` and ``chi0(tau) = psi(2 tau)`` for a
    smooth cutoff ``psi`` equal to 1 on ``[0, 1]`` and 0 beyond 2, so ``chi``
    is supported in ``[1/2, 2]``.
    """

    levels: int

    def chi0(self, tau):
        return _smooth_cutoff(2.0 * np.abs(np.asarray(tau, dtype=float)))

    def chi(self, tau):
        tau = np.abs(np.asarray(tau, dtype=float))
        return _smooth_cutoff(tau) - _smooth_cutoff(2.0 * tau)

    def level(self, j: int, tau):
        """``chi_j``; level 0 is ``chi0``."""
        if j == 0:
            return self.chi0(tau)
        return self.chi(np.asarray(tau, dtype=float) / 2.0 ** (j - 1))

    def evaluate(self, tau) -> np.ndarray:
        """Values of all levels, shape ``(J + 1,) + tau.shape``."""
        return np.stack([self.level(j, tau) for j in range(self.levels + 1)])

    @property
    def upper(self) -> float:
        return 2.0 ** (self.levels - 1)


def build_dyadic_partition(J: int) -> DyadicPartition:
    if not isinstance(J, (int, np.integer)) or J < 1:
        raise InputError("the truncation level must be an integer >= 1")
    return DyadicPartition(int(J))


def reflection_time(grid: Grid, data_radius: float, wavespeed: float = 1.0) -> float:
    """Time before waves leaving the data support return from the box wall."""
    return 2.0 * (grid.half_width - data_radius) / wavespeed


def decay_fit(trace: EnergyTrace, delta: float, window: tuple, data_radius: float | None = None,
              wavespeed: float = 1.0) -> PowerLawFit:
    """Log-log fit of the local energy against ``t`` over ``window``."""
    if delta not in trace.local_energy:
        raise InputError(f"trace has no local energy for delta={delta}")
    lo, hi = window
    if not 0 < lo < hi:
        raise InputError("window must satisfy 0 < lo < hi")
    if hi > trace.local_times[-1] + 1e-12:
        raise InputError("window extends beyond the trace")
    radius = trace.data_radius if data_radius is None else data_radius
    if radius is None:
        raise InputError("decay fits need the radius of the initial data")
    limit = reflection_time(trace.grid, radius, wavespeed)
    if hi > limit:
        raise InputError(f"window end {hi:g} exceeds the reflection time {limit:.3g}")
    return fit_power_law_arrays(trace.local_times, trace.local_energy[delta], window)


def block_operator(h0, a_op) -> np.ndarray:
    """Dense first-order operator ``[[0, I], [H0, -i a]]`` acting on ``(u, i u_t)``."""
    H = h0.matrix.toarray() if isinstance(h0, DiscreteOperator) else np.asarray(h0)
    n = H.shape[0]
    a = _damping_vector(a_op, n)
    top = np.hstack([np.zeros((n, n)), np.eye(n)])
    bottom = np.hstack([H, -1j * np.diag(a)])
    return np.vstack([top, bottom]).astype(complex)


def block_resolvent_formula(h0, a_op, z: complex) -> np.ndarray:
    """``[[R (i a + z), R], [I + R (i z a + z^2), z R]]`` with ``R = R(z)``."""
    H = h0.matrix.toarray() if isinstance(h0, DiscreteOperator) else np.asarray(h0)
    n = H.shape[0]
    a = np.diag(_damping_vector(a_op, n))
    eye = np.eye(n)
    R = np.linalg.inv(H - 1j * z * a - z * z * eye)
    return np.block([[R @ (1j * a + z * eye), R],
                     [eye + R @ (1j * z * a + z * z * eye), z * R]])


def write_trace_csv(trace: EnergyTrace, path) -> None:
    """Columns ``t, E_global, E_local_<delta>..., dissipated``.

    Local energies live on the node times; they are written next to the
    staggered energy sample of the same step index.
    """
    deltas = list(trace.local_energy)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "E_global"] + [f"E_local_{d:g}" for d in deltas] + ["dissipated"])
        for i, t in enumerate(trace.times):
            row = [repr(float(t)), repr(float(trace.global_energy[i]))]
            row += [repr(float(trace.local_energy[d][i])) for d in deltas]
            row.append(repr(float(trace.dissipated[i])))
            w.writerow(row)
