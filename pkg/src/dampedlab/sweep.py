"""Weighted resolvent norms along rays ``z = tau + i mu`` and power-law fits."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discretize import Grid, SpongeSpec, assemble_absorption_and_weights, assemble_h0, assemble_sponge
from .errors import InputError, LabError
from .medium import MediumSpec
from .resolvent import ResolventSolver, weighted_norm_report

__all__ = [
    "SweepPlan",
    "SweepPoint",
    "SweepResult",
    "PowerLawFit",
    "predicted_exponent",
    "run_sweep",
    "fit_power_law",
    "fit_power_law_arrays",
    "uniformity_ratio",
    "write_sweep_csv",
    "write_fit_csv",
    "SWEEP_COLUMNS",
    "FIT_COLUMNS",
]

REGIMES = ("low", "intermediate", "high")
SWEEP_COLUMNS = ("tau", "mu", "n", "delta1", "delta2", "deriv", "norm_estimate", "residual", "iterations")
FIT_COLUMNS = ("regime", "window_lo", "window_hi", "exponent", "r2", "predicted_exponent")


@dataclass(frozen=True)
class SweepPlan:
    """Sample points ``z = tau + i mu`` for one regime.

    ``mu`` fixes ``Im z``; when it is None, ``mu = mu_factor * tau``.
    ``low_threshold`` is the minimal ``tau L`` accepted in the low regime and
    ``high_trust`` the maximal ``tau h`` used in fits.
    """

    regime: str
    tau_values: tuple
    n: int = 0
    delta1: float = 0.0
    delta2: float = 0.0
    deriv: int | None = None
    mu: float | None = None
    mu_factor: float = 0.05
    low_threshold: float = 4.0
    high_trust: float = 0.5

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InputError(f"regime must be one of {REGIMES}")
        taus = np.asarray(self.tau_values, dtype=float)
        if taus.size == 0 or np.any(taus <= 0) or np.any(np.diff(taus) < 0):
            raise InputError("tau values must be positive and sorted")
        if self.mu is not None and not self.mu > 0:
            raise InputError("mu must be positive")
        if self.mu is None and not self.mu_factor > 0:
            raise InputError("mu_factor must be positive")
        if not 0 <= self.n <= 8:
            raise InputError("derivative order must lie in [0, 8]")
        object.__setattr__(self, "tau_values", tuple(float(t) for t in taus))

    def mu_for(self, tau: float) -> float:
        return self.mu if self.mu is not None else self.mu_factor * tau

    def check_grid(self, grid: Grid) -> None:
        if self.regime == "low" and self.tau_values[0] * grid.half_width < self.low_threshold:
            raise InputError(
                f"low-frequency sweep needs tau*L >= {self.low_threshold}; "
                f"got {self.tau_values[0] * grid.half_width:.3g}")
        if self.deriv is not None and not 0 <= self.deriv < grid.dimension:
            raise InputError("derivative axis out of range")

    def trusted(self, tau: float, grid: Grid) -> bool:
        ok = tau * grid.h <= self.high_trust
        if self.regime == "low":
            ok = ok and tau * grid.half_width >= self.low_threshold
        return bool(ok)


@dataclass
class SweepPoint:
    tau: float
    mu: float
    norm_estimate: float
    residual: float
    iterations: int
    method: str
    trusted: bool
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and np.isfinite(self.norm_estimate)


@dataclass
class SweepResult:
    plan: SweepPlan
    grid: Grid
    points: list

    @property
    def taus(self) -> np.ndarray:
        return np.array([p.tau for p in self.points])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([p.norm_estimate for p in self.points])

    def failed(self) -> list:
        return [p for p in self.points if not p.ok]


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    intercept: float
    r_squared: float
    window: tuple
    count: int


def predicted_exponent(regime: str, d: int, n: int) -> float:
    """Exponent of ``|z|`` in the asymptotic bound for the given regime."""
    if regime == "high":
        return -1.0
    if regime == "low":
        return float(min(0, d - 2 - n))
    return 0.0


def _operators(medium: MediumSpec, grid: Grid, sponge: SpongeSpec | None):
    h0 = assemble_h0(medium, grid)
    a_op, _, _ = assemble_absorption_and_weights(medium, grid)
    s_op = assemble_sponge(sponge, grid) if sponge is not None else None
    return h0, a_op, s_op


def run_sweep(plan: SweepPlan, medium: MediumSpec, grid: Grid, sponge: SpongeSpec | None = None,
              workers: int = 1, method: str = "auto", tol: float = 1e-10, seed: int = 0,
              rtol: float = 1e-3, solver: ResolventSolver | None = None) -> SweepResult:
    """Estimate the weighted norm at every ``tau`` of the plan.

    Points whose solve or power iteration fails are recorded with an error
    message; the sweep only fails when no point succeeds.
    """
    plan.check_grid(grid)
    if solver is None:
        h0, a_op, s_op = _operators(medium, grid, sponge)
        solver = ResolventSolver(h0, a_op, s_op, method=method, tol=tol,
                                 cache_size=max(2, workers))

    def work(tau):
        mu = plan.mu_for(tau)
        z = complex(tau, mu)
        try:
            rep = weighted_norm_report(solver, plan.n, z, plan.delta1, plan.delta2, plan.deriv,
                                       seed=seed, rtol=rtol)
            return SweepPoint(tau, mu, rep.value, rep.residual, rep.iterations, rep.method,
                              plan.trusted(tau, grid))
        except LabError as exc:
            return SweepPoint(tau, mu, float("nan"), float("nan"), 0, solver.method_label,
                              plan.trusted(tau, grid), str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(work, plan.tau_values))
    else:
        points = [work(t) for t in plan.tau_values]
    result = SweepResult(plan, grid, points)
    if all(not p.ok for p in points):
        raise LabError("every sweep point failed: " + points[0].error)
    return result


def fit_power_law_arrays(tau, values, window: tuple | None = None) -> PowerLawFit:
    """Least-squares line through ``(log tau, log values)`` inside ``window``."""
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(tau) & np.isfinite(values) & (tau > 0) & (values > 0)
    if window is not None:
        lo, hi = window
        keep &= (tau >= lo) & (tau <= hi)
    if np.count_nonzero(keep) < 4:
        raise InputError("a power-law fit needs at least 4 finite points in the window")
    x, y = np.log(tau[keep]), np.log(values[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    r2 = float(np.clip(r2, 0.0, 1.0))
    win = window if window is not None else (float(tau[keep].min()), float(tau[keep].max()))
    return PowerLawFit(float(slope), float(intercept), r2, tuple(win), int(np.count_nonzero(keep)))


def fit_power_law(result: SweepResult, window: tuple | None = None,
                  trusted_only: bool = True) -> PowerLawFit:
    """Fit ``log(norm)`` against ``log(tau)`` over the successful points of a sweep."""
    pts = [p for p in result.points if p.ok and (p.trusted or not trusted_only)]
    return fit_power_law_arrays([p.tau for p in pts], [p.norm_estimate for p in pts], window)


def uniformity_ratio(result: SweepResult) -> float:
    """``max / min`` of the successful estimates."""
    vals = np.array([p.norm_estimate for p in result.points if p.ok])
    return float(vals.max() / vals.min())


def _fmt(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_sweep_csv(result: SweepResult, path) -> None:
    plan = result.plan
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for p in result.points:
            w.writerow([_fmt(p.tau), _fmt(p.mu), plan.n, _fmt(plan.delta1), _fmt(plan.delta2),
                        "none" if plan.deriv is None else plan.deriv,
                        _fmt(p.norm_estimate), _fmt(p.residual), p.iterations])


def write_fit_csv(rows: Sequence, path) -> None:
    """``rows``: iterable of ``(regime, PowerLawFit, predicted_exponent)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIT_COLUMNS)
        for regime, fit, predicted in rows:
            w.writerow([regime, _fmt(fit.window[0]), _fmt(fit.window[1]), _fmt(fit.exponent),
                        _fmt(fit.r_squared), _fmt(predicted)])
