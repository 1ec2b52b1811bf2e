"""Escape functions ``f = f0 + f_c`` on an energy shell and their Poisson brackets.

``f0(x, xi) = <x, xi>``.  The compact part is a weighted sum of flow averages
of phase-space bumps ``g``.  A bump integrated in the time direction
``sigma`` up to the horizon ``h`` contributes

    -sigma * int_0^h g(phi^{sigma t}(w)) dt,   with bracket   g - g o phi^{sigma h}.

Trapped-type bumps use ``sigma = -1`` (negative part pushed forward by
``phi^h`` into ``{a > 0}``) or ``sigma = +1`` (pulled back).  Escape-type
bumps sit on points that leave every compact set in the direction
``sigma`` before meeting the damping; their horizon is the escape time,
after which ``g`` vanishes along the orbit, so the bracket is ``g`` itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConstructionError, InputError
from ..medium import MediumSpec
from ._backend import kernels
from ._fallback import endpoint_rate, smooth_bump
from .core import (
    _profile_arrays,
    escape_predicate_radius,
    escape_radius_estimate,
    flow_map,
    flow_paths,
    hamiltonian,
    hamiltonian_field,
    sample_energy_shell,
)

__all__ = [
    "Bump",
    "EscapeFunction",
    "BracketReport",
    "f0_bracket",
    "build_escape_function",
    "poisson_bracket_check",
    "write_bracket_csv",
]

CORE = 0.7
RADIUS_LADDER = (0.45, 0.32, 0.22, 0.15, 0.1, 0.07, 0.05)


@dataclass(frozen=True)
class Bump:
    """Phase-space bump ``g(w) = S(|w - center| / radius)``.

    ``kind`` is ``"trapped"`` or ``"escape"``; ``sigma`` the integration
    direction; ``horizon`` the number of quadrature steps (``None`` for
    escape-type bumps, integrated until the orbit escapes).
    """

    center: np.ndarray
    radius: float
    kind: str
    sigma: int
    horizon: int | None
    beta: float = 0.0

    def value(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        dist = np.linalg.norm(W - self.center, axis=1)
        return smooth_bump(dist / self.radius, CORE)

    def travel_time(self, dt: float) -> float | None:
        return None if self.horizon is None else self.horizon * dt


def f0_bracket(m: MediumSpec, X, XI) -> np.ndarray:
    """``{p, <x, xi>} = 2p - <(x . grad G) xi, xi>``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    XI = np.atleast_2d(np.asarray(XI, dtype=float))
    dx, dxi = hamiltonian_field(m, X, XI)
    # d/dt <x, xi> = <xdot, xi> + <x, xidot>
    return np.sum(dx * XI, axis=1) + np.sum(X * dxi, axis=1)


@dataclass
class EscapeFunction:
    """``f = <x, xi> + weight * sum_b (-sigma_b) int g_b(phi^{sigma_b t}) dt``."""

    medium: MediumSpec
    bumps: list
    weight: float
    beta: float
    c0: float
    dt: float
    r_g: float
    interval: tuple
    escape_horizon: int = 20000
    info: dict = field(default_factory=dict)

    @property
    def support_radius(self) -> float:
        """Every bump vanishes for ``|x|`` beyond this radius."""
        if not self.bumps:
            return 0.0
        d = self.medium.dimension
        return float(max(np.linalg.norm(b.center[:d]) + b.radius for b in self.bumps))

    def vanishing_radius(self, energy: float) -> float:
        """``f_c`` vanishes at points with ``p <= energy`` and ``|x|`` beyond this radius.

        Orbits move at speed ``|2 G xi| <= 2 sqrt(max G * p)``, so within the
        longest integration time they cannot reach the bump supports.
        """
        if not self.bumps:
            return 0.0
        steps = max(self.escape_horizon if b.horizon is None else b.horizon for b in self.bumps)
        speed = 2.0 * np.sqrt(_metric_bound(self.medium) * energy)
        return self.support_radius + speed * steps * self.dt

    def _stop(self, X) -> np.ndarray:
        return np.maximum(escape_predicate_radius(self.r_g, X), self.support_radius + 1e-9)

    def compact_part(self, X, XI) -> np.ndarray:
        """``f_c`` at the points ``(X, XI)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        XI = np.atleast_2d(np.asarray(XI, dtype=float))
        total = np.zeros(len(X))
        stop = self._stop(X)
        for sigma in (1, -1):
            group = [b for b in self.bumps if b.sigma == sigma]
            if not group:
                continue
            horizons = np.array([self.escape_horizon if b.horizon is None else b.horizon
                                 for b in group], dtype=np.int64)
            centers = np.array([b.center for b in group])
            radii = np.array([b.radius for b in group])
            vals = _bump_integrals(self.medium, X, XI, sigma * self.dt, int(horizons.max()), stop,
                                   centers, radii, horizons)
            total += -sigma * vals.sum(axis=1)
        return self.weight * total

    def __call__(self, X, XI) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        XI = np.atleast_2d(np.asarray(XI, dtype=float))
        return np.sum(X * XI, axis=1) + self.compact_part(X, XI)

    def bracket_formula(self, X, XI) -> np.ndarray:
        """``{p, f}`` from the bump identities (``g - g o phi^{sigma h}``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        XI = np.atleast_2d(np.asarray(XI, dtype=float))
        W = np.hstack([X, XI])
        out = f0_bracket(self.medium, X, XI)
        d = X.shape[1]
        for b in self.bumps:
            val = b.value(W)
            if b.horizon is not None and b.horizon > 0:
                Xe, XIe = flow_map(self.medium, X, XI, b.sigma * b.horizon * self.dt, b.horizon)
                val = val - b.value(np.hstack([Xe, XIe]))
            out = out + self.weight * val
        return out


def _bump_integrals(m: MediumSpec, X, XI, dt, nsteps, stop, centers, radii, horizons):
    if m.radial_metric is not None:
        kn, cf, fi, fo = _profile_arrays(m.radial_metric)
        return kernels.radial_bump_integrals(kn, cf, fi, fo, X, XI, float(dt), int(nsteps), stop,
                                             centers, radii, CORE, horizons)
    out = np.zeros((len(X), len(centers)))
    h = abs(dt)
    paths, _ = flow_paths(m, X, XI, dt, nsteps, stop)
    for b, (c, r, hb) in enumerate(zip(centers, radii, np.minimum(horizons, nsteps))):
        if hb == 0:
            continue
        dist = np.linalg.norm(paths[:, : hb + 1] - c, axis=-1)
        vals = np.where(np.isnan(dist), 0.0, smooth_bump(np.nan_to_num(dist / r, nan=2.0), CORE))
        w = np.full(hb + 1, h)
        w[0] = w[-1] = 0.5 * h
        ends = paths[:, [0, hb]]
        d = X.shape[1]
        flat = np.nan_to_num(ends.reshape(-1, 2 * d))
        fx, fp = hamiltonian_field(m, flat[:, :d], flat[:, d:])
        field = np.concatenate([fx, fp], axis=1).reshape(ends.shape)
        rate = endpoint_rate(ends, field, c, r, CORE, np.sign(dt))
        out[:, b] = vals @ w + (h * h / 12.0) * (rate[:, 0] - rate[:, 1])
    return out


def _ball_probes(center, radius, count, rng) -> np.ndarray:
    dim = center.size
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = radius * rng.random(count) ** (1.0 / dim)
    # include points on the boundary of the support
    rad[: count // 4] = radius
    return np.vstack([center[None], center + v * rad[:, None]])


def _first_damping_time(a_vals, a_min) -> int | None:
    """Index of the first local maximum of ``a`` after it exceeds ``a_min``."""
    above = np.nonzero(a_vals >= a_min)[0]
    if above.size == 0:
        return None
    k = int(above[0])
    while k + 1 < a_vals.size and a_vals[k + 1] > a_vals[k]:
        k += 1
    return k


def build_escape_function(m: MediumSpec, interval: tuple = (0.5, 1.5), samples=None,
                          count: int = 1000, radius: float = 5.0, T_max: float = 100.0,
                          dt: float = 0.0025, damping_level: float = 0.3, probes: int = 24,
                          seed: int = 0, r_g: float | None = None) -> EscapeFunction:
    """Construct ``f`` with ``{p, f} + beta a >= 4 c0`` on the sampled shell.

    ``samples`` is ``(X, XI)``; by default ``count`` points are drawn on
    ``p^-1(interval)`` within ``|x| <= radius``.  With ``E1 = min(interval)``:

    * ``C = sup (1 - {p, f0}/p)^+`` bounds the defect of ``f0``; the bump
      weight is ``C_b = C max(interval) + E1``.
    * samples with ``{p, f0} < E1`` (the deficit set) and
      ``a >= damping_level`` are handled by ``beta_0 = C_b / damping_level``;
    * the remaining deficit samples are covered greedily by bump cores.  A
      bump is trapped-type when the orbit of its centre reaches
      ``a >= damping_level`` within ``T_max`` (the first local maximum of
      ``a`` fixes the horizon); its radius is the largest entry of the ladder
      for which all probe points land in ``a >= damping_level / 2``, and it
      adds ``C_b / (min landing a / 2)`` to ``beta``.  Otherwise the orbit
      must escape, and the bump is escape-type, valid when all probes escape
      in the same direction.

    The target constant is ``c0 = E1 / 8``.
    """
    lo, hi = interval
    if not 0 < lo <= hi:
        raise InputError("energy interval must lie in (0, inf)")
    if samples is None:
        X, XI = sample_energy_shell(m, interval, count, radius, seed)
    else:
        X, XI = (np.atleast_2d(np.asarray(s, dtype=float)) for s in samples)
    r_g = escape_radius_estimate(m) if r_g is None else r_g
    rng = np.random.default_rng(seed + 1)
    d = m.dimension
    p = hamiltonian(m, X, XI)
    b0 = f0_bracket(m, X, XI)
    ratio_defect = float(np.max(np.maximum(1.0 - b0 / p, 0.0))) if len(p) else 0.0
    C = max(ratio_defect, _radial_defect(m))
    weight = C * hi + lo
    a = m.absorption(X)
    deficit = b0 < lo
    direct = deficit & (a >= damping_level)
    beta0 = weight / damping_level if np.any(direct) else 0.0
    todo = list(np.nonzero(deficit & ~direct)[0])
    W = np.hstack([X, XI])
    covered = np.zeros(len(X), dtype=bool)
    bumps: list = []
    nsteps = int(np.ceil(T_max / dt))
    for idx in todo:
        if covered[idx]:
            continue
        bump = _make_bump(m, W[idx], dt, nsteps, r_g, damping_level, probes, rng, weight)
        if bump is None:
            raise ConstructionError(
                f"phase point x={X[idx]}, xi={XI[idx]} neither reaches a >= {damping_level} "
                f"nor escapes within T_max={T_max}")
        bumps.append(bump)
        dist = np.linalg.norm(W - bump.center, axis=1)
        covered |= dist <= CORE * bump.radius
    beta = beta0 + sum(b.beta for b in bumps)
    info = {"C": C, "beta0": beta0, "deficit": int(np.count_nonzero(deficit)),
            "direct": int(np.count_nonzero(direct)),
            "trapped_bumps": sum(b.kind == "trapped" for b in bumps),
            "escape_bumps": sum(b.kind == "escape" for b in bumps)}
    horizon = nsteps
    return EscapeFunction(m, bumps, weight, beta, lo / 8.0, dt, r_g, (lo, hi), horizon, info)


def _metric_bound(m: MediumSpec, outer: float = 50.0, directions: int = 64) -> float:
    """Largest eigenvalue of ``G`` (exact grid for radial media, sampled otherwise)."""
    if m.radial_metric is not None:
        top = max(outer, m.radial_metric.knots[-1] if m.radial_metric.knots else 0.0)
        r = np.linspace(0.0, top, 20001)
        return float(max(np.max(m.radial_metric(r)), m.radial_metric.fill_outer))
    rng = np.random.default_rng(0)
    d = m.dimension
    dirs = rng.standard_normal((directions, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = (dirs[None] * np.linspace(0.0, outer, 501)[:, None, None]).reshape(-1, d)
    return float(np.max(np.linalg.eigvalsh(m.metric(X))))


def _radial_defect(m: MediumSpec) -> float:
    """``sup_r (1 - (2 gamma - r gamma') / gamma)^+`` for radial metrics."""
    if m.radial_metric is None or not m.radial_metric.knots:
        return 0.0
    r = np.linspace(0.0, m.radial_metric.knots[-1], 20001)
    g, dg = m.radial_metric.evaluate(r)
    return float(max(0.0, np.max(1.0 - (2.0 * g - r * dg) / g)))


def _make_bump(m, center, dt, nsteps, r_g, level, probes, rng, weight):
    d = m.dimension
    x0, xi0 = center[None, :d], center[None, d:]
    stop = escape_predicate_radius(r_g, x0)
    best = None
    for sigma in (1, -1):
        paths, nvalid = flow_paths(m, x0, xi0, sigma * dt, nsteps, stop)
        pts = paths[0, : nvalid[0]]
        k = _first_damping_time(m.absorption(pts[:, :d]), level)
        if k is not None and k > 0 and (best is None or k < best[1]):
            best = (sigma, k)
    if best is not None:
        sigma, k = best
        for radius in RADIUS_LADDER:
            P = _ball_probes(center, radius, probes, rng)
            Xe, XIe = flow_map(m, P[:, :d], P[:, d:], sigma * k * dt, k)
            landing = m.absorption(Xe)
            if np.min(landing) >= 0.5 * level:
                a_land = 0.5 * float(np.min(landing))
                # pushing forward the support (sigma=+1 pulls back) lands in {a >= a_land}
                return Bump(center.copy(), radius, "trapped", -sigma, k, weight / a_land)
    # escape-type: the orbit must leave in some direction before reaching the damping
    for sigma in (1, -1):
        for radius in RADIUS_LADDER:
            P = _ball_probes(center, radius, probes, rng)
            stop_p = escape_predicate_radius(r_g, P[:, :d])
            paths, nvalid = flow_paths(m, P[:, :d], P[:, d:], sigma * dt, nsteps, stop_p)
            if np.all(nvalid < nsteps + 1):
                return Bump(center.copy(), radius, "escape", sigma, None, 0.0)
    return None


@dataclass
class BracketReport:
    brackets: np.ndarray
    absorption: np.ndarray
    margins: np.ndarray
    worst_margin: float
    c0_target: float
    c0_achieved: float
    passed: bool


def poisson_bracket_check(f: EscapeFunction, X, XI, delta: float = 1e-4,
                          tol: float = 1e-6, beta: float | None = None) -> BracketReport:
    """``{p, f}`` by flow differencing and the lower bound ``{p,f} + beta a >= 4 c0``.

    ``{p, f}(w) = (f(phi^delta w) - f(phi^-delta w)) / (2 delta)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    XI = np.atleast_2d(np.asarray(XI, dtype=float))
    m = f.medium
    Xp, XIp = flow_map(m, X, XI, delta)
    Xm, XIm = flow_map(m, X, XI, -delta)
    both = f(np.vstack([Xp, Xm]), np.vstack([XIp, XIm]))
    n = len(X)
    br = (both[:n] - both[n:]) / (2.0 * delta)
    a = m.absorption(X)
    b = f.beta if beta is None else beta
    total = br + b * a
    margins = total - 4.0 * f.c0
    worst = float(np.min(margins)) if n else np.inf
    return BracketReport(br, a, margins, worst, f.c0, float(np.min(total)) / 4.0 if n else np.inf,
                         bool(worst >= -tol))


def write_bracket_csv(report: BracketReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "bracket", "a", "margin"])
        for i, (b, a, mg) in enumerate(zip(report.brackets, report.absorption, report.margins)):
            w.writerow([i, repr(float(b)), repr(float(a)), repr(float(mg))])
