"""NumPy implementation of the radial flow kernels.

Both backends integrate ``p(x, xi) = gamma(|x|) |xi|^2`` with classic RK4:

    x' = 2 gamma xi,    xi' = -gamma'(|x|) |xi|^2 x / |x|.

``gamma`` is a piecewise polynomial given by ``knots`` and the local power
coefficients ``coefs[i, k]`` of ``(r - knots[i])**k``.  A point stops once
``|x| >= stop_radius`` while moving outward in the direction of integration
(``sign(dt) x . xi > 0``); later samples are NaN.
"""

from __future__ import annotations

import numpy as np


def profile_eval(knots, coefs, fill_inner, fill_outer, r):
    """Value and derivative of the piecewise polynomial at radii ``r``."""
    r = np.asarray(r, dtype=float)
    val = np.full(r.shape, float(fill_outer))
    der = np.zeros(r.shape)
    if len(knots) == 0:
        val[...] = fill_inner
        return val, der
    val[r < knots[0]] = fill_inner
    idx = np.searchsorted(knots, r, side="right") - 1
    inside = (idx >= 0) & (idx < len(knots) - 1)
    if np.any(inside):
        t = r[inside] - knots[idx[inside]]
        rows = coefs[idx[inside]]
        v = np.zeros_like(t)
        dv = np.zeros_like(t)
        for k in range(coefs.shape[1] - 1, -1, -1):
            dv = dv * t + v
            v = v * t + rows[:, k]
        val[inside] = v
        der[inside] = dv
    return val, der


def _rhs(knots, coefs, fin, fout, X, XI):
    r = np.sqrt(np.sum(X * X, axis=1))
    g, dg = profile_eval(knots, coefs, fin, fout, r)
    xi2 = np.sum(XI * XI, axis=1)
    safe = np.where(r > 0, r, 1.0)
    coef = np.where(r > 0, -dg * xi2 / safe, 0.0)
    return 2.0 * g[:, None] * XI, coef[:, None] * X


def _rk4(knots, coefs, fin, fout, X, XI, dt):
    k1x, k1p = _rhs(knots, coefs, fin, fout, X, XI)
    k2x, k2p = _rhs(knots, coefs, fin, fout, X + 0.5 * dt * k1x, XI + 0.5 * dt * k1p)
    k3x, k3p = _rhs(knots, coefs, fin, fout, X + 0.5 * dt * k2x, XI + 0.5 * dt * k2p)
    k4x, k4p = _rhs(knots, coefs, fin, fout, X + dt * k3x, XI + dt * k3p)
    return (X + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            XI + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p))


def _energy(knots, coefs, fin, fout, X, XI):
    g, _ = profile_eval(knots, coefs, fin, fout, np.sqrt(np.sum(X * X, axis=1)))
    return g * np.sum(XI * XI, axis=1)


def radial_paths(knots, coefs, fill_inner, fill_outer, X0, XI0, dt, nsteps, stop_radius):
    """Record trajectories; returns ``(paths[M, nsteps+1, 2d], nvalid[M])``."""
    knots = np.ascontiguousarray(knots, dtype=float)
    coefs = np.ascontiguousarray(coefs, dtype=float)
    X = np.array(X0, dtype=float)
    XI = np.array(XI0, dtype=float)
    M, d = X.shape
    stop = np.broadcast_to(np.asarray(stop_radius, dtype=float), (M,))
    paths = np.full((M, nsteps + 1, 2 * d), np.nan)
    paths[:, 0, :d] = X
    paths[:, 0, d:] = XI
    nvalid = np.ones(M, dtype=np.int64)
    active = np.ones(M, dtype=bool)
    sgn = 1.0 if dt > 0 else -1.0
    for step in range(1, nsteps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Xa, XIa = _rk4(knots, coefs, fill_inner, fill_outer, X[idx], XI[idx], dt)
        X[idx], XI[idx] = Xa, XIa
        paths[idx, step, :d] = Xa
        paths[idx, step, d:] = XIa
        nvalid[idx] = step + 1
        r = np.sqrt(np.sum(Xa * Xa, axis=1))
        done = (r >= stop[idx]) & (sgn * np.sum(Xa * XIa, axis=1) > 0)
        active[idx[done]] = False
    return paths, nvalid


def radial_classify(knots, coefs, fill_inner, fill_outer, aknots, acoefs, a_inner, a_outer,
                    X0, XI0, dt, nsteps, escape_radius):
    """Integrate without recording samples.

    Returns ``(escape_step, max_radius, max_a, drift)``: the first step at
    which the escape predicate holds (-1 if never), the largest ``|x|``, the
    largest absorption value met before escape, and the largest relative
    energy drift.
    """
    knots = np.ascontiguousarray(knots, dtype=float)
    coefs = np.ascontiguousarray(coefs, dtype=float)
    aknots = np.ascontiguousarray(aknots, dtype=float)
    acoefs = np.ascontiguousarray(acoefs, dtype=float)
    X = np.array(X0, dtype=float)
    XI = np.array(XI0, dtype=float)
    M, d = X.shape
    esc_r = np.broadcast_to(np.asarray(escape_radius, dtype=float), (M,))
    p0 = _energy(knots, coefs, fill_inner, fill_outer, X, XI)
    r = np.sqrt(np.sum(X * X, axis=1))
    max_r = r.copy()
    max_a = profile_eval(aknots, acoefs, a_inner, a_outer, r)[0]
    drift = np.zeros(M)
    escape = np.full(M, -1, dtype=np.int64)
    active = np.ones(M, dtype=bool)
    sgn = 1.0 if dt > 0 else -1.0
    for step in range(1, nsteps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Xa, XIa = _rk4(knots, coefs, fill_inner, fill_outer, X[idx], XI[idx], dt)
        X[idx], XI[idx] = Xa, XIa
        r = np.sqrt(np.sum(Xa * Xa, axis=1))
        max_r[idx] = np.maximum(max_r[idx], r)
        max_a[idx] = np.maximum(max_a[idx], profile_eval(aknots, acoefs, a_inner, a_outer, r)[0])
        p = _energy(knots, coefs, fill_inner, fill_outer, Xa, XIa)
        scale = np.where(p0[idx] > 0, p0[idx], 1.0)
        drift[idx] = np.maximum(drift[idx], np.abs(p - p0[idx]) / scale)
        done = (r >= esc_r[idx]) & (sgn * np.sum(Xa * XIa, axis=1) > 0)
        escape[idx[done]] = step
        active[idx[done]] = False
    return escape, max_r, max_a, drift


def smooth_bump(s, core):
    """1 on ``[0, core]``, quintic smoothstep down to 0 at ``s = 1``."""
    s = np.asarray(s, dtype=float)
    t = np.clip((s - core) / (1.0 - core), 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def smooth_bump_slope(s, core):
    """Derivative of :func:`smooth_bump` in ``s``."""
    s = np.asarray(s, dtype=float)
    t = np.clip((s - core) / (1.0 - core), 0.0, 1.0)
    return -30.0 * t * t * (1.0 - t) ** 2 / (1.0 - core)


def endpoint_rate(points, field, center, radius, core, sgn):
    """``d/dt g(phi^{sgn t} w)`` at the given phase points (NaN rows give 0)."""
    diff = points - center
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    ok = np.isfinite(dist) & (dist > 0)
    safe = np.where(ok, dist, 1.0)
    slope = np.where(ok, smooth_bump_slope(np.nan_to_num(dist / radius, nan=2.0), core), 0.0)
    dot = np.nan_to_num(np.sum(diff * field, axis=-1))
    return sgn * slope * dot / (radius * safe)


def radial_bump_integrals(knots, coefs, fill_inner, fill_outer, X0, XI0, dt, nsteps, stop_radius,
                          centers, radii, core, horizons):
    """Corrected trapezoid integrals of phase-space bumps along trajectories (see the compiled kernel)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    XI0 = np.atleast_2d(np.asarray(XI0, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.asarray(radii, dtype=float)
    horizons = np.minimum(np.asarray(horizons, dtype=np.int64), nsteps)
    M, d = X0.shape
    out = np.zeros((M, len(centers)))
    if len(centers) == 0:
        return out
    hmax = int(horizons.max())
    stop = np.broadcast_to(np.asarray(stop_radius, dtype=float), (M,))
    chunk = max(1, int(400_000 // (hmax + 1)))
    h = abs(dt)
    for s in range(0, M, chunk):
        paths, _ = radial_paths(knots, coefs, fill_inner, fill_outer, X0[s:s + chunk],
                                XI0[s:s + chunk], dt, hmax, stop[s:s + chunk])
        for b, (c, r, hb) in enumerate(zip(centers, radii, horizons)):
            if hb == 0:
                continue
            seg = paths[:, : hb + 1]
            dist = np.sqrt(np.sum((seg - c) ** 2, axis=-1))
            vals = np.where(np.isnan(dist), 0.0, smooth_bump(np.nan_to_num(dist / r, nan=2.0), core))
            weights = np.full(hb + 1, h)
            weights[0] = weights[-1] = 0.5 * h
            ends = seg[:, [0, hb]]
            fx, fp = _rhs(knots, coefs, fill_inner, fill_outer, np.nan_to_num(ends[..., :d].reshape(-1, d)),
                          np.nan_to_num(ends[..., d:].reshape(-1, d)))
            field = np.concatenate([fx, fp], axis=1).reshape(ends.shape)
            rate = endpoint_rate(ends, field, c, r, core, np.sign(dt))
            out[s:s + chunk, b] = vals @ weights + (h * h / 12.0) * (rate[:, 0] - rate[:, 1])
    return out
