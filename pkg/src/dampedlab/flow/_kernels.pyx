# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled radial flow kernels; same interface and semantics as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN

cnp.import_array()

DEF MAXD = 8


cdef inline void profile_eval(const double[::1] knots, const double[:, ::1] coefs,
                              double fin, double fout, double r,
                              double* val, double* der) noexcept nogil:
    cdef Py_ssize_t nk = knots.shape[0]
    cdef Py_ssize_t lo, hi, mid, k
    cdef double t, v, dv
    if nk == 0:
        val[0] = fin
        der[0] = 0.0
        return
    if r < knots[0]:
        val[0] = fin
        der[0] = 0.0
        return
    if r >= knots[nk - 1]:
        val[0] = fout
        der[0] = 0.0
        return
    lo = 0
    hi = nk - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if knots[mid] <= r:
            lo = mid
        else:
            hi = mid
    t = r - knots[lo]
    v = 0.0
    dv = 0.0
    for k in range(coefs.shape[1] - 1, -1, -1):
        dv = dv * t + v
        v = v * t + coefs[lo, k]
    val[0] = v
    der[0] = dv


cdef inline void rhs(const double[::1] knots, const double[:, ::1] coefs, double fin, double fout,
                     int d, const double* x, const double* p, double* dx, double* dp) noexcept nogil:
    cdef double r2 = 0.0, xi2 = 0.0, r, g, dg, c
    cdef int j
    for j in range(d):
        r2 += x[j] * x[j]
        xi2 += p[j] * p[j]
    r = sqrt(r2)
    profile_eval(knots, coefs, fin, fout, r, &g, &dg)
    c = -dg * xi2 / r if r > 0 else 0.0
    for j in range(d):
        dx[j] = 2.0 * g * p[j]
        dp[j] = c * x[j]


cdef inline void rk4(const double[::1] knots, const double[:, ::1] coefs, double fin, double fout,
                     int d, double* x, double* p, double dt) noexcept nogil:
    cdef double k1x[MAXD], k1p[MAXD], k2x[MAXD], k2p[MAXD]
    cdef double k3x[MAXD], k3p[MAXD], k4x[MAXD], k4p[MAXD]
    cdef double tx[MAXD], tp[MAXD]
    cdef int j
    rhs(knots, coefs, fin, fout, d, x, p, k1x, k1p)
    for j in range(d):
        tx[j] = x[j] + 0.5 * dt * k1x[j]
        tp[j] = p[j] + 0.5 * dt * k1p[j]
    rhs(knots, coefs, fin, fout, d, tx, tp, k2x, k2p)
    for j in range(d):
        tx[j] = x[j] + 0.5 * dt * k2x[j]
        tp[j] = p[j] + 0.5 * dt * k2p[j]
    rhs(knots, coefs, fin, fout, d, tx, tp, k3x, k3p)
    for j in range(d):
        tx[j] = x[j] + dt * k3x[j]
        tp[j] = p[j] + dt * k3p[j]
    rhs(knots, coefs, fin, fout, d, tx, tp, k4x, k4p)
    for j in range(d):
        x[j] += dt / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j])
        p[j] += dt / 6.0 * (k1p[j] + 2.0 * k2p[j] + 2.0 * k3p[j] + k4p[j])


cdef inline double radius(int d, const double* x) noexcept nogil:
    cdef double s = 0.0
    cdef int j
    for j in range(d):
        s += x[j] * x[j]
    return sqrt(s)


cdef inline double outward(int d, const double* x, const double* p) noexcept nogil:
    cdef double s = 0.0
    cdef int j
    for j in range(d):
        s += x[j] * p[j]
    return s


def _prepare(knots, coefs):
    k = np.ascontiguousarray(knots, dtype=np.float64)
    c = np.ascontiguousarray(coefs, dtype=np.float64)
    if c.ndim != 2:
        c = c.reshape(max(len(k) - 1, 0), -1) if c.size else np.zeros((0, 1))
    return k, c


def radial_paths(knots, coefs, double fill_inner, double fill_outer, X0, XI0, double dt,
                 Py_ssize_t nsteps, stop_radius):
    """Record trajectories; returns ``(paths[M, nsteps+1, 2d], nvalid[M])``."""
    cdef double[::1] kn
    cdef double[:, ::1] cf
    kn, cf = _prepare(knots, coefs)
    cdef double[:, ::1] X = np.array(X0, dtype=np.float64, order="C")
    cdef double[:, ::1] XI = np.array(XI0, dtype=np.float64, order="C")
    cdef Py_ssize_t M = X.shape[0], i, step
    cdef int d = <int>X.shape[1], j
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef double[::1] stop = np.array(
        np.broadcast_to(np.asarray(stop_radius, dtype=np.float64), (M,)), dtype=np.float64)
    out = np.full((M, nsteps + 1, 2 * d), np.nan)
    cdef double[:, :, ::1] P = out
    nvalid_arr = np.ones(M, dtype=np.int64)
    cdef cnp.int64_t[::1] nvalid = nvalid_arr
    cdef double x[MAXD]
    cdef double p[MAXD]
    cdef double sgn = 1.0 if dt > 0 else -1.0
    with nogil:
        for i in range(M):
            for j in range(d):
                x[j] = X[i, j]
                p[j] = XI[i, j]
                P[i, 0, j] = x[j]
                P[i, 0, d + j] = p[j]
            for step in range(1, nsteps + 1):
                rk4(kn, cf, fill_inner, fill_outer, d, x, p, dt)
                for j in range(d):
                    P[i, step, j] = x[j]
                    P[i, step, d + j] = p[j]
                nvalid[i] = step + 1
                if radius(d, x) >= stop[i] and sgn * outward(d, x, p) > 0:
                    break
    return out, nvalid_arr


def radial_classify(knots, coefs, double fill_inner, double fill_outer, aknots, acoefs,
                    double a_inner, double a_outer, X0, XI0, double dt, Py_ssize_t nsteps,
                    escape_radius):
    """Integrate without recording; returns ``(escape_step, max_radius, max_a, drift)``."""
    cdef double[::1] kn, akn
    cdef double[:, ::1] cf, acf
    kn, cf = _prepare(knots, coefs)
    akn, acf = _prepare(aknots, acoefs)
    cdef double[:, ::1] X = np.array(X0, dtype=np.float64, order="C")
    cdef double[:, ::1] XI = np.array(XI0, dtype=np.float64, order="C")
    cdef Py_ssize_t M = X.shape[0], i, step
    cdef int d = <int>X.shape[1], j
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef double[::1] esc = np.array(
        np.broadcast_to(np.asarray(escape_radius, dtype=np.float64), (M,)), dtype=np.float64)
    escape_arr = np.full(M, -1, dtype=np.int64)
    max_r_arr = np.zeros(M)
    max_a_arr = np.zeros(M)
    drift_arr = np.zeros(M)
    cdef cnp.int64_t[::1] escape = escape_arr
    cdef double[::1] max_r = max_r_arr, max_a = max_a_arr, drift = drift_arr
    cdef double x[MAXD]
    cdef double p[MAXD]
    cdef double sgn = 1.0 if dt > 0 else -1.0
    cdef double r, g, dg, av, dav, p0, pe, scale, xi2
    with nogil:
        for i in range(M):
            xi2 = 0.0
            for j in range(d):
                x[j] = X[i, j]
                p[j] = XI[i, j]
                xi2 += p[j] * p[j]
            r = radius(d, x)
            profile_eval(kn, cf, fill_inner, fill_outer, r, &g, &dg)
            p0 = g * xi2
            scale = p0 if p0 > 0 else 1.0
            profile_eval(akn, acf, a_inner, a_outer, r, &av, &dav)
            max_r[i] = r
            max_a[i] = av
            for step in range(1, nsteps + 1):
                rk4(kn, cf, fill_inner, fill_outer, d, x, p, dt)
                r = radius(d, x)
                if r > max_r[i]:
                    max_r[i] = r
                profile_eval(akn, acf, a_inner, a_outer, r, &av, &dav)
                if av > max_a[i]:
                    max_a[i] = av
                xi2 = 0.0
                for j in range(d):
                    xi2 += p[j] * p[j]
                profile_eval(kn, cf, fill_inner, fill_outer, r, &g, &dg)
                pe = fabs(g * xi2 - p0) / scale
                if pe > drift[i]:
                    drift[i] = pe
                if r >= esc[i] and sgn * outward(d, x, p) > 0:
                    escape[i] = step
                    break
    return escape_arr, max_r_arr, max_a_arr, drift_arr


cdef inline double smooth_bump(double s, double core) noexcept nogil:
    cdef double t
    if s <= core:
        return 1.0
    if s >= 1.0:
        return 0.0
    t = (s - core) / (1.0 - core)
    return 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


cdef inline double smooth_bump_slope(double s, double core) noexcept nogil:
    cdef double t
    if s <= core or s >= 1.0:
        return 0.0
    t = (s - core) / (1.0 - core)
    return -30.0 * t * t * (1.0 - t) * (1.0 - t) / (1.0 - core)


def radial_bump_integrals(knots, coefs, double fill_inner, double fill_outer, X0, XI0, double dt,
                          Py_ssize_t nsteps, stop_radius, centers, radii, double core, horizons):
    """Trapezoid integrals of phase-space bumps along trajectories.

    Returns ``I[M, B]`` with ``I[i, b] = int_0^{horizons[b] |dt|} g_b(phi^{t sign(dt)}(w_i)) dt``;
    a trajectory stops once the escape predicate for ``stop_radius`` holds.
    The trapezoid sum carries the Euler-Maclaurin endpoint correction
    ``-(dt^2 / 12) (G'(end) - G'(0))``.
    """
    cdef double[::1] kn
    cdef double[:, ::1] cf
    kn, cf = _prepare(knots, coefs)
    cdef double[:, ::1] X = np.array(X0, dtype=np.float64, order="C")
    cdef double[:, ::1] XI = np.array(XI0, dtype=np.float64, order="C")
    cdef double[:, ::1] C = np.array(centers, dtype=np.float64, order="C")
    cdef double[::1] R = np.array(radii, dtype=np.float64)
    cdef cnp.int64_t[::1] H = np.minimum(np.array(horizons, dtype=np.int64), nsteps)
    cdef Py_ssize_t M = X.shape[0], B = C.shape[0], i, b, step, hmax = 0
    cdef int d = <int>X.shape[1], j
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef double[::1] stop = np.array(
        np.broadcast_to(np.asarray(stop_radius, dtype=np.float64), (M,)), dtype=np.float64)
    out_arr = np.zeros((M, B))
    cdef double[:, ::1] out = out_arr
    cdef double x[MAXD]
    cdef double p[MAXD]
    cdef double sgn = 1.0 if dt > 0 else -1.0
    cdef double h = fabs(dt), dx2, dist2, w, r2, dist, slope, rate
    cdef double fx[MAXD]
    cdef double fp[MAXD]
    for b in range(B):
        if H[b] > hmax:
            hmax = H[b]
    if hmax > nsteps:
        hmax = nsteps
    with nogil:
        for i in range(M):
            for j in range(d):
                x[j] = X[i, j]
                p[j] = XI[i, j]
            step = 0
            while True:
                for b in range(B):
                    if step > H[b] or H[b] == 0:
                        continue
                    r2 = R[b] * R[b]
                    dx2 = 0.0
                    for j in range(d):
                        dx2 += (x[j] - C[b, j]) * (x[j] - C[b, j])
                    if dx2 >= r2:
                        continue
                    dist2 = dx2
                    for j in range(d):
                        dist2 += (p[j] - C[b, d + j]) * (p[j] - C[b, d + j])
                    if dist2 >= r2:
                        continue
                    dist = sqrt(dist2)
                    w = h if (step > 0 and step < H[b]) else 0.5 * h
                    out[i, b] += w * smooth_bump(dist / R[b], core)
                    if (step == 0 or step == H[b]) and dist > 0:
                        slope = smooth_bump_slope(dist / R[b], core)
                        if slope != 0.0:
                            rhs(kn, cf, fill_inner, fill_outer, d, x, p, fx, fp)
                            rate = 0.0
                            for j in range(d):
                                rate += (x[j] - C[b, j]) * fx[j] + (p[j] - C[b, d + j]) * fp[j]
                            rate *= sgn * slope / (R[b] * dist)
                            out[i, b] += (h * h / 12.0) * (rate if step == 0 else -rate)
                if step >= hmax:
                    break
                rk4(kn, cf, fill_inner, fill_outer, d, x, p, dt)
                step += 1
                if radius(d, x) >= stop[i] and sgn * outward(d, x, p) > 0:
                    break
    return out_arr
