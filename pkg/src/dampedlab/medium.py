"""Continuous media: metric ``G(x)``, absorption index ``a(x)`` and decay checks.

Fields are vectorised closures: ``metric(x)`` maps an array of points of
shape ``(..., d)`` to matrices of shape ``(..., d, d)`` and ``absorption(x)``
maps it to shape ``(...)``.  Radial media additionally carry their profile as
a :class:`RadialProfile` so that the flow kernels can evaluate ``G`` and its
gradient without finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InputError

__all__ = [
    "RadialProfile",
    "MediumSpec",
    "MetricDensitySpec",
    "DecayReport",
    "japanese_bracket",
    "radial_medium",
    "free_medium",
    "damped_free_medium",
    "bump_metric_medium",
    "trapping_well_medium",
    "builtin_media",
    "get_medium",
    "evaluate_fields",
    "verify_symbol_decay",
]


def japanese_bracket(x):
    """Return ``<x> = (1 + |x|^2)^(1/2)`` along the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


@dataclass(frozen=True)
class RadialProfile:
    """Piecewise polynomial function of ``r = |x|``.

    On ``[knots[i], knots[i+1])`` the value is
    ``sum_k coefficients[i][k] * (r - knots[i])**k``.  Below the first knot
    the profile equals ``fill_inner``, from the last knot on ``fill_outer``.
    """

    knots: tuple
    coefficients: tuple
    fill_inner: float = 1.0
    fill_outer: float = 1.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1:
            raise InputError("profile knots must be one-dimensional")
        if len(knots) and np.any(np.diff(knots) <= 0):
            raise InputError("profile knots must be strictly increasing")
        if len(knots) and len(self.coefficients) != len(knots) - 1:
            raise InputError("need one coefficient row per knot interval")

    @classmethod
    def constant(cls, value: float) -> "RadialProfile":
        return cls((), (), float(value), float(value))

    @classmethod
    def bump(cls, center: float, width: float, amplitude: float,
             base: float = 0.0, power: int = 4) -> "RadialProfile":
        """``base + amplitude * (1 - s^2)^power`` with ``s = (r - center)/width``.

        ``center`` must be 0 (ball bump, even polynomial) or at least
        ``width`` (annulus not touching the origin).
        """
        if width <= 0:
            raise InputError("bump width must be positive")
        if center != 0.0 and center < width:
            raise InputError("annular bump must not reach the origin")
        in_s = Polynomial([1.0, 0.0, -1.0]) ** power
        lo = max(center - width, 0.0)
        # local variable t = r - lo, so s = (t + lo - center) / width
        in_t = in_s(Polynomial([(lo - center) / width, 1.0 / width]))
        coef = amplitude * in_t.coef
        coef[0] += base
        return cls((lo, center + width), (tuple(coef),), float(base), float(base))

    @property
    def knot_array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)

    @property
    def coefficient_table(self) -> np.ndarray:
        """Coefficients padded to a rectangular ``(intervals, degree+1)`` array."""
        if not self.coefficients:
            return np.zeros((0, 1))
        deg = max(len(row) for row in self.coefficients)
        out = np.zeros((len(self.coefficients), deg))
        for i, row in enumerate(self.coefficients):
            out[i, : len(row)] = row
        return out

    def __call__(self, r):
        return self.evaluate(r)[0]

    def evaluate(self, r):
        """Return ``(value, derivative)`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        val = np.where(r < (self.knots[0] if self.knots else np.inf),
                       self.fill_inner, self.fill_outer).astype(float)
        der = np.zeros_like(val)
        if not self.knots:
            return val, der
        knots = self.knot_array
        table = self.coefficient_table
        idx = np.searchsorted(knots, r, side="right") - 1
        inside = (idx >= 0) & (idx < len(knots) - 1)
        if np.any(inside):
            t = r[inside] - knots[idx[inside]]
            rows = table[idx[inside]]
            v = np.zeros_like(t)
            dv = np.zeros_like(t)
            for k in range(table.shape[1] - 1, -1, -1):
                dv = dv * t + v
                v = v * t + rows[:, k]
            val[inside] = v
            der[inside] = dv
        return val, der

    def to_dict(self) -> dict:
        return {
            "knots": list(self.knots),
            "coefficients": [list(row) for row in self.coefficients],
            "fill_inner": self.fill_inner,
            "fill_outer": self.fill_outer,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RadialProfile":
        try:
            return cls(
                tuple(float(k) for k in data.get("knots", ())),
                tuple(tuple(float(c) for c in row) for row in data.get("coefficients", ())),
                float(data.get("fill_inner", data.get("fill", 1.0))),
                float(data.get("fill_outer", data.get("fill", 1.0))),
            )
        except (TypeError, ValueError) as exc:
            raise InputError(f"malformed radial profile: {exc}") from exc


@dataclass(frozen=True)
class MediumSpec:
    """A damped medium on R^d.

    ``eps`` bounds ``|G - I|`` in the sense that the eigenvalues of ``G``
    stay in ``[1 - eps, 1 + eps]``.  ``radial_metric`` is set when
    ``G(x) = gamma(|x|) I``; ``info`` holds construction constants (for
    instance the radius of the stable circular geodesic of a well).
    """

    dimension: int
    metric: Callable
    absorption: Callable
    rho: float
    name: str
    eps: float = 0.0
    radial_metric: RadialProfile | None = None
    radial_absorption: RadialProfile | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise InputError("dimension must be a positive integer")
        if not self.rho > 0:
            raise InputError("decay rate rho must be positive")

    def with_absorption(self, absorption: Callable, name: str,
                        radial_absorption: RadialProfile | None = None,
                        **info) -> "MediumSpec":
        return MediumSpec(self.dimension, self.metric, absorption, self.rho, name,
                          self.eps, self.radial_metric, radial_absorption,
                          {**self.info, **info})


@dataclass(frozen=True)
class MetricDensitySpec:
    """Riemannian data for ``-Delta_g``: ``g^{jk}`` from ``base.metric``, density ``|g|``.

    The density must equal 1 for ``|x| > radius``.
    """

    base: MediumSpec
    density: Callable
    radius: float

    def check(self, points) -> None:
        points = np.asarray(points, dtype=float)
        dens = np.asarray(self.density(points))
        if np.any(dens <= 0):
            raise InputError("metric density must be positive")
        far = np.linalg.norm(points, axis=-1) > self.radius
        if np.any(np.abs(dens[far] - 1.0) > 1e-12):
            raise InputError("metric density must equal 1 outside its radius")


def _identity_metric(d):
    eye = np.eye(d)

    def metric(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    return metric


def _radial_metric(profile: RadialProfile, d: int):
    eye = np.eye(d)

    def metric(x):
        x = np.asarray(x, dtype=float)
        gamma = profile(np.linalg.norm(x, axis=-1))
        return gamma[..., None, None] * eye

    return metric


def _radial_scalar(profile: RadialProfile):
    def scalar(x):
        x = np.asarray(x, dtype=float)
        return profile(np.linalg.norm(x, axis=-1))

    return scalar


def _zero_scalar(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1])


def radial_medium(d: int, metric: RadialProfile, absorption: RadialProfile | None,
                  rho: float = 1.0, name: str = "custom") -> MediumSpec:
    """Medium with ``G = gamma(|x|) I`` and a radial absorption profile."""
    if metric.fill_outer != 1.0:
        raise InputError("metric profile must tend to 1 at infinity")
    gam = np.linspace(0.0, metric.knots[-1] if metric.knots else 1.0, 2001)
    values = metric(gam)
    if np.any(values <= 0):
        raise InputError("metric profile must stay positive")
    eps = float(np.max(np.abs(values - 1.0)))
    if absorption is None:
        a_fun = _zero_scalar
    else:
        if absorption.fill_outer != 0.0:
            raise InputError("absorption profile must vanish at infinity")
        a_fun = _radial_scalar(absorption)
    return MediumSpec(d, _radial_metric(metric, d), a_fun, rho, name, eps,
                      metric, absorption)


def free_medium(d: int = 2) -> MediumSpec:
    return MediumSpec(d, _identity_metric(d), _zero_scalar, 1.0, "free", 0.0,
                      RadialProfile.constant(1.0), None)


def damped_free_medium(d: int = 2, c0: float = 1.0, rho: float = 1.0) -> MediumSpec:
    """``G = I`` and ``a(x) = c0 <x>^(-1-rho)``."""

    def absorption(x):
        return c0 * japanese_bracket(x) ** (-1.0 - rho)

    return MediumSpec(d, _identity_metric(d), absorption, rho, "damped-free", 0.0,
                      RadialProfile.constant(1.0), None, {"c0": c0})


def bump_metric_medium(d: int = 2, amplitude: float = 0.2, center: float = 2.0,
                       width: float = 1.0) -> MediumSpec:
    """Undamped radial hill ``G = (1 + amplitude * bump) I``; non-trapping."""
    prof = RadialProfile.bump(center, width, amplitude, base=1.0)
    m = radial_medium(d, prof, None, 1.0, "bump-metric")
    return MediumSpec(m.dimension, m.metric, m.absorption, m.rho, m.name,
                      abs(amplitude), prof, None,
                      {"center": center, "width": width, "amplitude": amplitude})


# Well profile: gamma = 1 - WELL_DEPTH * (1 - s^2)^4, s = (r - WELL_CENTER) / WELL_WIDTH.
# gamma(r)/r^2 then has a local minimum (stable circular geodesic) and a local
# maximum (unstable one).  Every bounded geodesic oscillates around the stable
# circle inside the unstable one, so an annulus covering both circles meets them all.
WELL_DEPTH = 0.6
WELL_CENTER = 2.5
WELL_WIDTH = 1.5
WELL_DAMPING = 1.0
WELL_DAMPING_HALF_WIDTH = 1.1
WELL_OFFSET_DAMPING_CENTER = 7.0


def _critical_radii(profile: RadialProfile, r_max: float):
    """Radii where ``gamma(r)/r^2`` is stationary, with their type."""
    r = np.linspace(0.05, r_max, 200001)
    g, dg = profile.evaluate(r)
    slope = r * dg - 2.0 * g  # sign of d/dr (gamma / r^2)
    out = []
    for i in np.nonzero(np.sign(slope[1:]) != np.sign(slope[:-1]))[0]:
        a, b = r[i], r[i + 1]
        fa = slope[i]
        for _ in range(60):
            mid = 0.5 * (a + b)
            gm, dgm = profile.evaluate(np.array([mid]))
            fm = mid * dgm[0] - 2.0 * gm[0]
            if np.sign(fm) == np.sign(fa):
                a, fa = mid, fm
            else:
                b = mid
        out.append((0.5 * (a + b), "stable" if slope[i] < 0 else "unstable"))
    return out


def trapping_well_medium(d: int = 2, damping_center: float | None = None,
                         name: str = "trapping-well") -> MediumSpec:
    """Radial well with a stable closed geodesic and annular damping.

    By default the damping annulus is centred between the stable and the
    unstable circle and contains both, so every bounded trajectory and both
    closed geodesics meet ``{a > 0}``.  Passing ``damping_center`` moves
    the annulus (used to exhibit a failure of geometric control).
    """
    if d < 2:
        raise InputError("the trapping well needs d >= 2")
    prof = RadialProfile.bump(WELL_CENTER, WELL_WIDTH, -WELL_DEPTH, base=1.0)
    crit = _critical_radii(prof, WELL_CENTER + WELL_WIDTH)
    stable = [r for r, kind in crit if kind == "stable"]
    unstable = [r for r, kind in crit if kind == "unstable"]
    r_c = stable[0]
    center = 0.5 * (r_c + unstable[0]) if damping_center is None else damping_center
    a_prof = RadialProfile.bump(center, WELL_DAMPING_HALF_WIDTH, WELL_DAMPING, base=0.0)
    a_prof = RadialProfile(a_prof.knots, a_prof.coefficients, 0.0, 0.0)
    m = radial_medium(d, prof, a_prof, 1.0, name)
    return MediumSpec(m.dimension, m.metric, m.absorption, m.rho, name, WELL_DEPTH,
                      prof, a_prof,
                      {"stable_radius": float(r_c), "unstable_radius": float(unstable[0]),
                       "damping_center": float(center),
                       "damping_half_width": WELL_DAMPING_HALF_WIDTH})


def builtin_media(d: int = 2) -> list:
    """Test corpus of media in dimension ``d``.

    The trapping media need ``d >= 2`` and are omitted for ``d = 1``.
    """
    media = [free_medium(d), damped_free_medium(d), bump_metric_medium(d)]
    if d >= 2:
        media.append(trapping_well_medium(d))
        media.append(trapping_well_medium(d, WELL_OFFSET_DAMPING_CENTER,
                                          name="trapping-well-offset"))
    return media


def get_medium(name: str, d: int = 2, **kwargs) -> MediumSpec:
    factories = {
        "free": free_medium,
        "damped-free": damped_free_medium,
        "bump-metric": bump_metric_medium,
        "trapping-well": trapping_well_medium,
        "trapping-well-offset": lambda d, **kw: trapping_well_medium(
            d, kw.pop("damping_center", WELL_OFFSET_DAMPING_CENTER),
            name="trapping-well-offset", **kw),
    }
    try:
        factory = factories[name]
    except KeyError:
        raise InputError(f"unknown medium {name!r}; known: {sorted(factories)}") from None
    return factory(d, **kwargs)


def evaluate_fields(m: MediumSpec, x) -> tuple:
    """Return ``(G(x), a(x))`` at one point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dimension,):
        raise InputError(f"expected a point of shape ({m.dimension},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("point must be finite")
    G = np.asarray(m.metric(x), dtype=float)
    return 0.5 * (G + G.T), float(m.absorption(x))


@dataclass
class DecayReport:
    """Sampled decay constants per radius.

    Columns of ``constants``: ``<x>^rho |G - I|``, ``<x>^(rho+1) |dG|``,
    ``<x>^(1+rho) |a|``, ``<x>^(2+rho) |da|`` (sup over sphere samples).
    """

    radii: np.ndarray
    constants: np.ndarray
    violations: list
    passed: bool

    labels = ("metric_order0", "metric_order1", "absorption_order0", "absorption_order1")


def _sphere_points(d: int, count: int, rng) -> np.ndarray:
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    pts = rng.standard_normal((count, d))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def verify_symbol_decay(m: MediumSpec, sample_radii: Sequence[float],
                        growth_factor: float = 2.0, directions: int = 64,
                        seed: int = 0) -> DecayReport:
    """Estimate the decay constants of ``G - I`` and ``a`` (orders 0 and 1).

    A column is flagged when it increases monotonically over the outer half
    of the radii and its last value exceeds ``growth_factor`` times the value
    at the start of that half.
    """
    radii = np.asarray(sample_radii, dtype=float)
    if radii.size == 0:
        raise InputError("need at least one sample radius")
    if np.any(radii <= 0) or np.any(np.diff(radii) < 0):
        raise InputError("sample radii must be positive and sorted")
    d = m.dimension
    rng = np.random.default_rng(seed)
    dirs = _sphere_points(d, directions, rng)
    eye = np.eye(d)
    consts = np.zeros((radii.size, 4))
    for i, r in enumerate(radii):
        x = r * dirs
        br = np.sqrt(1.0 + r * r)
        step = 1e-4 * br
        G = m.metric(x)
        a = m.absorption(x)
        dG = 0.0
        da = 0.0
        for j in range(d):
            e = step * eye[j]
            dG = max(dG, np.max(np.abs(m.metric(x + e) - m.metric(x - e))) / (2 * step))
            da = max(da, np.max(np.abs(m.absorption(x + e) - m.absorption(x - e))) / (2 * step))
        consts[i] = (
            br ** m.rho * np.max(np.abs(G - eye)),
            br ** (m.rho + 1) * dG,
            br ** (1 + m.rho) * np.max(np.abs(a)),
            br ** (2 + m.rho) * da,
        )
    violations = []
    half = radii.size // 2
    if radii.size >= 2:
        for k, label in enumerate(DecayReport.labels):
            tail = consts[half:, k] if radii.size - half >= 2 else consts[:, k]
            scale = max(np.max(np.abs(consts[:, k])), 1e-300)
            monotone = np.all(np.diff(tail) >= -1e-9 * scale)
            if monotone and tail[-1] > 1e-12 and tail[-1] > growth_factor * max(tail[0], 1e-300):
                violations.append(label)
    return DecayReport(radii, consts, violations, not violations)
