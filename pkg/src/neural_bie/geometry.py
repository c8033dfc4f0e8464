"""Parametrized boundary families and their Monte-Carlo quadrature samples."""

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Geometry parameter outside the admissible range."""


class GeometryError(ValueError):
    """Boundary description is degenerate (e.g. nonpositive polar radius)."""


@dataclass
class BoundarySample:
    """Quadrature point cloud on one boundary.

    ``jacobians`` convert parameter measure to arclength (curves) or area
    (surfaces); ``domain_measure / M * sum(f * jacobians)`` is an unbiased
    estimate of the boundary integral of ``f``.
    """

    points: np.ndarray
    normals: np.ndarray
    jacobians: np.ndarray
    params: np.ndarray
    domain_measure: float

    def __post_init__(self):
        m = len(self.jacobians)
        if not (len(self.points) == len(self.normals) == len(self.params) == m):
            raise ValueError("sample arrays disagree in length")

    def __len__(self):
        return len(self.jacobians)

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class ParamCurve2D:
    """Star-shaped curve r(a; t) = 1 + amplitude * sum(c_i(t) * trig(f_i a)).

    ``terms`` holds ``(kind, frequency, multiplied_by_t)`` triples.
    """

    name: str
    amplitude: float
    terms: tuple = ()
    t_range: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        lo, hi = self.t_range
        ts = np.linspace(lo, hi, 11) if np.isfinite(lo) and np.isfinite(hi) else [0.0]
        alpha = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
        for t in ts:
            if np.min(self.radius(alpha, t)) <= 0:
                raise GeometryError(f"{self.name}: nonpositive radius at t={t}")

    def _coef(self, scaled, t):
        return t if scaled else 1.0

    def radius(self, alpha, t):
        alpha = np.asarray(alpha, dtype=float)
        s = np.zeros_like(alpha)
        for kind, freq, scaled in self.terms:
            trig = np.sin if kind == "sin" else np.cos
            s = s + self._coef(scaled, t) * trig(freq * alpha)
        return 1.0 + self.amplitude * s

    def radius_prime(self, alpha, t):
        alpha = np.asarray(alpha, dtype=float)
        s = np.zeros_like(alpha)
        for kind, freq, scaled in self.terms:
            c = self._coef(scaled, t) * freq
            s = s + (c * np.cos(freq * alpha) if kind == "sin" else -c * np.sin(freq * alpha))
        return self.amplitude * s

    def check_t(self, t):
        lo, hi = self.t_range
        if not (lo <= t <= hi):
            raise DomainError(f"{self.name}: t={t} outside [{lo}, {hi}]")


LAPLACE_STAR = ParamCurve2D(
    "laplace-star",
    0.2,
    (("sin", 3, False), ("sin", 4, True), ("sin", 6, False), ("cos", 2, False), ("cos", 5, False)),
    (1.0, 2.0),
)
BIHARMONIC_STAR = ParamCurve2D(
    "biharmonic-star",
    0.1,
    (("sin", 1, False), ("cos", 2, True), ("sin", 3, False), ("cos", 4, False)),
    (1.0, 2.0),
)
UNIT_CIRCLE = ParamCurve2D("unit-circle", 0.0, (), (-np.inf, np.inf))

CURVES = {c.name: c for c in (LAPLACE_STAR, BIHARMONIC_STAR, UNIT_CIRCLE)}

HEMISPHERE_T_RANGE = (0.0, 0.5)
HEMISPHERE_MEASURE = 2 * np.pi**2


def curve_point(curve, alpha, t):
    """Point, outward unit normal and arclength jacobian at angle ``alpha``.

    ``alpha`` may be an array; outputs gain a trailing coordinate axis.
    """
    curve.check_t(t)
    alpha = np.asarray(alpha, dtype=float)
    r = curve.radius(alpha, t)
    if np.any(r <= 0):
        raise GeometryError(f"{curve.name}: nonpositive radius")
    dr = curve.radius_prime(alpha, t)
    ca, sa = np.cos(alpha), np.sin(alpha)
    point = np.stack([r * ca, r * sa], axis=-1)
    dx = dr * ca - r * sa
    dy = dr * sa + r * ca
    jac = np.hypot(dx, dy)
    normal = np.stack([dy / jac, -dx / jac], axis=-1)
    return point, normal, jac


def curve_on_params(curve, t, alpha):
    point, normal, jac = curve_point(curve, alpha, t)
    return BoundarySample(point, normal, jac, np.asarray(alpha)[:, None], 2 * np.pi)


def sample_curve(curve, t, m, rng):
    if m < 1:
        raise ValueError("need at least one quadrature point")
    alpha = rng.uniform(0.0, 2 * np.pi, m)
    return curve_on_params(curve, t, alpha)


def check_hemisphere_t(t):
    lo, hi = HEMISPHERE_T_RANGE
    if not (lo <= t <= hi):
        raise DomainError(f"hemispheres: t={t} outside [{lo}, {hi}]")


def hemispheres_on_params(t, theta, phi):
    """Map spherical angles to the twin-hemisphere surface.

    ``theta <= pi/2`` selects the upper hemisphere centred at (0, 0, t),
    larger polar angles the lower one centred at (0, 0, -t).
    """
    check_hemisphere_t(t)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    normal = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    center_z = np.where(theta <= np.pi / 2, t, -t)
    point = normal.copy()
    point[..., 2] += center_z
    return BoundarySample(point, normal, st, np.stack([theta, phi], axis=-1), HEMISPHERE_MEASURE)


def sample_hemispheres(t, m, rng):
    if m % 2:
        raise ValueError(f"hemisphere sample size must be even, got {m}")
    half = m // 2
    theta = np.concatenate(
        [rng.uniform(0.0, np.pi / 2, half), rng.uniform(np.pi / 2, np.pi, half)]
    )
    phi = rng.uniform(0.0, 2 * np.pi, m)
    return hemispheres_on_params(t, theta, phi)


def curve_length(curve, t, n=100_000):
    """Trapezoid-rule arclength; spectrally accurate for these periodic curves."""
    alpha = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    _, _, jac = curve_point(curve, alpha, t)
    return 2 * np.pi * jac.mean()


def mc_measure(sample):
    return sample.domain_measure * sample.jacobians.mean()
