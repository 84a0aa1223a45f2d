"""Discrete k-space curves and the difference operators acting on them.

Units are fixed across the package: k-space in cm^-1, time in ms.

The first-order operator pins the first derivative sample to zero and uses
backward differences elsewhere; the second-order operator is defined as the
negated normal operator of the first one, ``M2 = -M1^T M1``. Everything is
applied matrix-free on ``(n, d)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "NormMode",
    "DiscreteCurve",
    "VectorSeries",
    "diff",
    "diff_adjoint",
    "diff2",
    "first_difference",
    "adjoint_first_difference",
    "second_difference",
    "adjoint_second_difference",
    "series_norm",
    "dual_norm",
    "LipschitzEstimate",
    "lipschitz_constant",
    "lipschitz_upper_bound",
    "sample_at_rate",
]


class NormMode(str, Enum):
    """Rotation-variant (per-axis sup) or rotation-invariant (per-sample l2)."""

    RV = "RV"
    RIV = "RIV"

    @classmethod
    def parse(cls, value) -> "NormMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidArgument(f"unknown norm mode {value!r}; expected RV or RIV") from None


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgument(f"points must be an (n, d) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """``n`` k-space locations sampled every ``dt`` ms.

    ``d`` is 2 or 3 for trajectories; 1-D curves are accepted as well since
    they are convenient for small worked examples and operator tests.
    """

    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[0] < 2:
            raise InvalidArgument("a curve needs at least 2 points")
        if pts.shape[1] > 3:
            raise InvalidArgument(f"dimension must be at most 3, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("curve coordinates must be finite")
        dt = float(self.dt)
        if not (dt > 0 and np.isfinite(dt)):
            raise InvalidArgument(f"dt must be positive, got {self.dt!r}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dt", dt)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * self.dt

    def with_points(self, points) -> "DiscreteCurve":
        return DiscreteCurve(points, self.dt)

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DiscreteCurve(n={self.n}, d={self.d}, dt={self.dt:g}, T={self.duration:g})"


@dataclass(frozen=True, eq=False)
class VectorSeries:
    """Per-sample vectors (velocity or acceleration) on the curve's time grid."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        vals = _as_points(self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


# -- array-level stencils ----------------------------------------------------


def diff(s: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(s)
    np.subtract(s[1:], s[:-1], out=out[1:])
    out[1:] /= dt
    return out


def diff_adjoint(y: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] += y[1:]
    out[:-1] -= y[1:]
    out /= dt
    return out


def diff2(s: np.ndarray, dt: float) -> np.ndarray:
    """``-M1^T M1 s``; symmetric, so it is its own adjoint."""
    return -diff_adjoint(diff(s, dt), dt)


# -- curve-level operations --------------------------------------------------


def first_difference(curve: DiscreteCurve) -> VectorSeries:
    return VectorSeries(diff(curve.points, curve.dt), curve.dt)


def adjoint_first_difference(series: VectorSeries) -> VectorSeries:
    return VectorSeries(diff_adjoint(series.values, series.dt), series.dt)


def second_difference(curve: DiscreteCurve) -> VectorSeries:
    return VectorSeries(diff2(curve.points, curve.dt), curve.dt)


def adjoint_second_difference(series: VectorSeries) -> VectorSeries:
    # (-M1^T M1)^T = -M1^T M1, evaluated through the adjoint path explicitly.
    inner = diff(series.values, series.dt)
    return VectorSeries(-diff_adjoint(inner, series.dt), series.dt)


def _values(x) -> np.ndarray:
    if isinstance(x, VectorSeries):
        return x.values
    return _as_points(x)


def series_norm(series, mode) -> float:
    """Sup norm of a series: per entry (RV) or per sample Euclidean (RIV)."""
    v = _values(series)
    if v.size == 0:
        return 0.0
    if NormMode.parse(mode) is NormMode.RV:
        return float(np.max(np.abs(v)))
    return float(np.max(np.sqrt(np.sum(v * v, axis=1))))


def dual_norm(series, mode) -> float:
    """Dual of :func:`series_norm`: l1 (RV) or sum of per-sample l2 (RIV)."""
    v = _values(series)
    if NormMode.parse(mode) is NormMode.RV:
        return float(np.sum(np.abs(v)))
    return float(np.sum(np.sqrt(np.sum(v * v, axis=1))))


# -- spectral norm of the dual Hessian ---------------------------------------


class LipschitzEstimate(NamedTuple):
    value: float  # safe constant (raw * safety, or the analytic bound)
    raw: float  # last power-iteration Rayleigh quotient
    converged: bool
    iterations: int


def lipschitz_upper_bound(dt: float) -> float:
    return 4.0 / dt**2 + 16.0 / dt**4


def _normal_operator(x: np.ndarray, dt: float) -> np.ndarray:
    m2x = diff2(x, dt)
    return diff_adjoint(diff(x, dt), dt) + diff2(m2x, dt)


def lipschitz_constant(
    n: int,
    d: int = 1,
    dt: float = 1.0,
    iters: int = 5000,
    tol: float = 1e-8,
    safety: float = 1.01,
    seed: int = 0,
) -> LipschitzEstimate:
    """Power-iteration estimate of ``|||M1^T M1 + M2^T M2|||``.

    The operator acts identically on each coordinate, so the estimate does not
    depend on ``d``. If the Rayleigh quotient has not settled to ``tol``
    relative change within ``iters`` steps, the analytic bound
    ``4/dt^2 + 16/dt^4`` is returned instead and ``converged`` is False.
    """
    if n < 2:
        raise InvalidArgument("n must be at least 2")
    if iters < 1:
        raise InvalidArgument("iters must be at least 1")
    if d < 1:
        raise InvalidArgument("d must be positive")
    rng = np.random.default_rng(seed)
    # The top eigenvector oscillates at the Nyquist rate; start near it.
    x = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)[:, None]
    x = x + 0.1 * rng.standard_normal((n, 1))
    x /= np.linalg.norm(x)
    est = 0.0
    for k in range(1, iters + 1):
        y = _normal_operator(x, dt)
        new = float(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return LipschitzEstimate(0.0, 0.0, True, k)
        x = y / norm
        if k > 1 and abs(new - est) <= tol * abs(new):
            return LipschitzEstimate(safety * new, new, True, k)
        est = new
    return LipschitzEstimate(lipschitz_upper_bound(dt), est, False, iters)


# -- sampling ----------------------------------------------------------------


def sample_at_rate(curve: DiscreteCurve, sample_dt: float) -> np.ndarray:
    """Points ``s(j * sample_dt)`` for ``0 <= j <= floor(T / sample_dt)``.

    Values between grid points are linearly interpolated.
    """
    sample_dt = float(sample_dt)
    if not sample_dt > 0:
        raise InvalidArgument(f"sample_dt must be positive, got {sample_dt}")
    T = curve.duration
    count = int(np.floor(T / sample_dt * (1 + 1e-12) + 1e-9)) + 1
    pos = np.arange(count) * (sample_dt / curve.dt)
    pos = np.minimum(pos, curve.n - 1)
    i0 = np.minimum(np.floor(pos).astype(int), curve.n - 2)
    frac = (pos - i0)[:, None]
    pts = curve.points
    return (1.0 - frac) * pts[i0] + frac * pts[i0 + 1]
