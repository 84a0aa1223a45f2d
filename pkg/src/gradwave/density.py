"""Target densities on a square k-space grid, sample histograms and transport distances.

Grids are 2-D, ``resolution x resolution`` bins over ``[-k_max, k_max]^2``,
indexed ``values[ix, iy]`` (first axis is kx). Density values are per unit
area, so a bin carries mass ``value * cell_area``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .curves import DiscreteCurve, sample_at_rate
from .errors import InvalidArgument

__all__ = [
    "Grid",
    "TargetDensity",
    "EmpiricalHistogram",
    "radial_profile",
    "radial_density",
    "empirical_histogram",
    "relative_error",
    "difference_grid",
    "wasserstein2_exact",
    "wasserstein2_sliced",
    "coupling_bound",
    "EXACT_W2_LIMIT",
]

EXACT_W2_LIMIT = 4096
_MASS_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    k_max: float
    resolution: int = 64

    def __post_init__(self):
        if not (np.isfinite(self.k_max) and self.k_max > 0):
            raise InvalidArgument("k_max must be positive")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise InvalidArgument("resolution must be a positive integer")
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.k_max, self.k_max, self.resolution + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def cell(self) -> float:
        return 2.0 * self.k_max / self.resolution

    @property
    def cell_area(self) -> float:
        return self.cell**2

    def mesh(self):
        c = self.centers
        return np.meshgrid(c, c, indexing="ij")


def _grid_of(obj) -> Grid:
    if isinstance(obj, Grid):
        return obj
    grid = getattr(obj, "grid", None)
    if isinstance(grid, Grid):
        return grid
    raise InvalidArgument(f"expected a Grid, TargetDensity or EmpiricalHistogram, got {type(obj).__name__}")


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """Piecewise-constant probability density; ``sum(values) * cell_area == 1``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        res = self.grid.resolution
        if vals.shape != (res, res):
            raise InvalidArgument(f"values must have shape ({res}, {res}), got {vals.shape}")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidArgument("density values must be finite and non-negative")
        mass = float(vals.sum() * self.grid.cell_area)
        if abs(mass - 1.0) > _MASS_TOL:
            raise InvalidArgument(f"density integrates to {mass}, expected 1")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_unnormalized(cls, grid: Grid, values) -> "TargetDensity":
        vals = np.asarray(values, dtype=float)
        if vals.shape != (grid.resolution, grid.resolution):
            raise InvalidArgument("values do not match the grid")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise InvalidArgument("density values must be finite and non-negative")
        total = vals.sum() * grid.cell_area
        if not total > 0:
            raise InvalidArgument("density has no mass on the grid")
        return cls(grid, vals / total)

    @property
    def k_max(self) -> float:
        return self.grid.k_max

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    @property
    def bin_masses(self) -> np.ndarray:
        return self.values * self.grid.cell_area

    def power(self, exponent: float) -> "TargetDensity":
        """``rho^exponent`` renormalized; maps a TSP city density to its limit density."""
        return TargetDensity.from_unnormalized(self.grid, self.values**exponent)


@dataclass(frozen=True, eq=False)
class EmpiricalHistogram:
    grid: Grid
    counts: np.ndarray
    total: int
    clipped: int = 0  # samples outside the grid that were folded into edge bins

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.total * self.grid.cell_area)

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.total

    def __add__(self, other: "EmpiricalHistogram") -> "EmpiricalHistogram":
        if other.grid != self.grid:
            raise InvalidArgument("histograms live on different grids")
        return EmpiricalHistogram(self.grid, self.counts + other.counts, self.total + other.total, self.clipped + other.clipped)


def radial_profile(rho, exponent: float, k_max: float) -> np.ndarray:
    """Unnormalized ``(1 - rho/k_max)^p`` on ``rho <= k_max``, 0 outside."""
    if exponent < 0:
        raise InvalidArgument("exponent must be non-negative")
    rho = np.asarray(rho, dtype=float)
    inside = rho <= k_max
    base = np.clip(1.0 - rho / k_max, 0.0, None)
    return np.where(inside, base**exponent, 0.0)


def radial_density(exponent: float, k_max: float, resolution: int = 64) -> TargetDensity:
    """Radial variable density evaluated at bin centres and normalized on the grid."""
    grid = Grid(k_max, resolution)
    kx, ky = grid.mesh()
    return TargetDensity.from_unnormalized(grid, radial_profile(np.hypot(kx, ky), exponent, k_max))


def empirical_histogram(samples, grid) -> EmpiricalHistogram:
    """Bin 2-D samples; points outside the grid go to the nearest edge bin and are counted in ``clipped``."""
    grid = _grid_of(grid)
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise InvalidArgument("samples must be a non-empty (m, 2) array")
    k = grid.k_max
    inside = np.all(np.abs(pts) <= k, axis=1)
    n_in = int(np.count_nonzero(inside))
    if n_in == 0:
        raise InvalidArgument("all samples fall outside the histogram grid")
    idx = np.floor((pts + k) / grid.cell).astype(np.int64)
    idx = np.clip(idx, 0, grid.resolution - 1)
    counts = np.zeros((grid.resolution, grid.resolution), dtype=np.int64)
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1)
    return EmpiricalHistogram(grid, counts, len(pts), len(pts) - n_in)


def relative_error(hist: EmpiricalHistogram, target: TargetDensity) -> float:
    """L1 histogram error ``sum |h - p| / sum p`` with ``h`` count fractions and ``p`` bin masses; in [0, 2]."""
    if hist.grid != target.grid:
        raise InvalidArgument("histogram and target are on different grids")
    p = target.bin_masses
    return float(np.sum(np.abs(hist.fractions - p)) / np.sum(p))


def difference_grid(hist: EmpiricalHistogram, target: TargetDensity) -> np.ndarray:
    """Empirical minus target density, per unit area."""
    if hist.grid != target.grid:
        raise InvalidArgument("histogram and target are on different grids")
    return hist.density - target.values


# -- transport distances --------------------------------------------------------


def _as_cloud(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or len(arr) == 0:
        raise InvalidArgument("point sets must be non-empty (m, d) arrays")
    return arr


def wasserstein2_exact(points_a, points_b) -> float:
    """W2 between two equal-size uniform point clouds via optimal assignment."""
    a, b = _as_cloud(points_a), _as_cloud(points_b)
    if a.shape != b.shape:
        raise InvalidArgument(f"point sets must have equal shape, got {a.shape} and {b.shape}")
    if len(a) > EXACT_W2_LIMIT:
        raise InvalidArgument(f"exact W2 is limited to {EXACT_W2_LIMIT} points; use wasserstein2_sliced")
    cost = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def _w2_1d_sq(x: np.ndarray, y: np.ndarray) -> float:
    """Squared W2 between uniform empirical measures on the line (quantile coupling)."""
    x, y = np.sort(x), np.sort(y)
    if len(x) == len(y):
        return float(np.mean((x - y) ** 2))
    cuts = np.union1d(np.arange(1, len(x) + 1) / len(x), np.arange(1, len(y) + 1) / len(y))
    widths = np.diff(np.r_[0.0, cuts])
    mid = cuts - 0.5 * widths
    qx = x[np.minimum((mid * len(x)).astype(int), len(x) - 1)]
    qy = y[np.minimum((mid * len(y)).astype(int), len(y) - 1)]
    return float(np.sum(widths * (qx - qy) ** 2))


def _directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.ones((n, 1))
    if d == 2:
        # equally spaced angles with a random offset: the mean of <x, theta>^2
        # is then exactly |x|^2 / 2, which keeps the estimate below W2
        ang = (np.arange(n) + rng.random()) * np.pi / n
        return np.c_[np.cos(ang), np.sin(ang)]
    th = rng.standard_normal((n, d))
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def wasserstein2_sliced(points_a, points_b, n_projections: int = 200, seed: int = 0) -> float:
    """Sliced W2: ``sqrt(d * mean_theta W2(<a, theta>, <b, theta>)^2)``.

    The factor ``d`` makes a pure translation by ``v`` come out as ``|v|``.
    This is a surrogate, not W2; in 2-D the directions are a randomly rotated
    uniform fan and the value never exceeds the exact W2 for equal sizes.
    """
    if n_projections < 1:
        raise InvalidArgument("n_projections must be >= 1")
    a, b = _as_cloud(points_a), _as_cloud(points_b)
    if a.shape[1] != b.shape[1]:
        raise InvalidArgument("point sets must have the same dimension")
    d = a.shape[1]
    rng = np.random.default_rng(seed)
    theta = _directions(d, n_projections, rng)
    pa, pb = a @ theta.T, b @ theta.T
    acc = [_w2_1d_sq(pa[:, k], pb[:, k]) for k in range(n_projections)]
    return float(np.sqrt(d * np.mean(acc)))


def coupling_bound(s: DiscreteCurve, c: DiscreteCurve, sample_dt: Optional[float] = None) -> float:
    """Cost of the time coupling between two curves, ``sqrt(mean_t |s(t) - c(t)|^2)``.

    Each retained time sample is an equal-mass atom: all grid points by
    default, or the points ``j * sample_dt`` when ``sample_dt`` is given, so
    the value upper-bounds the W2 distance between the corresponding sample
    clouds.
    """
    if s.points.shape != c.points.shape or abs(s.dt - c.dt) > 1e-12 * max(s.dt, c.dt):
        raise InvalidArgument("curves must share n, d and dt")
    if sample_dt is None:
        a, b = s.points, c.points
    else:
        a, b = sample_at_rate(s, sample_dt), sample_at_rate(c, sample_dt)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
