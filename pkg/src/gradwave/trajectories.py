"""Input curve generators: rosette, variable-density spiral and TSP tours.

Every generator draws the shape densely and then hands the polyline to
:func:`constant_speed_parameterization`, so the output advances by a fixed
chord ``speed * dt`` per time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constraints import KinematicLimits
from .curves import DiscreteCurve
from .density import Grid, TargetDensity
from .errors import InvalidArgument

__all__ = [
    "RosetteSpec",
    "SpiralSpec",
    "TspSpec",
    "constant_speed_parameterization",
    "gen_rosette",
    "gen_spiral",
    "spiral_target_density",
    "sample_cities",
    "nearest_neighbor_tour",
    "two_opt",
    "tour_length",
    "tsp_tour",
    "gen_tsp_trajectory",
]


# -- constant-speed parameterization -------------------------------------------


def _clean_polyline(polyline) -> np.ndarray:
    V = np.asarray(polyline, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2 or len(V) < 1 or not np.all(np.isfinite(V)):
        raise InvalidArgument("polyline must be a finite (m, d) array")
    if len(V) > 1:
        keep = np.r_[True, np.any(V[1:] != V[:-1], axis=1)]
        V = V[keep]
    return V


def constant_speed_parameterization(polyline, speed: float, dt: float) -> DiscreteCurve:
    """Walk ``polyline`` so that consecutive samples are ``speed * dt`` apart (Euclidean).

    Each new sample is the first point further along the polyline at chord
    distance ``h = speed * dt`` from the previous one. The last sample is the
    polyline end and may be closer than ``h``.
    """
    if not (speed > 0 and dt > 0):
        raise InvalidArgument("speed and dt must be positive")
    V = _clean_polyline(polyline)
    if len(V) < 2:
        raise InvalidArgument("polyline has zero length")
    h = float(speed) * float(dt)
    chunks = [V[:1]]
    p = V[0]
    j = 0  # p lies on segment [V[j], V[j+1]]
    m_last = len(V) - 1
    window = 64
    while True:
        # steps that stay on the current segment are evenly spaced
        seg = V[j + 1] - p
        rest = float(np.sqrt(seg @ seg))
        k = int(rest / h * (1.0 + 1e-12))
        if k > 0:
            u = seg / rest
            run = p + (h * np.arange(1, k + 1))[:, None] * u
            chunks.append(run)
            p = run[-1]
        lo = j + 1
        found = -1
        while lo <= m_last:
            hi = min(m_last + 1, lo + window)
            dist2 = np.sum((V[lo:hi] - p) ** 2, axis=1)
            hit = np.flatnonzero(dist2 >= h * h * (1.0 - 1e-12))
            if len(hit):
                found = lo + int(hit[0])
                break
            lo = hi
        if found < 0:
            if np.sum((V[-1] - p) ** 2) > (1e-12 * h) ** 2:
                chunks.append(V[-1:])
            break
        a, b = V[found - 1], V[found]
        u = b - a
        w = a - p
        uu = float(u @ u)
        wu = float(w @ u)
        disc = max(wu * wu - uu * (float(w @ w) - h * h), 0.0)
        tau = min(1.0, (-wu + math.sqrt(disc)) / uu)
        p = a + tau * u
        chunks.append(p[None])
        j = found - 1 if tau < 1.0 else found
        if j >= m_last:
            break
    return DiscreteCurve(np.concatenate(chunks), dt)


# -- rosette ---------------------------------------------------------------------


@dataclass(frozen=True)
class RosetteSpec:
    """``k(u) = k_max sin(omega1 u) (cos(omega2 u), sin(omega2 u))`` for ``u`` in ``[0, param_span]``.

    The omegas are per unit of the shape parameter; only their ratio and the
    span matter once the shape is reparameterized at constant speed. The
    default span ``5 pi / omega1`` draws five petal passes.
    """

    k_max: float = 6.0
    omega1: float = 1.419
    omega2: float = 0.8233
    param_span: Optional[float] = None
    speed_fraction: float = 0.9
    samples: int = 200_001

    def __post_init__(self):
        if not self.k_max > 0:
            raise InvalidArgument("k_max must be positive")
        if not 0 < self.speed_fraction <= 1:
            raise InvalidArgument("speed_fraction must be in (0, 1]")
        if self.samples < 2:
            raise InvalidArgument("samples must be >= 2")

    @property
    def span(self) -> float:
        return 5.0 * math.pi / self.omega1 if self.param_span is None else float(self.param_span)

    def shape(self) -> np.ndarray:
        u = np.linspace(0.0, self.span, self.samples)
        r = self.k_max * np.sin(self.omega1 * u)
        return np.c_[r * np.cos(self.omega2 * u), r * np.sin(self.omega2 * u)]


def gen_rosette(spec: RosetteSpec, limits: KinematicLimits, dt: float) -> DiscreteCurve:
    shape = spec.shape()
    if spec.span == 0 or np.all(shape == shape[0]):
        raise InvalidArgument("rosette span is degenerate")
    return constant_speed_parameterization(shape, spec.speed_fraction * limits.alpha, dt)


# -- spiral ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpiralSpec:
    """Spiral ``r(t/n) (cos 2 pi t, sin 2 pi t)`` for ``t`` in ``[0, n]``.

    ``radius`` tabulates a strictly increasing ``r`` on a uniform grid of
    ``[0, 1]``. A single value means a constant radius (a circle).
    """

    radius: np.ndarray
    revolutions: int
    direction: int = 1
    samples_per_revolution: int = 720

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.radius, dtype=float))
        if not np.all(np.isfinite(r)) or r[0] < 0:
            raise InvalidArgument("radius table must be finite with r(0) >= 0")
        if len(r) > 1 and np.any(np.diff(r) <= 0):
            raise InvalidArgument("radius table must be strictly increasing")
        if self.revolutions < 1:
            raise InvalidArgument("revolutions must be >= 1")
        if self.direction not in (1, -1):
            raise InvalidArgument("direction must be +1 or -1")
        object.__setattr__(self, "radius", r)

    @classmethod
    def archimedean(cls, k_max: float, revolutions: int, table: int = 4097, **kw) -> "SpiralSpec":
        return cls(np.linspace(0.0, k_max, table), revolutions, **kw)

    @classmethod
    def from_function(cls, fn: Callable, revolutions: int, table: int = 4097, **kw) -> "SpiralSpec":
        return cls(np.asarray(fn(np.linspace(0.0, 1.0, table)), dtype=float), revolutions, **kw)

    @property
    def r0(self) -> float:
        return float(self.radius[0])

    @property
    def r1(self) -> float:
        return float(self.radius[-1])

    def r(self, u) -> np.ndarray:
        if len(self.radius) == 1:
            return np.full_like(np.asarray(u, dtype=float), self.radius[0])
        return np.interp(u, np.linspace(0.0, 1.0, len(self.radius)), self.radius)

    def r_inverse(self, rho) -> np.ndarray:
        if len(self.radius) == 1:
            raise InvalidArgument("a constant radius has no inverse")
        return np.interp(rho, self.radius, np.linspace(0.0, 1.0, len(self.radius)))

    def shape(self) -> np.ndarray:
        m = self.revolutions * self.samples_per_revolution + 1
        t = np.linspace(0.0, self.revolutions, m)
        r = self.r(t / self.revolutions)
        ang = 2.0 * np.pi * t * self.direction
        return np.c_[r * np.cos(ang), r * np.sin(ang)]


def gen_spiral(spec: SpiralSpec, dt: float, speed: float) -> DiscreteCurve:
    return constant_speed_parameterization(spec.shape(), speed, dt)


def spiral_target_density(spec: SpiralSpec, grid: Grid) -> TargetDensity:
    """Limit density ``(r^-1)'(rho) / (2 pi int (r^-1)'(rho) rho drho)`` on the annulus, 0 elsewhere.

    The derivative of the tabulated inverse is taken by central differences
    with a step of one grid cell; the result is renormalized on the grid.
    """
    if len(spec.radius) == 1:
        raise InvalidArgument("a constant-radius spiral has no density")
    if spec.r1 > grid.k_max * math.sqrt(2) or spec.r1 <= 0:
        raise InvalidArgument("spiral annulus does not fit in the grid")
    if spec.r0 >= grid.k_max:
        raise InvalidArgument("spiral annulus lies outside the grid")
    h = grid.cell

    def dinv(rho):
        lo = np.maximum(rho - h / 2, spec.r0)
        hi = np.minimum(rho + h / 2, spec.r1)
        return (spec.r_inverse(hi) - spec.r_inverse(lo)) / np.maximum(hi - lo, 1e-300)

    rr = np.linspace(spec.r0, spec.r1, 4001)
    norm = 2.0 * np.pi * np.trapezoid(dinv(rr) * rr, rr)
    kx, ky = grid.mesh()
    rho = np.hypot(kx, ky)
    inside = (rho >= spec.r0) & (rho <= spec.r1)
    vals = np.where(inside, dinv(rho) / norm, 0.0)
    return TargetDensity.from_unnormalized(grid, vals)


# -- TSP -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TspSpec:
    city_density: TargetDensity
    n_cities: int
    seed: int = 0
    two_opt_passes: int = 50

    def __post_init__(self):
        if self.n_cities < 1:
            raise InvalidArgument("n_cities must be >= 1")
        if self.two_opt_passes < 0:
            raise InvalidArgument("two_opt_passes must be >= 0")


def sample_cities(density: TargetDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of a bin followed by a uniform position inside it."""
    masses = density.bin_masses.ravel()
    cdf = np.cumsum(masses)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    idx = np.minimum(idx, len(cdf) - 1)
    g = density.grid
    ix, iy = np.divmod(idx, g.resolution)
    jitter = rng.random((n, 2))
    return np.c_[g.edges[ix] + jitter[:, 0] * g.cell, g.edges[iy] + jitter[:, 1] * g.cell]


def tour_length(cities: np.ndarray, order: np.ndarray, closed: bool = True) -> float:
    pts = cities[order]
    if closed:
        pts = np.vstack([pts, pts[:1]])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def nearest_neighbor_tour(cities: np.ndarray, start: int = 0) -> np.ndarray:
    n = len(cities)
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    cur = start
    for k in range(n):
        order[k] = cur
        visited[cur] = True
        if k == n - 1:
            break
        d2 = np.sum((cities - cities[cur]) ** 2, axis=1)
        d2[visited] = np.inf
        cur = int(np.argmin(d2))
    return order


def two_opt(cities: np.ndarray, order: np.ndarray, passes: int = 50, neighbors: int = 10) -> np.ndarray:
    """Closed-tour 2-opt over ``neighbors``-nearest candidate lists with don't-look bits.

    Only strict gains are taken, so the tour never gets longer. ``passes``
    caps the number of sweeps over the active cities. The returned order
    starts at the same city as ``order``.
    """
    order = np.asarray(order, dtype=np.int64).copy()
    n = len(order)
    if n < 4 or passes < 1:
        return order
    from scipy.spatial import cKDTree

    k = min(neighbors, n - 1)
    _, near = cKDTree(cities).query(cities, k + 1)
    near = near[:, 1:].tolist()
    xy = cities.tolist()
    hyp = math.hypot

    def dist(a, b):
        pa, pb = xy[a], xy[b]
        return hyp(pa[0] - pb[0], pa[1] - pb[1]) if len(pa) == 2 else math.dist(pa, pb)

    first = int(order[0])
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    tour = order

    def reverse(i, j):
        # reverse tour[i..j] (cyclic positions); take the shorter side
        inner = (j - i) % n + 1
        if 2 * inner > n:
            i, j = (j + 1) % n, (i - 1) % n
            inner = n - inner
        if i <= j:
            seg = tour[i : j + 1][::-1].copy()
            tour[i : j + 1] = seg
            pos[seg] = np.arange(i, j + 1)
        else:
            idx = np.r_[np.arange(i, n), np.arange(0, j + 1)]
            seg = tour[idx][::-1].copy()
            tour[idx] = seg
            pos[seg] = idx

    active = [True] * n
    for _ in range(passes):
        improved = False
        for a in range(n):
            if not active[a]:
                continue
            active[a] = False
            for direction in (1, -1):
                i = int(pos[a])
                b = int(tour[(i + direction) % n])
                dab = dist(a, b)
                for c in near[a]:
                    dac = dist(a, c)
                    if dac >= dab:
                        break
                    j = int(pos[c])
                    e = int(tour[(j + direction) % n])
                    if e == a or c == b:
                        continue
                    gain = dab + dist(c, e) - dac - dist(b, e)
                    if gain > 1e-12:
                        # new edges (a, c) and (b, e)
                        if direction == 1:
                            reverse((i + 1) % n, j)
                        else:
                            reverse(j, (i - 1) % n)
                        for v in (a, b, c, e):
                            active[v] = True
                        improved = True
                        break
                else:
                    continue
                active[a] = True
                break
        if not improved:
            break
    return np.roll(tour, -int(pos[first]))


def tsp_tour(spec: TspSpec, closed: bool = True) -> np.ndarray:
    """Seeded tour polyline through cities drawn from ``spec.city_density``.

    Nearest-neighbour construction from the city nearest the k-space centre,
    improved by 2-opt. A closed tour repeats its first city at the end.
    """
    q = spec.city_density
    support = int(np.count_nonzero(q.values))
    if spec.n_cities > support:
        raise InvalidArgument(f"n_cities={spec.n_cities} exceeds the {support} bins with positive mass")
    rng = np.random.default_rng(spec.seed)
    cities = sample_cities(q, spec.n_cities, rng)
    if spec.n_cities == 1:
        return np.vstack([cities, cities])
    start = int(np.argmin(np.sum(cities**2, axis=1)))
    order = nearest_neighbor_tour(cities, start)
    order = two_opt(cities, order, spec.two_opt_passes)
    path = cities[order]
    if closed:
        path = np.vstack([path, path[:1]])
    return path


def gen_tsp_trajectory(spec: TspSpec, dt: float, speed: float, closed: bool = True):
    """Seeded TSP curve walked at constant ``speed``; see :func:`tsp_tour`.

    Returns ``(curve, pi)`` where ``pi`` is the limit density proportional to
    ``q^((d-1)/d)``.
    """
    path = tsp_tour(spec, closed)
    d = path.shape[1]
    target = spec.city_density.power((d - 1) / d)
    if len(path) == 2 and np.all(path[0] == path[1]):
        return DiscreteCurve(path, dt), target
    return constant_speed_parameterization(path, speed, dt), target
