"""Scaled reproductions of the density and timing experiments.

Three experiments are available:

``mc_density``
    Monte Carlo over seeded TSP tours. Each tour is walked at a few constant
    speeds, every walk is projected, and the samples of each arm are
    histogrammed cumulatively. One extra arm holds the raw arc-length input and
    another the time-optimal reparameterization of the tour.
``rosette``
    Projection of the 90% speed rosette against its reparameterization, for
    both norm modes.
``tsp``
    The same comparison on one large TSP tour walked at half speed.

Replication ``i`` uses seed ``seed + i``; results are combined in index order
so they do not depend on how replications are scheduled.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .constraints import HardwareSpec, KinematicLimits, limits_from_hardware
from .curves import NormMode, sample_at_rate
from .density import (
    EmpiricalHistogram,
    TargetDensity,
    difference_grid,
    empirical_histogram,
    radial_density,
    relative_error,
)
from .errors import InvalidArgument
from .projector import ProjectionSettings, project_curve
from .reparam import build_support, compare_traversal, time_optimal_reparam
from .trajectories import RosetteSpec, TspSpec, constant_speed_parameterization, gen_rosette, tsp_tour

__all__ = [
    "McDensityConfig",
    "McDensityResult",
    "ArmSummary",
    "run_mc_density",
    "run_rosette",
    "run_tsp",
    "EXPERIMENTS",
]

EXPERIMENTS = ("rosette", "tsp", "mc_density")


@dataclass
class McDensityConfig:
    """Defaults are scaled down from the published study to fit a desk budget.

    The published run used 10000 tours of unstated size; here 200 tours of
    2000 cities. FISTA only supplies a warm start and the conic refinement
    finishes each projection. It stops at a relative merit of ``refine_tol``
    (a transport error far below one histogram bin) without the exact
    active-set polish, which matters for the waveforms but not for the
    histograms.
    """

    replications: int = 200
    n_cities: int = 2000
    speed_fractions: tuple = (0.1, 0.5, 1.0)
    input_speed_fraction: float = 0.5
    k_max: float = 6.0
    resolution: int = 64
    density_exponent: float = 3.0
    dt: float = 0.004
    sample_dt: float = 0.004
    mode: str = "RIV"
    n_it: int = 200
    refine_tol: float = 1e-9
    two_opt_passes: int = 50
    seed: int = 0
    hardware: HardwareSpec = field(default_factory=HardwareSpec)

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidArgument("replications must be >= 1")
        if self.n_cities < 2:
            raise InvalidArgument("n_cities must be >= 2")
        fr = tuple(float(f) for f in self.speed_fractions)
        if not fr or any(not 0 < f <= 1 for f in fr):
            raise InvalidArgument("speed fractions must lie in (0, 1]")
        self.speed_fractions = fr
        if not 0 < self.input_speed_fraction <= 1:
            raise InvalidArgument("input_speed_fraction must lie in (0, 1]")
        if not (self.dt > 0 and self.sample_dt > 0):
            raise InvalidArgument("dt and sample_dt must be positive")
        if self.sample_dt < self.dt * (1 - 1e-12):
            raise InvalidArgument("sample_dt must be >= dt")
        self.mode = NormMode.parse(self.mode).value

    @property
    def limits(self) -> KinematicLimits:
        return limits_from_hardware(self.hardware, self.mode)

    def target(self) -> TargetDensity:
        """Limit density of the tours; cities are drawn from its square (d = 2)."""
        return radial_density(self.density_exponent, self.k_max, self.resolution)

    def city_density(self) -> TargetDensity:
        return self.target().power(2.0)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["speed_fractions"] = list(self.speed_fractions)
        return out


def _arm_names(cfg: McDensityConfig):
    return ["reparam", "input"] + [f"projection_{f:g}" for f in cfg.speed_fractions]


def _replicate(args):
    cfg, index = args
    limits = cfg.limits
    target = cfg.target()
    grid = target.grid
    tour = tsp_tour(TspSpec(cfg.city_density(), cfg.n_cities, cfg.seed + index, cfg.two_opt_passes))
    settings = ProjectionSettings(n_it=cfg.n_it, refine_tol=cfg.refine_tol, polish=False)

    counts, times, extra = {}, {}, {}

    def add(name, curve):
        h = empirical_histogram(sample_at_rate(curve, cfg.sample_dt), grid)
        counts[name] = h.counts
        extra[name] = h.clipped
        times[name] = curve.duration

    rep, _ = time_optimal_reparam(build_support(tour), limits, cfg.dt)
    add("reparam", rep)
    walks = {}
    for f in sorted(set(cfg.speed_fractions) | {cfg.input_speed_fraction}):
        walks[f] = constant_speed_parameterization(tour, f * limits.alpha, cfg.dt)
    add("input", walks[cfg.input_speed_fraction])
    converged = True
    for f in cfg.speed_fractions:
        res = project_curve(walks[f], limits, settings=settings)
        converged &= bool(res.converged)
        add(f"projection_{f:g}", res.curve)
    return index, counts, times, extra, converged


@dataclass
class ArmSummary:
    name: str
    rel_error: float
    mean_duration_ms: float
    samples: int
    clipped: int
    speed_fraction: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class McDensityResult:
    config: McDensityConfig
    arms: dict  # name -> ArmSummary
    histograms: dict  # name -> EmpiricalHistogram
    target: TargetDensity
    all_converged: bool
    wall_time: float

    def difference_grid(self, name: str) -> np.ndarray:
        return difference_grid(self.histograms[name], self.target)

    def summary(self) -> dict:
        return {
            "experiment": "mc_density",
            "replications": self.config.replications,
            "n_cities": self.config.n_cities,
            "bins": self.config.resolution,
            "config": self.config.as_dict(),
            "all_projections_converged": self.all_converged,
            "arms": {k: v.as_dict() for k, v in self.arms.items()},
            "wall_time_s": self.wall_time,
        }


def run_mc_density(
    cfg: Optional[McDensityConfig] = None,
    jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> McDensityResult:
    cfg = cfg or McDensityConfig()
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    t0 = time.perf_counter()
    target = cfg.target()
    names = _arm_names(cfg)
    shape = (cfg.resolution, cfg.resolution)
    counts = {k: np.zeros(shape, dtype=np.int64) for k in names}
    clipped = dict.fromkeys(names, 0)
    durations = {k: np.zeros(cfg.replications) for k in names}
    converged = True
    tasks = [(cfg, i) for i in range(cfg.replications)]

    def consume(out):
        nonlocal converged
        i, c, t, x, ok = out
        for k in names:
            counts[k] += c[k]
            clipped[k] += x[k]
            durations[k][i] = t[k]
        converged &= ok
        if progress is not None:
            progress(i + 1, cfg.replications)

    if jobs == 1:
        for task in tasks:
            consume(_replicate(task))
    else:
        # map() yields in submission order, so accumulation is by index.
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_replicate, tasks):
                consume(out)

    hists, arms = {}, {}
    for k in names:
        h = EmpiricalHistogram(target.grid, counts[k], int(counts[k].sum()), clipped[k])
        hists[k] = h
        frac = None
        if k.startswith("projection_"):
            frac = float(k.split("_", 1)[1])
        elif k == "input":
            frac = cfg.input_speed_fraction
        arms[k] = ArmSummary(k, relative_error(h, target), float(durations[k].mean()), h.total, clipped[k], frac)
    return McDensityResult(cfg, arms, hists, target, converged, time.perf_counter() - t0)


def _limits(hardware: Optional[HardwareSpec], mode) -> KinematicLimits:
    return limits_from_hardware(hardware or HardwareSpec(), mode)


def run_rosette(
    hardware: Optional[HardwareSpec] = None,
    dt: float = 0.004,
    spec: Optional[RosetteSpec] = None,
    modes=("RV", "RIV"),
    settings: Optional[ProjectionSettings] = None,
) -> dict:
    """Projection of the rosette input against the reparameterized dense rosette shape."""
    spec = spec or RosetteSpec()
    support = spec.shape()
    out = {"experiment": "rosette", "speed_fraction": spec.speed_fraction, "dt_ms": dt, "modes": {}}
    for mode in modes:
        lim = _limits(hardware, mode)
        c = gen_rosette(spec, lim, dt)
        rep = compare_traversal(c, lim, settings=settings, support=support)
        out["input_duration_ms"] = c.duration
        out["modes"][NormMode.parse(mode).value] = {
            **rep.as_dict(),
            "projection_converged": bool(rep.projection.converged),
            "residuals": rep.projection.residuals.as_dict(),
            "distance_normalized": rep.projection.distance_normalized,
        }
    return out


def run_tsp(
    hardware: Optional[HardwareSpec] = None,
    n_cities: int = 2000,
    speed_fraction: float = 0.5,
    dt: float = 0.004,
    seed: int = 0,
    mode="RIV",
    density_exponent: float = 3.0,
    k_max: float = 6.0,
    resolution: int = 64,
    settings: Optional[ProjectionSettings] = None,
) -> dict:
    """One tour walked at ``speed_fraction`` of the speed limit, projected and reparameterized."""
    lim = _limits(hardware, mode)
    target = radial_density(density_exponent, k_max, resolution)
    tour = tsp_tour(TspSpec(target.power(2.0), n_cities, seed))
    c = constant_speed_parameterization(tour, speed_fraction * lim.alpha, dt)
    rep = compare_traversal(c, lim, target=target, settings=settings, support=tour)
    return {
        "experiment": "tsp",
        "n_cities": n_cities,
        "seed": seed,
        "speed_fraction": speed_fraction,
        "mode": NormMode.parse(mode).value,
        "dt_ms": dt,
        "bins": resolution,
        "input_duration_ms": c.duration,
        "n": c.n,
        **rep.as_dict(),
        "projection_converged": bool(rep.projection.converged),
        "residuals": rep.projection.residuals.as_dict(),
    }
