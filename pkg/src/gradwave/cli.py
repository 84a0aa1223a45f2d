"""Command-line front end: ``gradwave {gen,project,reparam,analyze,bench}``.

Settings resolve as command-line flag, then the ``--config`` JSON document,
then built-in defaults. The output directory falls back to
``$GRADWAVE_OUT_DIR`` and then the working directory.

Exit status: 0 on success, 2 for invalid input (bad flags, missing or
malformed files), 3 for numeric failures, 4 for dependent or infeasible
constraints. Failures print a single ``error <CODE>: <message>`` line to
stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .constraints import HardwareSpec, build_affine_set, limits_from_hardware
from .curves import NormMode, sample_at_rate
from .density import Grid, coupling_bound, difference_grid, empirical_histogram, radial_density, relative_error, wasserstein2_sliced
from .errors import DependentConstraints, GradwaveError, InfeasibleConstraints, InvalidArgument, NumericFailure

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_CONSTRAINTS = 4

_SPEC_DT = 0.004  # ms, the 4 us sampling rate


@dataclass
class RunConfig:
    hardware: HardwareSpec = field(default_factory=HardwareSpec)
    mode: NormMode = NormMode.RIV
    dt_curve: float = _SPEC_DT
    dt_sample: float = _SPEC_DT
    seed: int = 0
    jobs: int = 1
    out_dir: Path = Path(".")
    sections: dict = field(default_factory=dict)  # per-command settings from the config file

    def __post_init__(self):
        self.mode = NormMode.parse(self.mode)
        if not self.dt_curve > 0:
            raise InvalidArgument("dt_curve must be positive")
        if self.dt_sample < self.dt_curve * (1 - 1e-12):
            raise InvalidArgument(f"dt_sample ({self.dt_sample}) must be >= dt_curve ({self.dt_curve})")
        if self.jobs < 1:
            raise InvalidArgument("jobs must be >= 1")

    @property
    def limits(self):
        return limits_from_hardware(self.hardware, self.mode)

    def section(self, name: str) -> dict:
        sec = self.sections.get(name, {})
        if not isinstance(sec, dict):
            raise InvalidArgument(f"config section {name!r} must be an object")
        return sec

    def as_dict(self) -> dict:
        hw = self.hardware
        return {
            "hardware": {"g_max": hw.g_max, "s_max": hw.s_max, "gamma": hw.gamma},
            "mode": self.mode.value,
            "dt_curve": self.dt_curve,
            "dt_sample": self.dt_sample,
            "seed": self.seed,
            "jobs": self.jobs,
            "sections": self.sections,
        }


def _hardware(obj) -> HardwareSpec:
    if obj is None:
        return HardwareSpec()
    if not isinstance(obj, dict):
        raise InvalidArgument("hardware must be an object with g_max, s_max, gamma")
    unknown = set(obj) - {"g_max", "s_max", "gamma"}
    if unknown:
        raise InvalidArgument(f"unknown hardware fields: {sorted(unknown)}")
    return HardwareSpec(**{k: float(v) for k, v in obj.items()})


def _pick(flag, cfg: dict, key: str, default):
    if flag is not None:
        return flag
    if key in cfg and cfg[key] is not None:
        return cfg[key]
    return default


def resolve_config(args) -> RunConfig:
    doc = io.read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise InvalidArgument("config must be a JSON object")
    hw = _hardware(doc.get("hardware"))
    if getattr(args, "hardware", None):
        hw = _hardware(io.read_json(args.hardware))
    out_dir = _pick(args.out_dir, doc, "out_dir", None) or os.environ.get("GRADWAVE_OUT_DIR") or "."
    sections = {k: v for k, v in doc.items() if k in ("gen", "project", "reparam", "analyze", "bench")}
    return RunConfig(
        hardware=hw,
        mode=_pick(getattr(args, "mode", None), doc, "mode", "RIV"),
        dt_curve=float(_pick(getattr(args, "dt", None), doc, "dt_curve", _SPEC_DT)),
        dt_sample=float(_pick(getattr(args, "sample_dt", None), doc, "dt_sample", _SPEC_DT)),
        seed=int(_pick(args.seed, doc, "seed", 0)),
        jobs=int(_pick(args.jobs, doc, "jobs", 1)),
        out_dir=Path(out_dir),
        sections=sections,
    )


class _Outputs:
    """Collects rendered files and writes them only once the command has succeeded."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.items = []
        self.t0 = time.perf_counter()

    def path(self, given: Optional[str], default_name: str) -> Path:
        p = Path(given) if given else Path(default_name)
        return p if p.is_absolute() else self.cfg.out_dir / p

    def add(self, path: Path, text: str):
        self.items.append((path, text))

    def commit(self):
        wall = time.perf_counter() - self.t0
        for path, text in self.items:
            io.write_with_sidecar(path, text, self.cfg.as_dict(), wall)
        return [p for p, _ in self.items]


def _say(msg: str):
    print(msg, file=sys.stdout)


# -- gen ---------------------------------------------------------------------------


def cmd_gen(args, cfg: RunConfig) -> int:
    from .trajectories import (
        RosetteSpec,
        SpiralSpec,
        TspSpec,
        gen_rosette,
        gen_spiral,
        gen_tsp_trajectory,
        spiral_target_density,
    )

    sec = cfg.section("gen")
    lim = cfg.limits
    dt = cfg.dt_curve
    kmax = float(_pick(args.kmax, sec, "kmax", 6.0))
    res = int(_pick(args.bins, sec, "bins", 64))
    out = _Outputs(cfg)
    density = None
    if args.kind == "rosette":
        frac = float(_pick(args.speed_frac, sec, "speed_frac", 0.9))
        curve = gen_rosette(RosetteSpec(k_max=kmax, speed_fraction=frac), lim, dt)
    elif args.kind == "spiral":
        frac = float(_pick(args.speed_frac, sec, "speed_frac", 0.5))
        revs = int(_pick(args.revolutions, sec, "revolutions", 100))
        spec = SpiralSpec.archimedean(kmax, revs)
        curve = gen_spiral(spec, dt, frac * lim.alpha)
        density = spiral_target_density(spec, Grid(kmax, res))
    else:
        frac = float(_pick(args.speed_frac, sec, "speed_frac", 0.5))
        cities = int(_pick(args.cities, sec, "cities", 2000))
        exponent = float(_pick(args.density_exponent, sec, "density_exponent", 3.0))
        q = radial_density(exponent, kmax, res).power(2.0)
        curve, density = gen_tsp_trajectory(TspSpec(q, cities, cfg.seed), dt, frac * lim.alpha)
    out.add(out.path(args.out, f"{args.kind}.csv"), io.curve_to_csv(curve))
    if args.density_out:
        if density is None:
            raise InvalidArgument("the rosette generator has no target density")
        out.add(out.path(args.density_out, "density.csv"), io.grid_to_csv(density.grid, density.values))
    paths = out.commit()
    _say(f"wrote {', '.join(map(str, paths))} (n={curve.n}, T={curve.duration:g} ms)")
    return EXIT_OK


# -- project -------------------------------------------------------------------------


def cmd_project(args, cfg: RunConfig) -> int:
    from .constraints import factorize
    from .projector import ProjectionSettings, project_curve

    sec = cfg.section("project")
    curve = io.read_curve_csv(args.input)
    items = io.read_json(args.constraints) if args.constraints else sec.get("constraints", [])
    if isinstance(items, dict):
        items = items.get("constraints", [])
    if not isinstance(items, list):
        raise InvalidArgument("constraints must be a JSON list (or an object with a 'constraints' list)")
    try:
        aset = build_affine_set(items, curve.n, curve.d, curve.dt)
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"malformed constraint entry: {exc}") from None
    solver = factorize(aset)
    settings = ProjectionSettings(n_it=int(_pick(args.n_it, sec, "n_it", 5000)))
    res = project_curve(curve, cfg.limits, solver, settings)
    affine = float(np.max(np.abs(aset.residual(res.curve.points)))) if aset.p else 0.0
    report = {
        **res.report(),
        "mode": cfg.mode.value,
        "constraint_rows": aset.p,
        "constraint_labels": list(getattr(aset, "labels", [])),
        "affine_residual": affine,
        "input": str(args.input),
    }
    out = _Outputs(cfg)
    out.add(out.path(args.out, "projected.csv"), io.curve_to_csv(res.curve))
    out.add(out.path(args.gradient_out, "gradient.csv"), io.gradient_to_csv(res.curve, cfg.hardware))
    out.add(out.path(args.report_out, "project_report.json"), io.dumps(report))
    out.commit()
    _say(
        f"projected n={curve.n} T={curve.duration:g} ms; rows={aset.p}; converged={res.converged}; "
        f"d(s,c)={res.distance:.6g}; residuals speed={res.residuals.speed:.2e} accel={res.residuals.accel:.2e} affine={affine:.2e}"
    )
    return EXIT_OK


# -- reparam -------------------------------------------------------------------------


def cmd_reparam(args, cfg: RunConfig) -> int:
    from .constraints import feasibility_report
    from .reparam import build_support, speed_profile, time_optimal_reparam

    sec = cfg.section("reparam")
    curve = io.read_curve_csv(args.input)
    support = io.read_curve_csv(args.support).points if args.support else curve
    tol = float(_pick(args.angle_tol, sec, "angle_tol", 5.0))
    path = build_support(support, tol)
    lim = cfg.limits
    rep, T_rep = time_optimal_reparam(path, lim, cfg.dt_curve)
    prof = speed_profile(path, lim, dt=cfg.dt_curve)
    report = {
        "T_rep": T_rep,
        "T_input": curve.duration,
        "n": rep.n,
        "dt_ms": rep.dt,
        "mode": cfg.mode.value,
        "singular_vertices": len(path.singular_indices),
        "support_length": path.length,
        "residuals": feasibility_report(rep, lim).as_dict(),
    }
    out = _Outputs(cfg)
    out.add(out.path(args.out, "reparam.csv"), io.curve_to_csv(rep))
    out.add(out.path(args.profile_out, "profile.csv"), io.profile_to_csv(prof.sigma, prof.speed))
    out.add(out.path(args.report_out, "reparam_report.json"), io.dumps(report))
    out.commit()
    _say(f"T_rep={T_rep:g} ms (input T={curve.duration:g} ms), {len(path.singular_indices)} singular vertices")
    return EXIT_OK


# -- analyze -------------------------------------------------------------------------


def cmd_analyze(args, cfg: RunConfig) -> int:
    from .trajectories import sample_cities

    sec = cfg.section("analyze")
    curve = io.read_curve_csv(args.input)
    target = io.read_density_csv(args.density)
    if curve.d != 2:
        raise InvalidArgument("histogram analysis needs a 2-D curve")
    pts = sample_at_rate(curve, cfg.dt_sample)
    hist = empirical_histogram(pts, target.grid)
    n_proj = int(_pick(args.projections, sec, "projections", 200))
    report = {
        "rel_error": relative_error(hist, target),
        "bins": target.resolution,
        "k_max": target.k_max,
        "samples": hist.total,
        "clipped": hist.clipped,
        "sample_dt_ms": cfg.dt_sample,
    }
    if args.reference:
        ref = io.read_curve_csv(args.reference)
        if ref.n != curve.n or ref.d != curve.d:
            raise InvalidArgument("reference curve must match the input's length and dimension")
        ref_pts = sample_at_rate(ref, cfg.dt_sample)
        report["coupling_bound"] = coupling_bound(curve, ref, cfg.dt_sample)
        report["w2_sliced"] = wasserstein2_sliced(pts, ref_pts, n_proj, cfg.seed)
        report["w2_against"] = "reference"
    else:
        # equal-mass draw from the target stands in for the continuous density
        draw = sample_cities(target, len(pts), np.random.default_rng(cfg.seed))
        report["coupling_bound"] = None
        report["w2_sliced"] = wasserstein2_sliced(pts, draw, n_proj, cfg.seed)
        report["w2_against"] = "target_draw"
    out = _Outputs(cfg)
    out.add(out.path(args.out, "analysis.json"), io.dumps(report))
    out.add(out.path(args.diff_out, "difference.csv"), io.grid_to_csv(target.grid, difference_grid(hist, target)))
    out.commit()
    _say(f"rel_error={report['rel_error']:.4f} over {target.resolution}x{target.resolution} bins, {hist.total} samples")
    return EXIT_OK


# -- bench -------------------------------------------------------------------------


def cmd_bench(args, cfg: RunConfig) -> int:
    from . import bench

    sec = cfg.section("bench")
    out = _Outputs(cfg)
    stem = args.experiment
    if args.experiment == "rosette":
        summary = bench.run_rosette(cfg.hardware, cfg.dt_curve)
    elif args.experiment == "tsp":
        summary = bench.run_tsp(
            cfg.hardware,
            n_cities=int(_pick(args.cities, sec, "cities", 2000)),
            speed_fraction=float(_pick(args.speed_frac, sec, "speed_frac", 0.5)),
            dt=cfg.dt_curve,
            seed=cfg.seed,
            mode=cfg.mode,
        )
    else:
        speeds = args.speeds if args.speeds is not None else sec.get("speeds", [0.1, 0.5, 1.0])
        base = bench.McDensityConfig()
        mc = bench.McDensityConfig(
            replications=int(_pick(args.replications, sec, "replications", base.replications)),
            n_cities=int(_pick(args.cities, sec, "cities", base.n_cities)),
            speed_fractions=tuple(speeds),
            n_it=int(_pick(args.n_it, sec, "n_it", base.n_it)),
            refine_tol=float(sec.get("refine_tol", base.refine_tol)),
            dt=cfg.dt_curve,
            sample_dt=cfg.dt_sample,
            mode=cfg.mode.value,
            seed=cfg.seed,
            hardware=cfg.hardware,
        )

        def progress(i, total):
            if args.verbose:
                print(f"replication {i}/{total}", file=sys.stderr)

        res = bench.run_mc_density(mc, jobs=cfg.jobs, progress=progress)
        summary = res.summary()
        for name in res.arms:
            out.add(out.path(None, f"{stem}_{name}_diff.csv"), io.grid_to_csv(res.target.grid, res.difference_grid(name)))
    out.add(out.path(args.report_out, f"{stem}_summary.json"), io.dumps(summary))
    out.commit()
    _say(io.dumps(summary).rstrip())
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON config file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--jobs", type=int, default=default, help="parallel replications (bench)")
    parser.add_argument("--out-dir", default=default, help="output directory (else $GRADWAVE_OUT_DIR, else .)")


def _physics_flags(parser):
    parser.add_argument("--mode", choices=["RV", "RIV", "rv", "riv"], default=None)
    parser.add_argument("--dt", type=float, default=None, help="curve time step in ms")
    parser.add_argument("--hardware", default=None, help="hardware JSON {g_max, s_max, gamma}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradwave", description=__doc__.split("\n\n")[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an input curve")
    _global_flags(g, suppress=True)
    _physics_flags(g)
    g.add_argument("kind", choices=["rosette", "spiral", "tsp"])
    g.add_argument("--kmax", type=float)
    g.add_argument("--speed-frac", type=float)
    g.add_argument("--cities", type=int)
    g.add_argument("--revolutions", type=int)
    g.add_argument("--density-exponent", type=float)
    g.add_argument("--bins", type=int)
    g.add_argument("--out")
    g.add_argument("--density-out")

    pr = sub.add_parser("project", help="project a curve onto the feasible set")
    _global_flags(pr, suppress=True)
    _physics_flags(pr)
    pr.add_argument("input")
    pr.add_argument("--constraints", help="constraints JSON list")
    pr.add_argument("--n-it", type=int)
    pr.add_argument("--out")
    pr.add_argument("--gradient-out")
    pr.add_argument("--report-out")

    r = sub.add_parser("reparam", help="time-optimal reparameterization baseline")
    _global_flags(r, suppress=True)
    _physics_flags(r)
    r.add_argument("input")
    r.add_argument("--support", help="polyline CSV to traverse instead of the input's samples")
    r.add_argument("--angle-tol", type=float)
    r.add_argument("--out")
    r.add_argument("--profile-out")
    r.add_argument("--report-out")

    a = sub.add_parser("analyze", help="density metrics of a curve against a target")
    _global_flags(a, suppress=True)
    a.add_argument("input")
    a.add_argument("--density", required=True)
    a.add_argument("--reference", help="curve to compare against (coupling bound, sliced W2)")
    a.add_argument("--sample-dt", type=float)
    a.add_argument("--dt", type=float, default=None, help=argparse.SUPPRESS)
    a.add_argument("--projections", type=int)
    a.add_argument("--out")
    a.add_argument("--diff-out")

    b = sub.add_parser("bench", help="scaled reproduction experiments")
    _global_flags(b, suppress=True)
    _physics_flags(b)
    b.add_argument("experiment", choices=["rosette", "tsp", "mc_density"])
    b.add_argument("--replications", type=int)
    b.add_argument("--cities", type=int)
    b.add_argument("--speed-frac", type=float)
    b.add_argument("--speeds", type=float, nargs="+")
    b.add_argument("--n-it", type=int)
    b.add_argument("--sample-dt", type=float)
    b.add_argument("--report-out")
    b.add_argument("-v", "--verbose", action="store_true")
    return p


_COMMANDS = {
    "gen": cmd_gen,
    "project": cmd_project,
    "reparam": cmd_reparam,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def _fail(code: str, msg: str, status: int) -> int:
    msg = " ".join(str(msg).split())
    print(f"error {code}: {msg}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](args, cfg)
    except (DependentConstraints, InfeasibleConstraints) as exc:
        return _fail(exc.code, exc, EXIT_CONSTRAINTS)
    except NumericFailure as exc:
        return _fail(exc.code, exc, EXIT_NUMERIC)
    except InvalidArgument as exc:
        return _fail(exc.code, exc, EXIT_INVALID)
    except GradwaveError as exc:
        return _fail(exc.code, exc, EXIT_NUMERIC)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("E_NUMERIC", exc, EXIT_NUMERIC)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        return _fail("E_INVALID_ARGUMENT", f"{type(exc).__name__}: {exc}", EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
