"""Projection of a parameterized curve onto the feasible gradient-waveform set.

The projection ``argmin_{s in S ∩ A} 1/2 ||s - c||^2`` is solved on the dual
by an accelerated proximal gradient method: dual variables ``q1``/``q2``
attach to the speed and acceleration constraints, the smooth part is
minimized through the closed-form primal map

    s*(q1, q2) = P_A(c - M1^T q1 - M2^T q2)

and the nonsmooth part ``alpha ||q1||_* + beta ||q2||_*`` is handled by its
prox (soft or group-soft thresholding).

``project_curve`` runs the iteration in time-normalized units (dt = 1,
limits ``alpha*dt`` and ``beta*dt^2``). The feasible set is unchanged by this
rescaling but the two dual blocks become comparably scaled; in physical
units at microsecond steps the speed block would get an effective step
``dt^2/4`` times smaller than the acceleration block. When the dual
iteration has not reached the feasibility tolerance, the result is polished
with the interior-point method in :mod:`gradwave.interior`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import AffineConstraintSet, AffineSolver, FeasibilityReport, KinematicLimits, feasibility_report
from .curves import DiscreteCurve, NormMode, diff, diff2, diff_adjoint, dual_norm, lipschitz_constant
from .errors import InvalidArgument, NumericFailure
from .interior import interior_point_projection

log = logging.getLogger(__name__)

__all__ = [
    "DualState",
    "ProjectionSettings",
    "ProjectionResult",
    "prox_dual",
    "primal_from_dual",
    "grad_dual",
    "dual_smooth_value",
    "dual_objective",
    "project_curve",
    "curve_distance",
    "CertificateReport",
    "convergence_certificate",
]


def _solver_for(affine, curve: DiscreteCurve) -> Optional[AffineSolver]:
    if affine is None:
        return None
    if isinstance(affine, AffineConstraintSet):
        if (affine.n, affine.d) != (curve.n, curve.d):
            raise InvalidArgument("affine constraint set does not match the curve shape")
        return AffineSolver(affine)
    return affine


def _project(solver, z):
    return z if solver is None or solver.empty else solver.project(z)


# -- prox and dual pieces -----------------------------------------------------


def prox_dual(q: np.ndarray, threshold: float, mode) -> np.ndarray:
    """Prox of ``threshold * ||.||_*``: soft (RV) or per-sample group (RIV) shrinkage."""
    if threshold < 0:
        raise InvalidArgument("threshold must be non-negative")
    q = np.asarray(q, dtype=float)
    if threshold == 0:
        return q.copy()
    if NormMode.parse(mode) is NormMode.RV:
        return np.sign(q) * np.maximum(np.abs(q) - threshold, 0.0)
    q2 = q if q.ndim == 2 else q[:, None]
    norms = np.sqrt(np.sum(q2 * q2, axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > 0, np.maximum(0.0, 1.0 - threshold / norms), 0.0)
    return (q2 * factor).reshape(q.shape)


def _primal(q1, q2, c_pts, dt, solver):
    # M1^T q1 + M2^T q2 = M1^T (q1 - M1 q2) since M2 = -M1^T M1 is symmetric
    z = c_pts - diff_adjoint(q1 - diff(q2, dt), dt)
    return _project(solver, z)


def _shrink(v, threshold, mode):
    """``prox_dual`` for the solver loop; also returns the dual norm of the result."""
    if mode is NormMode.RV:
        mag = np.abs(v)
        mag -= threshold
        np.maximum(mag, 0.0, out=mag)
        return np.copysign(mag, v), float(mag.sum())
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    keep = np.maximum(norms - threshold, 0.0)
    factor = keep / np.maximum(norms, 1e-300)
    return v * factor[:, None], float(keep.sum())


def primal_from_dual(q1, q2, c: DiscreteCurve, solver=None) -> DiscreteCurve:
    """``s*(q1, q2) = P_A(c - M1^T q1 - M2^T q2)``."""
    solver = _solver_for(solver, c)
    q1 = np.asarray(q1, dtype=float).reshape(c.points.shape)
    q2 = np.asarray(q2, dtype=float).reshape(c.points.shape)
    return c.with_points(_primal(q1, q2, c.points, c.dt, solver))


def grad_dual(q1, q2, c: DiscreteCurve, solver=None):
    """Gradient of the convex smooth dual part ``F~ = -F``.

    ``F(q) = min_{s in A} <M1 s, q1> + <M2 s, q2> + 1/2 ||s - c||^2`` is
    concave with gradient ``(M1 s*, M2 s*)``, so this returns
    ``(-M1 s*, -M2 s*)`` and the descent step is ``y - t * grad``.
    """
    s = primal_from_dual(q1, q2, c, solver).points
    return -diff(s, c.dt), -diff2(s, c.dt)


def dual_smooth_value(q1, q2, c: DiscreteCurve, solver=None) -> float:
    """``F~(q1, q2) = -F(q1, q2)``."""
    s = primal_from_dual(q1, q2, c, solver).points
    q1 = np.asarray(q1, dtype=float).reshape(s.shape)
    q2 = np.asarray(q2, dtype=float).reshape(s.shape)
    F = np.vdot(diff(s, c.dt), q1) + np.vdot(diff2(s, c.dt), q2) + 0.5 * np.sum((s - c.points) ** 2)
    return -float(F)


def dual_objective(q1, q2, c: DiscreteCurve, limits: KinematicLimits, solver=None) -> float:
    """Concave dual value ``F(q) - alpha ||q1||_* - beta ||q2||_*`` (a lower bound on the primal)."""
    return (
        -dual_smooth_value(q1, q2, c, solver)
        - limits.alpha * dual_norm(np.asarray(q1).reshape(c.points.shape), limits.mode)
        - limits.beta * dual_norm(np.asarray(q2).reshape(c.points.shape), limits.mode)
    )


def curve_distance(s: DiscreteCurve, c: DiscreteCurve, normalized: bool = False) -> float:
    """Rectangle-rule ``sqrt(int ||s - c||^2 dt)``.

    ``normalized=True`` gives the time-coupling form where the ``n`` samples
    are equal-mass atoms: ``sqrt(mean ||s_i - c_i||^2)``.
    """
    if s.points.shape != c.points.shape:
        raise InvalidArgument("curves must have the same shape")
    sq = float(np.sum((s.points - c.points) ** 2))
    if normalized:
        return float(np.sqrt(sq / s.n))
    return float(np.sqrt(sq * s.dt))


# -- the solver ----------------------------------------------------------------


@dataclass
class DualState:
    """Dual iterate in the units the iteration ran in (see ``time_scale``)."""

    q1: np.ndarray
    q2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    k: int
    time_scale: float = 1.0  # physical q1 = q1 * time_scale, q2 = q2 * time_scale**2

    def physical(self):
        return self.q1 * self.time_scale, self.q2 * self.time_scale**2

    @property
    def norm_sq(self) -> float:
        return float(np.sum(self.q1**2) + np.sum(self.q2**2))


@dataclass
class ProjectionSettings:
    n_it: int = 5000
    step: Optional[float] = None  # default 1 / L
    feasibility_tol: float = 1e-6
    affine_tol: float = 1e-8
    track_iterates: bool = False
    refine: bool = True  # interior-point solve when FISTA misses the tolerances
    polish: bool = True  # ... and also after a FISTA stop, to reach solver precision
    refine_tol: float = 1e-14  # interior-point stopping merit
    normalize_time: bool = True
    stop_early: bool = True
    stagnation_window: int = 50
    stagnation_tol: float = 1e-9

    def __post_init__(self):
        if self.n_it < 1:
            raise InvalidArgument("n_it must be >= 1")
        if not self.refine_tol > 0:
            raise InvalidArgument("refine_tol must be positive")
        if self.step is not None and not self.step > 0:
            raise InvalidArgument("step must be positive")


@dataclass
class ProjectionResult:
    curve: DiscreteCurve
    distance: float
    distance_normalized: float
    residuals: FeasibilityReport
    dual_objective_history: np.ndarray
    iterate_distances: np.ndarray  # d(s^(k), c) per iteration
    dual: DualState
    converged: bool
    iterations: int
    lipschitz: float
    step: float
    method: str
    fista_residuals: FeasibilityReport
    wall_time: float
    refine_steps: int = 0
    iterates: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return self.curve.duration

    def report(self) -> dict:
        return {
            "method": self.method,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "refine_newton_steps": int(self.refine_steps),
            "lipschitz": self.lipschitz,
            "step": self.step,
            "distance": self.distance,
            "distance_normalized": self.distance_normalized,
            "duration_ms": self.curve.duration,
            "n": self.curve.n,
            "dt_ms": self.curve.dt,
            "residuals": self.residuals.as_dict(),
            "fista_residuals": self.fista_residuals.as_dict(),
            "final_dual_objective": float(self.dual_objective_history[-1]) if len(self.dual_objective_history) else None,
            "wall_time_s": self.wall_time,
        }


def _kin_residual(x1, x2, alpha, beta, mode):
    if mode is NormMode.RV:
        v, a = np.max(np.abs(x1)), np.max(np.abs(x2))
    else:
        v = np.sqrt(np.max(np.sum(x1 * x1, axis=1)))
        a = np.sqrt(np.max(np.sum(x2 * x2, axis=1)))
    return max(0.0, v - alpha) / alpha, max(0.0, a - beta) / beta


def project_curve(
    c: DiscreteCurve,
    limits: KinematicLimits,
    affine=None,
    settings: Optional[ProjectionSettings] = None,
) -> ProjectionResult:
    """Project ``c`` onto the kinematic set intersected with the affine set.

    ``affine`` may be an :class:`AffineConstraintSet`, a factorized
    :class:`AffineSolver` or None. The traversal time is that of ``c``.
    A result whose residuals stay above tolerance is returned with
    ``converged=False`` rather than raising.
    """
    settings = settings or ProjectionSettings()
    t_start = time.perf_counter()
    solver = _solver_for(affine, c)
    mode = limits.mode
    scale = c.dt if settings.normalize_time else 1.0
    dt_w = c.dt / scale
    alpha_w = limits.alpha * scale
    beta_w = limits.beta * scale**2
    n, d = c.points.shape
    cp = c.points

    if settings.step is None:
        L = lipschitz_constant(n, d, dt_w).value
        step = 1.0 / L
    else:
        step = settings.step
        L = 1.0 / step
    aff_tol = settings.affine_tol * max(1.0, float(np.max(np.abs(solver.rhs))) if solver is not None and solver.p else 1.0)

    q1 = np.zeros_like(cp)
    q2 = np.zeros_like(cp)
    q1_prev, q2_prev = q1, q2
    s_q = _project(solver, cp.copy())
    x1 = diff(s_q, dt_w)
    x2 = -diff_adjoint(x1, dt_w)
    # u = q + step * grad-ascent direction; y + step * g is then an extrapolation of u
    u1, u2 = q1 + step * x1, q2 + step * x2
    history = np.empty(settings.n_it)
    dists = np.empty(settings.n_it)
    iterates = np.empty((settings.n_it, n, d)) if settings.track_iterates else None
    converged = False
    f = 0.0
    k = 0
    win = settings.stagnation_window
    for k in range(1, settings.n_it + 1):
        # s* is affine in q, so the extrapolated point's gradient is the extrapolated gradient
        if f:
            v1 = u1 + f * (u1 - u1_prev)
            v2 = u2 + f * (u2 - u2_prev)
        else:
            v1, v2 = u1, u2
        q1_prev, q2_prev = q1, q2
        q1, n1 = _shrink(v1, step * alpha_w, mode)
        q2, n2 = _shrink(v2, step * beta_w, mode)
        s_q = _primal(q1, q2, cp, dt_w, solver)
        x1 = diff(s_q, dt_w)
        x2 = -diff_adjoint(x1, dt_w)
        u1_prev, u2_prev = u1, u2
        u1, u2 = q1 + step * x1, q2 + step * x2
        f = (k - 1) / (k + 2)

        r = s_q - cp
        diff_sq = float(np.vdot(r, r))
        F = float(np.vdot(x1, q1) + np.vdot(x2, q2)) + 0.5 * diff_sq
        history[k - 1] = F - alpha_w * n1 - beta_w * n2
        dists[k - 1] = np.sqrt(diff_sq * c.dt)
        if iterates is not None:
            iterates[k - 1] = s_q
        if not np.isfinite(history[k - 1]):
            raise NumericFailure(f"non-finite dual objective at iteration {k}")

        if settings.stop_early and k > win and k % 10 == 0:
            if abs(dists[k - 1] - dists[k - 1 - win]) <= settings.stagnation_tol * max(dists[k - 1], 1e-300):
                rv, ra = _kin_residual(x1, x2, alpha_w, beta_w, mode)
                if rv <= settings.feasibility_tol and ra <= settings.feasibility_tol:
                    aff = solver.residual(s_q) if solver is not None else 0.0
                    if aff <= aff_tol:
                        converged = True
                        break

    history = history[:k]
    dists = dists[:k]
    if iterates is not None:
        iterates = iterates[:k]
    aset_like = solver
    out = c.with_points(s_q)
    fista_res = _report(out, limits, aset_like)
    res = fista_res
    method = "dual-fista"
    refine_steps = 0
    if not converged:
        converged = res.within(settings.feasibility_tol, aff_tol)
    # The stagnation rule only certifies the tolerances, not the distance to the
    # minimizer; a zero dual means s = P_A(c) is already exact.
    polish = converged and settings.polish and bool(np.any(q1) or np.any(q2))
    if settings.refine and (polish or not converged):
        pts, info = interior_point_projection(
            cp, alpha_w, beta_w, mode, solver=solver, start=s_q, tol=settings.refine_tol, polish=settings.polish
        )
        cand = c.with_points(pts)
        cand_res = _report(cand, limits, aset_like)
        ok = cand_res.within(settings.feasibility_tol, aff_tol)
        if ok or not converged:
            out, res, converged = cand, cand_res, ok
            refine_steps = info.iterations
            method = "dual-fista+interior-point"
    if not converged:
        log.warning(
            "projection not converged after %d iterations (speed %.3g, accel %.3g, affine %.3g)",
            k, res.speed, res.accel, res.affine,
        )
    dual = DualState(q1, q2, q1 + f * (q1 - q1_prev), q2 + f * (q2 - q2_prev), k, scale)
    return ProjectionResult(
        curve=out,
        distance=curve_distance(out, c),
        distance_normalized=curve_distance(out, c, normalized=True),
        residuals=res,
        dual_objective_history=history,
        iterate_distances=dists,
        dual=dual,
        converged=bool(converged),
        iterations=k,
        lipschitz=L,
        step=step,
        method=method,
        fista_residuals=fista_res,
        wall_time=time.perf_counter() - t_start,
        refine_steps=refine_steps,
        iterates=iterates,
    )


def _report(curve, limits, solver) -> FeasibilityReport:
    rep = feasibility_report(curve, limits)
    if solver is None or solver.empty:
        return rep
    return FeasibilityReport(rep.speed, rep.accel, solver.residual(curve.points), rep.max_speed, rep.max_accel)


# -- convergence certificate ---------------------------------------------------


@dataclass
class CertificateReport:
    k: np.ndarray
    dist_sq: np.ndarray
    ratio: Optional[np.ndarray]
    max_ratio: Optional[float]
    slope: Optional[float]
    trivial: bool
    lipschitz: float
    q_norm_sq: float

    def as_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "slope": self.slope,
            "trivial": self.trivial,
            "lipschitz": self.lipschitz,
            "q_norm_sq": self.q_norm_sq,
            "iterations": int(self.k[-1]) if len(self.k) else 0,
        }


def convergence_certificate(
    result: ProjectionResult,
    reference: ProjectionResult,
    L: Optional[float] = None,
    slope_range=(10, None),
    trivial_tol: float = 1e-12,
    require_converged: bool = True,
) -> CertificateReport:
    """Check ``||s^(k) - s*||^2 <= 2 L ||q^(0) - q*||^2 / k^2`` along a tracked run.

    ``reference`` supplies ``s*`` (its curve) and ``q*`` (its final dual);
    it must be a converged run in the same time units as ``result``. The
    primal objective is 1-strongly convex, which is where the factor 2 comes
    from. ``slope`` is the least-squares log-log slope of the distance (not
    squared) over ``slope_range``. ``require_converged=False`` accepts a
    reference that stopped short of the feasibility tolerances, such as a
    fixed long run of plain FISTA.
    """
    if result.iterates is None:
        raise InvalidArgument("result was not run with track_iterates=True")
    if require_converged and not reference.converged:
        raise InvalidArgument("reference run did not converge")
    if reference.dual.time_scale != result.dual.time_scale:
        raise InvalidArgument("reference and result ran in different time units")
    L = result.lipschitz if L is None else float(L)
    ref = reference.curve.points
    ks = np.arange(1, len(result.iterates) + 1)
    dist_sq = np.sum((result.iterates - ref[None]) ** 2, axis=(1, 2))
    q_sq = reference.dual.norm_sq
    scale = max(float(np.sum(ref**2)), 1.0)
    if q_sq == 0.0 or np.all(dist_sq <= trivial_tol * scale):
        return CertificateReport(ks, dist_sq, None, None, None, True, L, q_sq)
    ratio = ks.astype(float) ** 2 * dist_sq / (2.0 * L * q_sq)
    lo, hi = slope_range
    hi = ks[-1] if hi is None else hi
    sel = (ks >= lo) & (ks <= hi) & (dist_sq > 0)
    slope = None
    if np.count_nonzero(sel) >= 2:
        slope = float(np.polyfit(np.log(ks[sel]), 0.5 * np.log(dist_sq[sel]), 1)[0])
    return CertificateReport(ks, dist_sq, ratio, float(ratio.max()), slope, False, L, q_sq)
