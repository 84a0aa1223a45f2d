"""Time-optimal traversal of a fixed curve support, used as the comparison baseline.

The support is the polyline through the curve's points. Along arc length a
maximal speed profile is built from the speed bound, the centripetal bound
``v^2 kappa <= beta`` and a forward/backward pass that spends whatever is
left of ``beta`` on tangential acceleration. Speed is forced to zero at
singular (corner) vertices.

With the remaining tangential budget ``sqrt(beta^2 - kappa^2 v^4)`` the
square speed ``u = v^2`` obeys ``du/dsigma = 2 sqrt(beta^2 - kappa^2 u^2)``,
which integrates to ``u = (beta/kappa) sin(2 kappa sigma + phi)``. The passes
use that closed form, so the profile is exact on straight lines and circles.

For RV limits the speed bound is applied per segment direction
(``alpha / |u|_inf`` for unit tangent ``u``, exact for the per-axis bound);
the acceleration bound is applied as an l2 bound of ``beta``, which implies
the per-axis one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import KinematicLimits
from .curves import DiscreteCurve, NormMode, diff, diff2
from .density import TargetDensity, empirical_histogram, relative_error
from .errors import InvalidArgument

__all__ = [
    "SupportPath",
    "SpeedProfile",
    "TraversalReport",
    "build_support",
    "speed_profile",
    "time_optimal_reparam",
    "compare_traversal",
]

DEFAULT_ANGLE_TOL = 5.0


@dataclass(frozen=True, eq=False)
class SupportPath:
    vertices: np.ndarray  # (m, d)
    cumulative_arclength: np.ndarray  # (m,), starts at 0
    singular_indices: np.ndarray  # sorted vertex indices with forced zero speed
    curvature: np.ndarray  # circumcircle curvature per vertex (0 at endpoints and corners)
    turn_chord: np.ndarray  # 2 sin(turning angle / 2) per vertex (0 at endpoints and corners)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    @property
    def d(self) -> int:
        return self.vertices.shape[1]


def build_support(curve_or_polyline, angle_tol_deg: float = DEFAULT_ANGLE_TOL, stop_at_end: bool = True) -> SupportPath:
    """Polyline support with arc length, corner flags and vertex curvature.

    Consecutive coincident vertices are merged. A vertex is singular when the
    tangent turns by more than ``angle_tol_deg`` there; the first vertex is
    always singular and the last one when ``stop_at_end`` is set.
    """
    pts = curve_or_polyline.points if isinstance(curve_or_polyline, DiscreteCurve) else curve_or_polyline
    V = np.asarray(pts, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2 or len(V) < 2:
        raise InvalidArgument("a support needs at least 2 vertices")
    if not np.all(np.isfinite(V)):
        raise InvalidArgument("vertices must be finite")
    if not angle_tol_deg >= 0:
        raise InvalidArgument("angle_tol_deg must be non-negative")
    scale = max(1.0, float(np.max(np.abs(V))))
    seg = np.linalg.norm(np.diff(V, axis=0), axis=1)
    keep = np.r_[True, seg > 1e-12 * scale]
    V = V[keep]
    if len(V) < 2:
        raise InvalidArgument("all vertices coincide")
    a = np.diff(V, axis=0)
    la = np.linalg.norm(a, axis=1)
    s = np.r_[0.0, np.cumsum(la)]
    m = len(V)
    kappa = np.zeros(m)
    turn = np.zeros(m)
    chord_turn = np.zeros(m)
    if m > 2:
        u, w = a[:-1], a[1:]
        lu, lw = la[:-1], la[1:]
        cos = np.clip(np.sum(u * w, axis=1) / (lu * lw), -1.0, 1.0)
        turn[1:-1] = np.degrees(np.arccos(cos))
        sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
        chord = np.linalg.norm(u + w, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(chord > 0, 2.0 * sin / chord, np.inf)
        kappa[1:-1] = k
        chord_turn[1:-1] = np.sqrt(np.maximum(2.0 - 2.0 * cos, 0.0))
    sing = turn > angle_tol_deg
    sing[0] = True
    if stop_at_end:
        sing[-1] = True
    kappa[sing] = 0.0
    chord_turn[sing] = 0.0
    if not np.all(np.isfinite(kappa)):
        raise InvalidArgument("curvature estimation failed on degenerate vertices")
    return SupportPath(V, s, np.flatnonzero(sing), kappa, chord_turn)


# -- speed profile ----------------------------------------------------------------


def _reach_circle(u: float, kappa: float, dsig: float, beta: float) -> float:
    # du/dsigma = 2 sqrt(beta^2 - kappa^2 u^2)  ->  u = (beta/kappa) sin(2 kappa sigma + phi)
    if kappa * dsig < 1e-12 * max(1.0, dsig):
        return u + 2.0 * beta * dsig
    top = beta / kappa
    theta = math.asin(min(1.0, u / top)) + 2.0 * kappa * dsig
    if theta >= 0.5 * math.pi:
        return top
    return top * math.sin(theta)


def _reach(u: float, kappa: float, c: float, dsig: float, beta: float) -> float:
    """Square speed reachable after ``dsig`` of arc from square speed ``u``.

    The normal acceleration is ``max(kappa v^2, c v)``; below ``v = c/kappa``
    the linear term rules and ``sqrt(beta^2 - c^2 u)`` falls linearly in sigma.
    """
    if c <= 0.0:
        return _reach_circle(u, kappa, dsig, beta)
    ux = (c / kappa) ** 2 if kappa > 0 else math.inf
    if u < ux:
        w0 = math.sqrt(max(beta * beta - c * c * u, 0.0))
        w = w0 - c * c * dsig
        u1 = (beta * beta - w * w) / (c * c) if w > 0 else (beta / c) ** 2
        if u1 <= ux:
            return u1
        wx = math.sqrt(max(beta * beta - c * c * ux, 0.0))
        dsig -= (w0 - wx) / (c * c)
        u = ux
    return _reach_circle(u, kappa, max(dsig, 0.0), beta)


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    sigma: np.ndarray  # arc length at profile nodes
    speed: np.ndarray  # speed at profile nodes
    points: np.ndarray  # node positions
    is_stop: np.ndarray  # nodes with forced zero speed

    @property
    def segment_times(self) -> np.ndarray:
        """Traversal time per node interval (constant tangential acceleration inside)."""
        ds = np.diff(self.sigma)
        vs = self.speed[:-1] + self.speed[1:]
        with np.errstate(divide="ignore"):
            return np.where(ds > 0, 2.0 * ds / vs, 0.0)

    @property
    def duration(self) -> float:
        return float(np.sum(self.segment_times))


def speed_profile(
    path: SupportPath,
    limits: KinematicLimits,
    max_step: Optional[float] = None,
    dt: Optional[float] = None,
    node_cap: Optional[np.ndarray] = None,
) -> SpeedProfile:
    """Maximal speed profile on a refined copy of ``path``.

    Segments longer than ``max_step`` are subdivided (default: ``length/4000``);
    a segment joining two stops is always split so its midpoint can move.

    With ``dt`` given the profile accounts for sampling: when a sample step
    ``v dt`` is shorter than the polyline edges, a single sample takes the
    whole turn of a vertex and its second difference is about
    ``v dt * 2 sin(theta / 2)``. The normal acceleration on an edge is then
    taken as ``max(kappa v^2, c v)`` with ``c = 2 sin(theta / 2) / dt`` from
    the sharper end vertex.
    ``node_cap`` optionally bounds the speed at each refined node.
    """
    alpha, beta = float(limits.alpha), float(limits.beta)
    V, s = path.vertices, path.cumulative_arclength
    m = len(V)
    if max_step is None:
        max_step = path.length / 4000.0
    if not max_step > 0:
        raise InvalidArgument("max_step must be positive")
    stop = np.zeros(m, dtype=bool)
    stop[path.singular_indices] = True
    seg_len = np.diff(s)
    pieces = np.maximum(np.ceil(seg_len / max_step).astype(int), 1)
    pieces = np.where(stop[:-1] & stop[1:], np.maximum(pieces, 2), pieces)

    # per-segment limits
    kseg = np.maximum(path.curvature[:-1], path.curvature[1:])
    if limits.mode is NormMode.RV:
        tang = np.diff(V, axis=0) / seg_len[:, None]
        aseg = alpha / np.max(np.abs(tang), axis=1)
    else:
        aseg = np.full(m - 1, alpha)
    with np.errstate(divide="ignore"):
        useg = np.minimum(aseg**2, np.where(kseg > 0, beta / kseg, np.inf))

    # refined nodes
    total = int(pieces.sum()) + 1
    sig = np.empty(total)
    seg_of = np.empty(total - 1, dtype=int)
    node_stop = np.zeros(total, dtype=bool)
    pos = 0
    for j in range(m - 1):
        p = pieces[j]
        sig[pos : pos + p] = s[j] + seg_len[j] * np.arange(p) / p
        seg_of[pos : pos + p] = j
        node_stop[pos] = stop[j]
        pos += p
    sig[-1] = s[-1]
    node_stop[-1] = stop[-1]
    ucap = np.empty(total)
    ucap[:-1] = useg[seg_of]
    ucap[1:] = np.minimum(ucap[1:], np.r_[useg[seg_of[1:]], np.inf])
    ucap[-1] = useg[-1]
    if dt is not None:
        cseg = np.maximum(path.turn_chord[:-1], path.turn_chord[1:]) / dt
        with np.errstate(divide="ignore"):
            uc = np.where(cseg > 0, (beta / cseg) ** 2, np.inf)
        ucap[:-1] = np.minimum(ucap[:-1], uc[seg_of])
        ucap[1:] = np.minimum(ucap[1:], uc[seg_of])
    else:
        cseg = np.zeros(m - 1)
    if node_cap is not None:
        ucap = np.minimum(ucap, np.asarray(node_cap) ** 2)
    ucap[node_stop] = 0.0

    ds = np.diff(sig).tolist()
    ks = kseg[seg_of].tolist()
    cs = cseg[seg_of].tolist()
    u = ucap.tolist()
    for i in range(total - 1):
        u[i + 1] = min(u[i + 1], _reach(u[i], ks[i], cs[i], ds[i], beta))
    for i in range(total - 2, -1, -1):
        u[i] = min(u[i], _reach(u[i + 1], ks[i], cs[i], ds[i], beta))
    speed = np.sqrt(np.maximum(np.asarray(u), 0.0))

    frac = (sig - s[np.r_[seg_of, m - 2]]) / seg_len[np.r_[seg_of, m - 2]]
    idx = np.r_[seg_of, m - 2]
    pts = V[idx] + frac[:, None] * (V[idx + 1] - V[idx])
    pts[-1] = V[-1]
    return SpeedProfile(sig, speed, pts, node_stop)


def _sample(prof: SpeedProfile, dt: float):
    """Sample the profile every ``dt``; returns points, sample times and their node intervals."""
    seg_t = prof.segment_times
    if not np.all(np.isfinite(seg_t)):
        raise InvalidArgument("speed profile has a zero-speed stretch")
    n_nodes = len(prof.sigma)
    # stretches between stops; the last one may end moving
    stops = np.flatnonzero(prof.is_stop)
    bounds = np.unique(np.r_[stops, n_nodes - 1])
    bounds = bounds[bounds > 0]
    scale = np.ones(n_nodes - 1)
    start = 0
    for b in bounds:
        T = float(seg_t[start:b].sum())
        if T > 0:
            steps = math.ceil(T / dt - 1e-9)
            scale[start:b] = steps * dt / T
        start = b
    t_nodes = np.r_[0.0, np.cumsum(seg_t * scale)]
    n_out = int(round(t_nodes[-1] / dt)) + 1
    t = np.minimum(np.arange(n_out) * dt, t_nodes[-1])
    j = np.clip(np.searchsorted(t_nodes, t, side="right") - 1, 0, n_nodes - 2)
    tau = (t - t_nodes[j]) / scale[j]
    dsig = np.diff(prof.sigma)
    va, vb = prof.speed[j], prof.speed[j + 1]
    acc = (vb**2 - va**2) / (2.0 * dsig[j])
    travelled = np.clip(va * tau + 0.5 * acc * tau**2, 0.0, dsig[j])
    frac = (travelled / dsig[j])[:, None]
    pts = prof.points[j] + frac * (prof.points[j + 1] - prof.points[j])
    pts[-1] = prof.points[-1]
    return pts, j


def _excess(pts, dt, limits):
    """Per-sample ratio of discrete speed and acceleration to their bounds."""
    v = diff(pts, dt)
    a = diff2(pts, dt)
    if limits.mode is NormMode.RV:
        rv, ra = np.max(np.abs(v), axis=1), np.max(np.abs(a), axis=1)
    else:
        rv, ra = np.linalg.norm(v, axis=1), np.linalg.norm(a, axis=1)
    return rv / limits.alpha, ra / limits.beta


def time_optimal_reparam(
    path: SupportPath,
    limits: KinematicLimits,
    dt: float,
    max_step: Optional[float] = None,
    repair_rounds: int = 0,
    tol: float = 1e-3,
):
    """Traverse ``path`` as fast as the profile allows and sample it every ``dt``.

    Each stretch between two stops is slowed down uniformly (by at most one
    ``dt``) so that every stop falls on a sample; the curve then rests exactly
    at its corners. The continuous profile can still overshoot the discrete
    bounds by a few percent where tangential and turning accelerations land
    on the same sample; those samples are repaired by lowering the speed cap
    at the nodes around them and re-running the passes. Returns
    ``(curve, T_rep)`` with ``T_rep`` the sampled duration.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    prof = speed_profile(path, limits, max_step, dt)
    cap = None
    pts, j = _sample(prof, dt)
    for _ in range(repair_rounds):
        rv, ra = _excess(pts, dt, limits)
        # second differences see speeds on both sides of a sample
        ratio = np.maximum(np.sqrt(ra), rv)
        bad = np.flatnonzero(ratio > 1.0 + tol)
        if len(bad) == 0:
            break
        if cap is None:
            cap = np.full(len(prof.sigma), np.inf)
        for k in bad:
            lo = j[max(k - 1, 0)]
            hi = j[min(k + 1, len(j) - 1)] + 1
            cur = prof.speed[lo : hi + 1]
            cap[lo : hi + 1] = np.minimum(cap[lo : hi + 1], cur * (0.99 / ratio[k]))
        prof = speed_profile(path, limits, max_step, dt, cap)
        pts, j = _sample(prof, dt)
    curve = DiscreteCurve(pts, dt)
    return curve, curve.duration


# -- comparison against projection -----------------------------------------------------


@dataclass
class TraversalReport:
    T_rep: float
    T_projection: float
    ratio: float
    rel_error_rep: Optional[float]
    rel_error_projection: Optional[float]
    reparam_curve: DiscreteCurve
    projection: object  # ProjectionResult

    def as_dict(self) -> dict:
        return {
            "T_rep": self.T_rep,
            "T_projection": self.T_projection,
            "ratio": self.ratio,
            "rel_error_rep": self.rel_error_rep,
            "rel_error_projection": self.rel_error_projection,
        }


def compare_traversal(
    input_curve: DiscreteCurve,
    limits: KinematicLimits,
    dt: Optional[float] = None,
    target: Optional[TargetDensity] = None,
    sample_dt: Optional[float] = None,
    angle_tol_deg: float = DEFAULT_ANGLE_TOL,
    settings=None,
    support=None,
) -> TraversalReport:
    """Reparameterize the input's support and project the input; compare duration and density.

    ``support`` is the polyline the input was drawn from (for example a TSP
    tour or a dense rosette); by default the input's own sample polyline is
    used. ``dt`` defaults to the input's time step. With a ``target`` both curves
    are sampled every ``sample_dt`` (default ``dt``) and histogrammed on the
    target's grid.
    """
    from .curves import sample_at_rate
    from .projector import project_curve

    dt = input_curve.dt if dt is None else float(dt)
    path = build_support(input_curve if support is None else support, angle_tol_deg)
    rep_curve, T_rep = time_optimal_reparam(path, limits, dt)
    proj = project_curve(input_curve, limits, settings=settings)
    T_proj = proj.curve.duration
    err_rep = err_proj = None
    if target is not None:
        sdt = dt if sample_dt is None else float(sample_dt)
        err_rep = relative_error(empirical_histogram(sample_at_rate(rep_curve, sdt), target.grid), target)
        err_proj = relative_error(empirical_histogram(sample_at_rate(proj.curve, sdt), target.grid), target)
    return TraversalReport(T_rep, T_proj, T_rep / T_proj, err_rep, err_proj, rep_curve, proj)
