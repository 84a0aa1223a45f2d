"""Hardware limits and the affine constraint set ``A s = v``.

Affine rows act on the flattened curve ``s.ravel()`` (row-major, so the
coordinate ``j`` of sample ``i`` sits at ``i * d + j``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .curves import DiscreteCurve, NormMode, diff, diff2, series_norm
from .errors import DependentConstraints, InvalidArgument

__all__ = [
    "HardwareSpec",
    "KinematicLimits",
    "limits_from_hardware",
    "hardware_from_limits",
    "AffineConstraintSet",
    "AffineSolver",
    "factorize",
    "project_affine",
    "FeasibilityReport",
    "feasibility_report",
    "build_affine_set",
]

# gamma [MHz/T] * G [mT/m] -> cm^-1 ms^-1 (and likewise slew -> cm^-1 ms^-2)
_UNIT = 1e-2
COND_LIMIT = 1e12


@dataclass(frozen=True)
class HardwareSpec:
    g_max: float = 40.0  # mT/m
    s_max: float = 150.0  # mT/m/ms
    gamma: float = 42.576  # MHz/T

    def __post_init__(self):
        for name in ("g_max", "s_max", "gamma"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise InvalidArgument(f"{name} must be strictly positive, got {val!r}")

    def gradient_from_velocity(self, velocity: np.ndarray) -> np.ndarray:
        """Gradient waveform in mT/m for a k-space velocity in cm^-1/ms."""
        return np.asarray(velocity) / (self.gamma * _UNIT)


@dataclass(frozen=True)
class KinematicLimits:
    alpha: float  # max speed, cm^-1 / ms
    beta: float  # max acceleration, cm^-1 / ms^2
    mode: NormMode = NormMode.RIV

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidArgument("alpha and beta must be strictly positive")
        object.__setattr__(self, "mode", NormMode.parse(self.mode))

    def scaled(self, factor: float) -> "KinematicLimits":
        return KinematicLimits(self.alpha * factor, self.beta * factor, self.mode)


def limits_from_hardware(hw: HardwareSpec, mode=NormMode.RIV) -> KinematicLimits:
    return KinematicLimits(hw.gamma * hw.g_max * _UNIT, hw.gamma * hw.s_max * _UNIT, mode)


def hardware_from_limits(limits: KinematicLimits, gamma: float = 42.576) -> HardwareSpec:
    return HardwareSpec(limits.alpha / (gamma * _UNIT), limits.beta / (gamma * _UNIT), gamma)


@dataclass
class AffineConstraintSet:
    """Linear equality rows over curves with ``n`` samples in ``d`` dimensions."""

    n: int
    d: int
    dt: float
    _rows: list = field(default_factory=list, repr=False)
    _rhs: list = field(default_factory=list, repr=False)
    labels: list = field(default_factory=list)

    @classmethod
    def for_curve(cls, curve: DiscreteCurve) -> "AffineConstraintSet":
        return cls(curve.n, curve.d, curve.dt)

    @property
    def size(self) -> int:
        return self.n * self.d

    @property
    def p(self) -> int:
        return len(self._rhs)

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def rows(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix((0, self.size))
        return sp.vstack(self._rows, format="csr")

    @property
    def rhs(self) -> np.ndarray:
        return np.asarray(self._rhs, dtype=float)

    def _append(self, row, value: float, label: str):
        self._rows.append(sp.csr_matrix(row))
        self._rhs.append(float(value))
        self.labels.append(label)

    def _coord_row(self, coefs: np.ndarray, j: int) -> sp.csr_matrix:
        # per-sample coefficients applied to coordinate j only
        nz = np.flatnonzero(coefs)
        cols = nz * self.d + j
        return sp.csr_matrix((coefs[nz], (np.zeros(len(nz), dtype=int), cols)), shape=(1, self.size))

    def add_point_constraint(self, time_index: int, position: Sequence[float]) -> "AffineConstraintSet":
        """Pin ``s(time_index)`` (1-based) to ``position``."""
        if not 1 <= time_index <= self.n:
            raise InvalidArgument(f"time_index must be in [1, {self.n}], got {time_index}")
        pos = np.broadcast_to(np.asarray(position, dtype=float), (self.d,))
        for j in range(self.d):
            coefs = np.zeros(self.n)
            coefs[time_index - 1] = 1.0
            self._append(self._coord_row(coefs, j), pos[j], f"point[{time_index}].{j}")
        return self

    def add_multishot_constraints(self, tr_ms: float) -> "AffineConstraintSet":
        """Return to the k-space centre every ``tr_ms``: ``s(k TR) = 0``."""
        ratio = tr_ms / self.dt
        steps = int(round(ratio))
        if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise InvalidArgument(f"TR={tr_ms} ms is not an integer multiple of dt={self.dt} ms")
        for idx in range(0, self.n, steps):
            self.add_point_constraint(idx + 1, np.zeros(self.d))
        return self

    def add_initial_speed_zero(self) -> "AffineConstraintSet":
        """``s(2) - s(1) = 0``; the first derivative sample is zero by construction."""
        if self.n < 2:
            raise InvalidArgument("initial speed constraint needs n >= 2")
        for j in range(self.d):
            coefs = np.zeros(self.n)
            coefs[0], coefs[1] = -1.0, 1.0
            self._append(self._coord_row(coefs, j), 0.0, f"initial_speed.{j}")
        return self

    def add_moment_nulling(self, order: int) -> "AffineConstraintSet":
        """Rectangle-rule ``sum_j t_j^order sdot(j) dt = 0`` with ``t_j = (j-1) dt``."""
        if order < 0:
            raise InvalidArgument("moment order must be >= 0")
        t = np.arange(self.n) * self.dt
        w = t**order  # weight of sdot(j); sdot(1) == 0 so w[0] is irrelevant
        coefs = np.zeros(self.n)
        coefs[1:] += w[1:]
        coefs[:-1] -= w[1:]
        for j in range(self.d):
            self._append(self._coord_row(coefs, j), 0.0, f"moment{order}.{j}")
        return self

    def residual(self, points: np.ndarray) -> np.ndarray:
        if self.p == 0:
            return np.zeros(0)
        return self.rows @ np.asarray(points, dtype=float).ravel() - self.rhs


class AffineSolver:
    """Factorized orthogonal projector onto ``{s : A s = v}``.

    Rows are equilibrated to unit norm before forming the Gram matrix; this
    leaves the projector unchanged and keeps the conditioning check about
    geometry rather than row scaling.
    """

    def __init__(self, aset: AffineConstraintSet):
        self.n, self.d = aset.n, aset.d
        self.labels = tuple(aset.labels)
        self.p = aset.p
        self.rhs = aset.rhs
        self.rows = aset.rows
        if self.p == 0:
            self.condition = 1.0
            self._scaled = None
            return
        norms = np.sqrt(np.asarray(self.rows.multiply(self.rows).sum(axis=1)).ravel())
        if np.any(norms == 0):
            bad = [lab for lab, nrm in zip(self.labels, norms) if nrm == 0]
            raise DependentConstraints(f"zero constraint rows: {bad}", bad)
        self._row_scale = 1.0 / norms
        self._scaled = sp.diags(self._row_scale) @ self.rows
        gram = (self._scaled @ self._scaled.T).toarray()
        self.condition = float(np.linalg.cond(gram))
        if not np.isfinite(self.condition) or self.condition > COND_LIMIT:
            w, V = np.linalg.eigh(gram)
            weak = np.abs(V[:, 0])
            bad = [lab for lab, c in zip(self.labels, weak) if c > 1e-3 * weak.max()]
            raise DependentConstraints(
                f"affine constraints are linearly dependent (cond={self.condition:.3g}): {bad}", bad
            )
        self._cho = sla.cho_factor(gram)
        self._scaled_T = self._scaled.T.tocsr()

    @property
    def empty(self) -> bool:
        return self.p == 0

    def apply_pseudo_inverse(self, r: np.ndarray) -> np.ndarray:
        """``A^T (A A^T)^{-1} r`` as a flat vector of length ``n * d``."""
        if self.empty:
            return np.zeros(self.n * self.d)
        lam = sla.cho_solve(self._cho, self._row_scale * np.asarray(r, dtype=float))
        return self._scaled_T @ lam

    def project(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.empty:
            return z.copy()
        flat = z.ravel()
        out = flat + self.apply_pseudo_inverse(self.rhs - self.rows @ flat)
        return out.reshape(z.shape)

    def residual(self, z: np.ndarray) -> float:
        if self.empty:
            return 0.0
        return float(np.max(np.abs(self.rows @ np.asarray(z).ravel() - self.rhs)))


def factorize(aset: AffineConstraintSet) -> AffineSolver:
    return AffineSolver(aset)


def project_affine(solver: AffineSolver, z: np.ndarray) -> np.ndarray:
    return solver.project(z)


@dataclass(frozen=True)
class FeasibilityReport:
    speed: float  # relative excess of the speed bound, clipped at 0
    accel: float
    affine: float  # max |A s - v|
    max_speed: float
    max_accel: float

    def within(self, kin_tol: float = 1e-6, affine_tol: float = 1e-8) -> bool:
        return self.speed <= kin_tol and self.accel <= kin_tol and self.affine <= affine_tol

    def as_dict(self) -> dict:
        return {
            "speed_residual": self.speed,
            "accel_residual": self.accel,
            "affine_residual": self.affine,
            "max_speed": self.max_speed,
            "max_accel": self.max_accel,
        }


def feasibility_report(curve: DiscreteCurve, limits: KinematicLimits, aset=None) -> FeasibilityReport:
    vmax = series_norm(diff(curve.points, curve.dt), limits.mode)
    amax = series_norm(diff2(curve.points, curve.dt), limits.mode)
    affine = 0.0
    if aset is not None and aset.p:
        affine = float(np.max(np.abs(aset.residual(curve.points))))
    return FeasibilityReport(
        speed=max(0.0, vmax - limits.alpha) / limits.alpha,
        accel=max(0.0, amax - limits.beta) / limits.beta,
        affine=affine,
        max_speed=vmax,
        max_accel=amax,
    )


def build_affine_set(items: Iterable[dict], n: int, d: int, dt: float) -> AffineConstraintSet:
    """Assemble a constraint set from JSON-like entries.

    Accepted entries::

        {"type": "point", "index": 1, "position": [0, 0]}   # or "at": "start"|"end"
        {"type": "multishot", "tr_ms": 5.0}
        {"type": "initial_speed"}
        {"type": "moment", "order": 0}
    """
    aset = AffineConstraintSet(n, d, dt)
    for k, item in enumerate(items):
        if not isinstance(item, dict) or "type" not in item:
            raise InvalidArgument(f"constraint #{k} must be an object with a 'type' field")
        kind = item["type"]
        if kind == "point":
            if "index" in item:
                idx = int(item["index"])
            else:
                at = item.get("at", "start")
                if at not in ("start", "end"):
                    raise InvalidArgument(f"constraint #{k}: 'at' must be start or end")
                idx = 1 if at == "start" else n
            aset.add_point_constraint(idx, item.get("position", [0.0] * d))
        elif kind == "multishot":
            aset.add_multishot_constraints(float(item["tr_ms"]))
        elif kind == "initial_speed":
            aset.add_initial_speed_zero()
        elif kind == "moment":
            aset.add_moment_nulling(int(item.get("order", 0)))
        else:
            raise InvalidArgument(f"constraint #{k}: unknown type {kind!r}")
    return aset
