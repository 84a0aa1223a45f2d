"""CSV and JSON file formats, atomic writes and provenance sidecars.

Formats:

* curve: ``t_ms,kx,ky[,kz]``, one row per sample, uniform ``t``;
* gradient: ``t_ms,gx_mT_m,gy_mT_m[,gz_mT_m]`` with ``g = s' / gamma``;
* density or grid: ``kx,ky,value`` over bin centres, row-major with ``kx``
  the slow index;
* speed profile: ``sigma,v``.

Every file written through :func:`write_with_sidecar` gets a
``<name>.meta.json`` companion holding the config hash, package versions and
wall time.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import platform
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .constraints import HardwareSpec
from .curves import DiscreteCurve, diff
from .density import Grid, TargetDensity
from .errors import InvalidArgument

__all__ = [
    "atomic_write_text",
    "write_json",
    "read_json",
    "config_hash",
    "sidecar",
    "write_with_sidecar",
    "curve_to_csv",
    "read_curve_csv",
    "gradient_to_csv",
    "grid_to_csv",
    "read_density_csv",
    "profile_to_csv",
]

UNIFORM_TOL = 1e-9
_AXES = ("x", "y", "z")


# -- plumbing --------------------------------------------------------------------


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value  # enums
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidArgument(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"malformed JSON in {path}: {exc}") from None


def config_hash(config) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _versions() -> dict:
    import scipy

    from . import __version__

    return {
        "gradwave": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def sidecar(config, wall_time: float, extra: Optional[dict] = None) -> dict:
    meta = {"config_hash": config_hash(config), "versions": _versions(), "wall_time_s": float(wall_time)}
    if extra:
        meta.update(extra)
    return meta


def write_with_sidecar(path, text: str, config, wall_time: float) -> Path:
    path = atomic_write_text(path, text)
    write_json(path.with_name(path.name + ".meta.json"), sidecar(config, wall_time))
    return path


# -- curves --------------------------------------------------------------------------


def _table(header: Sequence[str], columns: Iterable[np.ndarray]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    data = np.column_stack(list(columns))
    for row in data:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def curve_to_csv(curve: DiscreteCurve) -> str:
    header = ["t_ms"] + [f"k{a}" for a in _AXES[: curve.d]]
    return _table(header, [curve.times, *curve.points.T])


def _read_rows(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except FileNotFoundError:
        raise InvalidArgument(f"file not found: {path}") from None
    if len(rows) < 2:
        raise InvalidArgument(f"{path}: expected a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InvalidArgument(f"{path}: rows do not match the header {header}")
    return header, data


def read_curve_csv(path) -> DiscreteCurve:
    header, data = _read_rows(path)
    d = len(header) - 1
    if header != ["t_ms"] + [f"k{a}" for a in _AXES[:d]] or d < 1:
        raise InvalidArgument(f"{path}: curve header must be t_ms,kx,ky[,kz], got {','.join(header)}")
    t = data[:, 0]
    if len(t) < 2:
        raise InvalidArgument(f"{path}: a curve needs at least 2 rows")
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if not dt > 0 or np.max(np.abs(steps - dt)) > UNIFORM_TOL * dt:
        raise InvalidArgument(f"{path}: time stamps are not uniformly spaced")
    return DiscreteCurve(data[:, 1:], dt)


def gradient_to_csv(curve: DiscreteCurve, hw: HardwareSpec) -> str:
    g = hw.gradient_from_velocity(diff(curve.points, curve.dt))
    header = ["t_ms"] + [f"g{a}_mT_m" for a in _AXES[: curve.d]]
    return _table(header, [curve.times, *g.T])


# -- grids -----------------------------------------------------------------------


def grid_to_csv(grid: Grid, values: np.ndarray) -> str:
    kx, ky = grid.mesh()
    return _table(["kx", "ky", "value"], [kx.ravel(), ky.ravel(), np.asarray(values).ravel()])


def read_density_csv(path) -> TargetDensity:
    """Read a ``kx,ky,value`` grid and renormalize it on the implied grid."""
    header, data = _read_rows(path)
    if header != ["kx", "ky", "value"]:
        raise InvalidArgument(f"{path}: density header must be kx,ky,value")
    res = int(round(np.sqrt(len(data))))
    if res * res != len(data) or res < 2:
        raise InvalidArgument(f"{path}: expected a square grid, got {len(data)} rows")
    cmax = float(np.max(data[:, 0]))
    grid = Grid(cmax * res / (res - 1), res)
    kx, ky = grid.mesh()
    tol = 1e-6 * grid.k_max
    if np.max(np.abs(data[:, 0] - kx.ravel())) > tol or np.max(np.abs(data[:, 1] - ky.ravel())) > tol:
        raise InvalidArgument(f"{path}: bin centres are not a row-major regular grid")
    return TargetDensity.from_unnormalized(grid, data[:, 2].reshape(res, res))


def profile_to_csv(sigma: np.ndarray, v: np.ndarray) -> str:
    return _table(["sigma", "v"], [np.asarray(sigma), np.asarray(v)])
