"""Trajectory CSV and JSON report files, written atomically."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Mesh, Trajectory
from .errors import DomainError


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary sibling of ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sides(times: np.ndarray) -> list[str]:
    """``L``/``R`` on the two rows of a duplicated breakpoint, empty elsewhere."""
    out = [""] * len(times)
    for k in range(len(times) - 1):
        if times[k] == times[k + 1]:
            out[k], out[k + 1] = "L", "R"
    return out


def trajectory_csv(z: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"z{i + 1}" for i in range(z.n)] + ["side"])
    for t, v, s in zip(z.times, z.values, _sides(z.times)):
        w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in v] + [s])
    return buf.getvalue()


def write_trajectory(z: Trajectory, path) -> None:
    atomic_write(path, trajectory_csv(z))


def read_trajectory(path, mesh: Mesh) -> Trajectory:
    """Read a CSV written by :func:`write_trajectory` back onto ``mesh``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    n = len(head) - 2
    if head[0] != "t" or head[-1] != "side" or n < 1:
        raise DomainError(f"{path}: unexpected header {head}")
    t = np.array([float(r[0]) for r in body])
    if len(t) != len(mesh) or not np.array_equal(t, mesh.times):
        raise DomainError(f"{path}: times do not match the mesh")
    return Trajectory(mesh, np.array([[float(x) for x in r[1:1 + n]] for r in body]))


def write_json(obj, path) -> None:
    atomic_write(path, json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")
