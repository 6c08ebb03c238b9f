"""Continuation of a solution past the last impulse, blow-up detection and
the Grönwall a-priori bound."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import LEFT, ODE, RIGHT, HistorySegment, SystemSpec, Trajectory
from .errors import DomainError
from .evolution import build_fundamental

log = logging.getLogger(__name__)

ESCAPE_NORM = 1e8
ESCAPE_JUMP = 10.0


@dataclass
class Extension:
    """Result of :func:`extend_solution`.

    ``trajectory`` covers ``[-r, T]`` or, after a blow-up, ``[-r, t]`` for
    the last node ``t`` before ``escape_time``.
    """

    trajectory: Trajectory
    escaped: bool = False
    escape_time: float | None = None


class _Marcher:
    """Read access to ``z`` on ``[-r, tau]`` plus the continuation computed so far."""

    def __init__(self, z: Trajectory):
        self.z = z
        self.tau = z.mesh.end
        self.t = [self.tau]
        self.v = [z.eval(self.tau, LEFT)]

    def window(self, ts: float, ys: np.ndarray, side: str) -> HistorySegment:
        """History at stage time ``ts``; the gap ``(t_k, ts]`` is bridged linearly
        from the last accepted node to the stage value ``ys``."""
        z, tau, r = self.z, self.tau, self.z.mesh.r
        tk, vk = self.t[-1], self.v[-1]
        et, ev = np.asarray(self.t), np.asarray(self.v)

        def fn(s):
            u = ts + s
            out = np.empty((len(u), z.n))
            old = u <= tau
            if np.any(old):
                out[old] = z.eval(u[old], side)
            mid = (~old) & (u <= tk)
            if np.any(mid):
                for j in range(z.n):
                    out[mid, j] = np.interp(u[mid], et, ev[:, j])
            new = u > tk
            if np.any(new):
                w = ((u[new] - tk) / (ts - tk))[:, None]
                out[new] = (1.0 - w) * vk + w * ys
            return out

        return HistorySegment(fn, r, z.n)


def _escaped(prev: np.ndarray, cur: np.ndarray, escape_norm: float) -> bool:
    if not np.all(np.isfinite(cur)):
        return True
    nc = float(np.linalg.norm(cur))
    return nc > escape_norm or nc > ESCAPE_JUMP * (1.0 + float(np.linalg.norm(prev)))


def extend_solution(spec: SystemSpec, z: Trajectory, T: float, growth=None,
                    escape_norm: float = ESCAPE_NORM) -> Extension:
    """Continue ``z' = A(t) z + f(t, z_t)`` from ``tau`` to ``T`` with classical RK4.

    Beyond ``tau`` there are no impulses and no non-local coupling.  Steps
    follow the extended mesh, so lag-propagated breakpoints are nodes.  The
    first stage reads the history from the right at breakpoints, the others
    from the left, matching the interior of the step's delayed image.

    A non-finite state, a norm above ``escape_norm`` or growth by more than a
    factor 10 in one step counts as blow-up; the escape time is reported at
    node resolution.  ``growth`` is accepted for interface symmetry with the
    command line and unused here.
    """
    mesh = z.mesh
    if not T > mesh.end:
        raise DomainError(f"extension end {T} must exceed tau = {mesh.end}")
    big = mesh.extended(T)
    n = spec.n
    m = _Marcher(z)
    head = len(mesh)
    vals = np.empty((len(big), n))
    vals[:head] = z.values

    def rhs(t, y, side, ys_for_window):
        A = np.asarray(spec.A(t), dtype=float).reshape(n, n)
        h = m.window(t, ys_for_window, side)
        return A @ y + np.asarray(spec.f(t, h), dtype=float).reshape(n)

    escape = None
    for seg in big.segments:
        if seg.hi <= head:
            continue
        assert seg.kind == ODE
        ts = big.times[seg.lo:seg.hi]
        vals[seg.lo] = m.v[-1]
        for k in range(len(ts) - 1):
            t0, h = float(ts[k]), float(ts[k + 1] - ts[k])
            y = m.v[-1]
            with np.errstate(all="ignore"):
                k1 = rhs(t0, y, RIGHT, y)
                y2 = y + 0.5 * h * k1
                k2 = rhs(t0 + 0.5 * h, y2, LEFT, y2)
                y3 = y + 0.5 * h * k2
                k3 = rhs(t0 + 0.5 * h, y3, LEFT, y3)
                y4 = y + h * k3
                k4 = rhs(t0 + h, y4, LEFT, y4)
                nxt = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if _escaped(y, nxt, escape_norm):
                escape = float(ts[k + 1])
                break
            m.t.append(float(ts[k + 1]))
            m.v.append(nxt)
            vals[seg.lo + k + 1] = nxt
        if escape is not None:
            break
    if escape is None:
        return Extension(Trajectory(big, vals))
    log.info("blow-up detected at t = %.6g", escape)
    last = m.t[-1]
    short = big.truncated(last)
    return Extension(Trajectory(short, vals[:len(short)]), True, escape)


def _declared(spec, key):
    dc = spec.declared_constants or {}
    return dc.get(key)


def gronwall_bound(spec: SystemSpec, z: Trajectory, interval, h: Callable[[float], float],
                   M: float | None = None, L: float | None = None, nodes: int = 2001) -> float:
    """``M (L ||z(a)|| + int_a^b h) exp(M int_a^b h)`` for ``interval = (a, b)``.

    Valid when ``||f(t, phi)|| <= h(t) (1 + ||phi(0)||)``.  ``M`` defaults to
    the declared constant or the evolution bound on ``[a, b]``; ``L`` to the
    declared impulse constant, or 1 when the system has no impulses (the
    restart value is then the state itself).
    """
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise DomainError(f"empty interval [{a}, {b}]")
    ts = np.linspace(a, b, nodes)
    hv = np.array([float(h(float(t))) for t in ts])
    if np.any(hv < 0) or not np.all(np.isfinite(hv)):
        raise DomainError("growth function must be finite and nonnegative")
    if M is None:
        M = _declared(spec, "M")
    if M is None:
        M = build_fundamental(spec.A, ts).M
    if L is None:
        L = _declared(spec, "L") if spec.partition.N else 1.0
    if L is None:
        raise DomainError("impulse constant L is neither given nor declared")
    H = float(np.sum(0.5 * np.diff(ts) * (hv[1:] + hv[:-1])))
    za = float(np.linalg.norm(z.eval(a, LEFT)))
    return float(M * (L * za + H) * np.exp(M * H))


@dataclass
class BoundaryCheck:
    escaped: bool
    first_hit: float | None = None

    def to_dict(self) -> dict:
        return {"escaped": self.escaped, "first_hit": self.first_hit}


def boundary_alternative_check(z: Trajectory, radius: float) -> BoundaryCheck:
    """First node whose norm reaches ``radius``, if any."""
    norms = np.linalg.norm(z.values, axis=1)
    hit = np.nonzero(norms >= radius)[0]
    if len(hit) == 0:
        return BoundaryCheck(False)
    return BoundaryCheck(True, float(z.mesh.times[hit[0]]))
