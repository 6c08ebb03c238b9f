"""Problem data, the time mesh, and discretized piecewise-continuous trajectories.

A trajectory lives on ``[-r, tau]`` and is stored segment by segment.  The
segments are the intervals on which the system has a single law:

* ``history``  -- ``[-r, 0]`` (split further at jumps of the initial function)
* ``ode``      -- ``(s_i, t_{i+1}]``, i = 0..N
* ``impulse``  -- ``(t_i, s_i]``, i = 1..N (omitted when ``t_i == s_i``)

Every segment keeps its own nodes, including both end points, so a time shared
by two neighbouring segments carries two values: the left limit (end of the
earlier segment) and the right limit (start of the later one).  The value *at*
a breakpoint is the left one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError

HISTORY = "history"
ODE = "ode"
IMPULSE = "impulse"

LEFT = "left"
RIGHT = "right"

DEFAULT_NODES = 2000

# relative tolerance used to snap query times onto breakpoints
_SNAP = 1e-12


@dataclass(frozen=True)
class Partition:
    """Delay, horizon, impulse intervals and non-local sampling times."""

    r: float
    tau: float
    impulses: tuple[tuple[float, float], ...] = ()
    theta: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(
            self, "impulses", tuple((float(t), float(s)) for t, s in self.impulses)
        )
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))

    @property
    def N(self) -> int:
        return len(self.impulses)

    @property
    def q(self) -> int:
        return len(self.theta)

    def t(self, i: int) -> float:
        """Impulse start ``t_i`` with ``t_0 = 0`` and ``t_{N+1} = tau``."""
        if i == 0:
            return 0.0
        if i == self.N + 1:
            return self.tau
        return self.impulses[i - 1][0]

    def s(self, i: int) -> float:
        """Impulse end ``s_i`` with ``s_0 = 0``."""
        return 0.0 if i == 0 else self.impulses[i - 1][1]

    def ode_intervals(self) -> list[tuple[int, float, float]]:
        return [(i, self.s(i), self.t(i + 1)) for i in range(self.N + 1)]

    def impulse_intervals(self) -> list[tuple[int, float, float]]:
        return [(i, self.t(i), self.s(i)) for i in range(1, self.N + 1)]

    def violations(self) -> list["Violation"]:
        out = []
        if not self.r > 0:
            out.append(Violation("r", f"delay r must be positive, got {self.r}"))
        if not self.tau > 0:
            out.append(Violation("tau", f"horizon tau must be positive, got {self.tau}"))
        prev_s = 0.0
        for k, (t, s) in enumerate(self.impulses):
            i = k + 1
            where = f"impulses[{k}]"
            if k == 0 and not t > 0:
                out.append(Violation(where, f"ordering violation at i={i}: t_1={t} must be > 0"))
            if k > 0 and not t > prev_s:
                out.append(
                    Violation(where, f"ordering violation at i={i}: t_{i}={t} must exceed s_{i-1}={prev_s}")
                )
            if not t <= s:
                out.append(Violation(where, f"ordering violation at i={i}: t_{i}={t} > s_{i}={s}"))
            prev_s = s
        if self.impulses and not self.impulses[-1][1] < self.tau:
            out.append(
                Violation(f"impulses[{self.N - 1}]", f"s_{self.N}={self.impulses[-1][1]} must be < tau={self.tau}")
            )
        for j, th in enumerate(self.theta):
            if not 0 < th < self.tau:
                out.append(Violation(f"theta[{j}]", f"theta out of (0,tau): theta_{j+1}={th}, tau={self.tau}"))
            if j > 0 and not th > self.theta[j - 1]:
                out.append(Violation(f"theta[{j}]", f"theta must be strictly increasing at j={j+1}"))
        return out


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


@dataclass(frozen=True)
class SystemSpec:
    """A full problem instance.

    ``A(t)`` returns an ``n x n`` array, ``f(t, h)`` takes a :class:`HistorySegment`,
    ``G[i-1](t, x)`` is the i-th impulse map and ``g(windows)`` receives the q
    translated histories and returns a callable on ``[-r, 0]``.

    ``phi_breaks`` lists the jump points of ``phi`` inside ``(-r, 0)`` and
    ``f_lags`` the lags at which ``f`` reads its history; both are only used
    to place mesh breakpoints where the right-hand side jumps.  ``f_lags=None``
    means ``(r,)``.
    """

    n: int
    partition: Partition
    A: Callable[[float], np.ndarray]
    f: Callable[[float, "HistorySegment"], np.ndarray]
    phi: Callable[[float], np.ndarray]
    G: tuple = ()
    g: Callable | None = None
    phi_breaks: tuple[float, ...] = ()
    f_lags: tuple[float, ...] | None = None
    declared_constants: Mapping | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "G", tuple(self.G))
        object.__setattr__(self, "phi_breaks", tuple(sorted(float(p) for p in self.phi_breaks)))
        if self.f_lags is not None:
            object.__setattr__(self, "f_lags", tuple(float(d) for d in self.f_lags))

    @property
    def lags(self) -> tuple[float, ...]:
        return (self.partition.r,) if self.f_lags is None else self.f_lags

    def phi_value(self, t: float, side: str = LEFT) -> np.ndarray:
        """``phi(t)``, or its right limit when ``t`` is a declared jump point."""
        if side == RIGHT and t in self.phi_breaks:
            t = t + 1e-10 * max(1.0, self.partition.r)
        return np.asarray(self.phi(t), dtype=float).reshape(self.n)


def validate_spec(spec: SystemSpec) -> list[Violation]:
    """Return every violated structural constraint; an empty list means valid."""
    p = spec.partition
    out = p.violations()
    if spec.n < 1:
        out.append(Violation("n", f"state dimension must be >= 1, got {spec.n}"))
    if len(spec.G) != p.N:
        out.append(Violation("G", f"expected {p.N} impulse maps, got {len(spec.G)}"))
    if p.q >= 1 and spec.g is None:
        out.append(Violation("g", "theta is nonempty but no non-local map g is given"))
    if p.q == 0 and spec.g is not None:
        out.append(Violation("g", "non-local map g given but theta is empty"))
    for k, b in enumerate(spec.phi_breaks):
        if not -p.r < b < 0:
            out.append(Violation(f"phi_breaks[{k}]", f"jump point {b} outside (-r, 0)"))
    for k, d in enumerate(spec.lags):
        if not 0 <= d <= p.r:
            out.append(Violation(f"f_lags[{k}]", f"lag {d} outside [0, r]"))
    return out


@dataclass(frozen=True)
class Segment:
    kind: str
    index: int
    start: float
    end: float
    lo: int
    hi: int

    def __len__(self):
        return self.hi - self.lo


def _nodes(a: float, b: float, step: float, forced: Sequence[float]) -> np.ndarray:
    cuts = [a] + [x for x in sorted(forced) if a < x < b] + [b]
    parts = []
    for c0, c1 in zip(cuts[:-1], cuts[1:]):
        k = max(1, math.ceil((c1 - c0) / step - 1e-9))
        pts = np.linspace(c0, c1, k + 1)
        pts[-1] = c1
        parts.append(pts if not parts else pts[1:])
    return np.concatenate(parts)


def _near(x: float, others, scale: float) -> bool:
    return any(abs(x - o) <= _SNAP * scale for o in others)


class Mesh:
    """Segment-aligned time nodes on ``[-r, T]``."""

    def __init__(self, partition: Partition, step: float, pieces, jumps=(), lags=()):
        self.partition = partition
        self.step = float(step)
        self.jumps = tuple(jumps)
        self.lags = tuple(lags)
        segs = []
        chunks = []
        lo = 0
        for kind, index, nodes in pieces:
            nodes = np.asarray(nodes, dtype=float)
            segs.append(Segment(kind, index, float(nodes[0]), float(nodes[-1]), lo, lo + len(nodes)))
            chunks.append(nodes)
            lo += len(nodes)
        self.segments = tuple(segs)
        self.times = np.concatenate(chunks)
        self.times.flags.writeable = False
        self.ends = np.array([s.end for s in segs])
        self._scale = max(1.0, abs(partition.r), abs(self.end))

    @classmethod
    def build(cls, partition: Partition, step: float | None = None, *, phi_breaks=(), lags=None) -> "Mesh":
        """Uniform-step nodes inside every segment.

        Every breakpoint and every non-local time ``theta_j`` is a node.  ODE
        segments are additionally split where a delayed read ``t - d`` crosses a
        jump of the trajectory, so the right-hand side is smooth on each piece.
        """
        r, tau = partition.r, partition.tau
        step = (tau + r) / DEFAULT_NODES if step is None else float(step)
        if not step > 0:
            raise DomainError(f"grid step must be positive, got {step}")
        lags = (r,) if lags is None else tuple(lags)
        jumps = tuple(t for t, _ in partition.impulses) + tuple(phi_breaks)
        scale = max(1.0, r, tau)
        pieces = []
        hcuts = [-r] + [p for p in sorted(phi_breaks) if -r < p < 0] + [0.0]
        for a, b in zip(hcuts[:-1], hcuts[1:]):
            pieces.append((HISTORY, 0, _nodes(a, b, step, ())))
        intervals = [(a, b, ODE, i) for i, a, b in partition.ode_intervals()]
        intervals += [(a, b, IMPULSE, i) for i, a, b in partition.impulse_intervals()]
        for a, b, kind, i in sorted(intervals):
            if b <= a:
                continue
            if kind == IMPULSE:
                pieces.append((IMPULSE, i, _nodes(a, b, step, partition.theta)))
            else:
                pieces.extend(cls._ode_pieces(i, a, b, step, partition.theta, jumps, lags, scale))
        return cls(partition, step, pieces, jumps, lags)

    @staticmethod
    def _ode_pieces(i, a, b, step, forced, jumps, lags, scale):
        splits = []
        for j in jumps:
            for d in lags:
                x = j + d
                if d > 0 and a < x < b and not _near(x, [a, b] + splits, scale):
                    splits.append(x)
        cuts = [a] + sorted(splits) + [b]
        return [(ODE, i, _nodes(c0, c1, step, forced)) for c0, c1 in zip(cuts[:-1], cuts[1:])]

    @property
    def r(self) -> float:
        return self.partition.r

    @property
    def start(self) -> float:
        return -self.partition.r

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            len(self.times) == len(other.times)
            and np.array_equal(self.times, other.times)
            and [(s.kind, s.index, s.lo, s.hi) for s in self.segments]
            == [(s.kind, s.index, s.lo, s.hi) for s in other.segments]
        )

    def snap(self, t: np.ndarray) -> np.ndarray:
        """Move times within rounding distance of a breakpoint onto it."""
        k = np.clip(np.searchsorted(self.ends, t), 0, len(self.ends) - 1)
        cand = [self.ends[k], self.ends[np.maximum(k - 1, 0)]]
        out = t.copy()
        for c in cand:
            hit = np.abs(out - c) <= _SNAP * self._scale
            out[hit] = c[hit]
        return out

    def locate(self, t: np.ndarray, side: str = LEFT) -> np.ndarray:
        """Index of the segment holding each time for the requested side."""
        how = "left" if side == LEFT else "right"
        k = np.searchsorted(self.ends, t, side=how)
        return np.clip(k, 0, len(self.segments) - 1)

    def check_domain(self, t: np.ndarray) -> None:
        tol = _SNAP * self._scale
        if np.any(t < self.start - tol) or np.any(t > self.end + tol) or np.any(np.isnan(t)):
            bad = t[(t < self.start - tol) | (t > self.end + tol) | np.isnan(t)][0]
            raise DomainError(f"time {bad} outside [{self.start}, {self.end}]")

    def ode_groups(self) -> list[list[Segment]]:
        """Consecutive ODE pieces grouped by interval index."""
        groups: dict[int, list[Segment]] = {}
        for s in self.segments:
            if s.kind == ODE:
                groups.setdefault(s.index, []).append(s)
        return [groups[k] for k in sorted(groups)]

    def extended(self, T: float) -> "Mesh":
        """Mesh on ``[-r, T]``: this one plus ODE pieces on ``[end, T]``."""
        if not T > self.end:
            raise DomainError(f"extension end {T} must exceed {self.end}")
        p = self.partition
        part = Partition(p.r, T, p.impulses, p.theta)
        pieces = [(s.kind, s.index, self.times[s.lo:s.hi]) for s in self.segments]
        last = self.segments[-1]
        idx = last.index if last.kind == ODE else p.N
        pieces += self._ode_pieces(idx, self.end, T, self.step, (), self.jumps, self.lags, max(self._scale, T))
        return Mesh(part, self.step, pieces, self.jumps, self.lags)

    def truncated(self, t_end: float) -> "Mesh":
        """Mesh restricted to nodes at or before ``t_end``."""
        p = self.partition
        pieces = []
        for s in self.segments:
            nodes = self.times[s.lo:s.hi]
            nodes = nodes[nodes <= t_end]
            if len(nodes) >= 2:
                pieces.append((s.kind, s.index, nodes))
            if s.end >= t_end:
                break
        end = float(pieces[-1][2][-1])
        part = Partition(p.r, end, [(t, s) for t, s in p.impulses if s < end], [x for x in p.theta if x < end])
        return Mesh(part, self.step, pieces, self.jumps, self.lags)


class Trajectory:
    """Sampled element of the piecewise-continuous trajectory space.

    ``values[k]`` is the state at ``mesh.times[k]``; duplicated times are the
    two one-sided limits at a breakpoint.  Between nodes of the same segment
    the trajectory is linear.
    """

    __slots__ = ("mesh", "values")

    def __init__(self, mesh: Mesh, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(mesh):
            raise DomainError(f"expected {len(mesh)} node values, got {values.shape[0]}")
        values.flags.writeable = False
        self.mesh = mesh
        self.values = values

    @classmethod
    def from_function(cls, mesh: Mesh, fn: Callable, right: Callable | None = None) -> "Trajectory":
        """Sample ``fn`` at every node; ``right`` (if given) supplies segment-start values."""
        vals = []
        for s in mesh.segments:
            for k, t in enumerate(mesh.times[s.lo:s.hi]):
                use = right if (right is not None and k == 0) else fn
                vals.append(np.atleast_1d(np.asarray(use(float(t)), dtype=float)))
        return cls(mesh, np.array(vals))

    @classmethod
    def constant(cls, mesh: Mesh, c) -> "Trajectory":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(mesh, np.tile(c, (len(mesh), 1)))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.mesh.times

    def with_values(self, values) -> "Trajectory":
        return Trajectory(self.mesh, values)

    def segment_values(self, seg: Segment) -> np.ndarray:
        return self.values[seg.lo:seg.hi]

    def norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def eval(self, t, side: str = LEFT) -> np.ndarray:
        """Evaluate at scalar ``t`` (returns ``(n,)``) or an array (``(m, n)``)."""
        scalar = np.ndim(t) == 0
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        mesh = self.mesh
        mesh.check_domain(tt)
        tt = mesh.snap(np.clip(tt, mesh.start, mesh.end))
        seg = mesh.locate(tt, side)
        out = np.empty((len(tt), self.n))
        for k in np.unique(seg):
            sel = seg == k
            s = mesh.segments[k]
            ts = mesh.times[s.lo:s.hi]
            vs = self.values[s.lo:s.hi]
            x = tt[sel]
            j = np.clip(np.searchsorted(ts, x, side="right") - 1, 0, len(ts) - 2)
            w = ((x - ts[j]) / (ts[j + 1] - ts[j]))[:, None]
            out[sel] = (1.0 - w) * vs[j] + w * vs[j + 1]
        return out[0] if scalar else out

    __call__ = eval

    def __repr__(self):
        return f"Trajectory(n={self.n}, nodes={len(self.mesh)}, span=[{self.mesh.start}, {self.mesh.end}])"


class HistorySegment:
    """A function on ``[-r, 0]`` with values in R^n.

    ``fn`` maps an array of ``s`` values to an ``(m, n)`` array.  ``probe``
    returns the sample values used for the sup-norm.
    """

    __slots__ = ("_fn", "r", "n", "_probe")

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], r: float, n: int, probe: Callable | None = None):
        self._fn = fn
        self.r = float(r)
        self.n = int(n)
        self._probe = probe

    def __call__(self, s):
        scalar = np.ndim(s) == 0
        ss = np.atleast_1d(np.asarray(s, dtype=float))
        tol = _SNAP * max(1.0, self.r)
        if np.any(ss < -self.r - tol) or np.any(ss > tol):
            raise DomainError(f"history argument outside [-{self.r}, 0]")
        out = np.asarray(self._fn(np.clip(ss, -self.r, 0.0)), dtype=float).reshape(len(ss), self.n)
        return out[0] if scalar else out

    def norm(self) -> float:
        if self._probe is not None:
            vals = self._probe()
        else:
            vals = self(np.linspace(-self.r, 0.0, 201))
        return float(np.max(np.linalg.norm(vals, axis=1)))

    @classmethod
    def from_knots(cls, s, values) -> "HistorySegment":
        """Piecewise-linear history through ``(s_k, values_k)``; ``s`` spans ``[-r, 0]``."""
        s = np.asarray(s, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]

        def fn(x):
            j = np.clip(np.searchsorted(s, x, side="right") - 1, 0, len(s) - 2)
            w = ((x - s[j]) / (s[j + 1] - s[j]))[:, None]
            return (1.0 - w) * v[j] + w * v[j + 1]

        return cls(fn, -s[0], v.shape[1], probe=lambda: v)

    @classmethod
    def from_callable(cls, fn: Callable[[float], np.ndarray], r: float, n: int) -> "HistorySegment":
        """Wrap a pointwise callable ``s -> R^n``."""
        return cls(lambda x: np.array([np.asarray(fn(float(u)), dtype=float).reshape(n) for u in x]), r, n)


def eval_trajectory(z: Trajectory, t, side: str = LEFT) -> np.ndarray:
    return z.eval(t, side)


def translate(z: Trajectory, t: float, side: str = LEFT) -> HistorySegment:
    """The history window ``s -> z(t + s)`` on ``[-r, 0]``.

    ``side`` selects which one-sided value is read wherever ``t + s`` hits a
    breakpoint.
    """
    mesh = z.mesh
    if not (-_SNAP * mesh._scale <= t <= mesh.end + _SNAP * mesh._scale):
        raise DomainError(f"translation time {t} outside [0, {mesh.end}]")
    t = float(t)
    r = mesh.r

    def probe():
        times = mesh.times
        inside = (times > t - r) & (times < t)
        ends = z.eval(np.array([t - r, t]), side)
        return np.vstack([z.values[inside], ends])

    return HistorySegment(lambda s: z.eval(t + s, side), r, z.n, probe)


def sup_distance(z1: Trajectory, z2: Trajectory) -> float:
    """Largest Euclidean gap over all nodes of both grids, both sides at breakpoints."""
    m1, m2 = z1.mesh, z2.mesh
    if m1.same_as(m2):
        return float(np.max(np.linalg.norm(z1.values - z2.values, axis=1)))
    if abs(m1.start - m2.start) > _SNAP * m1._scale or abs(m1.end - m2.end) > _SNAP * m1._scale:
        raise DomainError(f"trajectories span [{m1.start}, {m1.end}] and [{m2.start}, {m2.end}]")
    pts = np.union1d(m1.times, m2.times)
    gap = 0.0
    for side in (LEFT, RIGHT):
        d = np.linalg.norm(z1.eval(pts, side) - z2.eval(pts, side), axis=1)
        gap = max(gap, float(np.max(d)))
    return gap


def build_mesh(spec: SystemSpec, step: float | None = None) -> Mesh:
    return Mesh.build(spec.partition, step, phi_breaks=spec.phi_breaks, lags=spec.lags)
