"""The operators J and F whose joint fixed point ``z = F(z, J(z))`` is the solution.

J integrates the variation-of-constants formula on every ODE interval and is
independent of its argument on the history and impulse intervals.  F keeps
J's output on ODE intervals and re-imposes the impulse law and the non-local
initial condition pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HISTORY, IMPULSE, LEFT, ODE, RIGHT, SystemSpec, Trajectory, sup_distance, translate
from .errors import NumericError
from .evolution import EvolutionCache


@dataclass(frozen=True)
class OperatorParams:
    """Free constants of the construction.

    ``eta`` is J's value on impulse intervals; ``alpha``/``beta`` are the
    plateaus of the reference trajectory on ODE/impulse intervals after the
    first impulse; ``rho`` is the radius of the ball around it.
    """

    eta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    rho: float = 1.0

    @classmethod
    def zeros(cls, n: int, rho: float = 1.0) -> "OperatorParams":
        z = np.zeros(n)
        return cls(z, z.copy(), z.copy(), rho)

    def __post_init__(self):
        for name in ("eta", "alpha", "beta"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")


def _check(v: np.ndarray, t: float, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite value of {what}", t)
    return v


def _vec(x, n: int, t: float, what: str) -> np.ndarray:
    return _check(np.asarray(x, dtype=float).reshape(n), t, what)


def nonlocal_term(spec: SystemSpec, z: Trajectory, s) -> np.ndarray:
    """``g(z_{theta_1}, ..., z_{theta_q})(s)`` for an array of ``s`` in ``[-r, 0]``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if spec.partition.q == 0:
        return np.zeros((len(s), spec.n))
    windows = [translate(z, th) for th in spec.partition.theta]
    gfun = spec.g(windows)
    out = np.asarray(gfun(s), dtype=float).reshape(len(s), spec.n)
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        raise NumericError("non-finite value of g", float(s[bad][0]))
    return out


def _history_values(spec: SystemSpec, mesh, z: Trajectory | None = None) -> dict:
    """phi on every history node, minus ``g(z_theta)`` when ``z`` is given."""
    out = {}
    for seg in mesh.segments:
        if seg.kind != HISTORY:
            continue
        ts = mesh.times[seg.lo:seg.hi]
        vals = np.array([
            spec.phi_value(float(t), RIGHT if k == 0 else LEFT) for k, t in enumerate(ts)
        ])
        if z is not None:
            vals = vals - nonlocal_term(spec, z, ts)
        out[seg] = _check(vals, float(ts[0]), "phi")
    return out


def phi_tilde(spec: SystemSpec, cache: EvolutionCache, params: OperatorParams, mesh=None) -> Trajectory:
    """Reference trajectory: ``phi`` on the history, ``U(t,0) phi(0)`` up to ``t_1``,
    ``alpha`` on later ODE intervals, ``beta`` on impulse intervals."""
    mesh = cache.mesh if mesh is None else mesh
    vals = np.empty((len(mesh), spec.n))
    z0 = spec.phi_value(0.0)
    for seg, v in _history_values(spec, mesh).items():
        vals[seg.lo:seg.hi] = v
    for seg in mesh.segments:
        sl = slice(seg.lo, seg.hi)
        if seg.kind == ODE and seg.index == 0:
            rows = cache.rows(mesh.times[sl])
            vals[sl] = cache.Phi[rows] @ z0
        elif seg.kind == ODE:
            vals[sl] = params.alpha
        elif seg.kind == IMPULSE:
            vals[sl] = params.beta
    return Trajectory(mesh, vals)


def _cumtrapz(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    dt = np.diff(t)[:, None]
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def rhs_values(spec: SystemSpec, y: Trajectory, seg) -> np.ndarray:
    """``f(t, y_t)`` on the nodes of one ODE piece, reading the piece's own side."""
    ts = y.mesh.times[seg.lo:seg.hi]
    out = np.empty((len(ts), spec.n))
    for k, t in enumerate(ts):
        window = translate(y, float(t), RIGHT if k == 0 else LEFT)
        out[k] = _vec(spec.f(float(t), window), spec.n, float(t), "f")
    return out


def apply_J(spec: SystemSpec, cache: EvolutionCache, params: OperatorParams, y: Trajectory) -> Trajectory:
    """Variation-of-constants map.

    On ``(s_i, t_{i+1}]`` the value is ``U(t, s_i) x_i + int_{s_i}^t U(t, s) f(s, y_s) ds``
    with ``x_0 = phi(0) - g(y_theta)(0)`` and ``x_i = G_i(s_i, y(s_i))``.  The
    integral is a composite trapezoid with ``U(t, s) = Phi(t) PhiInv(s)`` so the
    inner factor is accumulated once per interval.
    """
    mesh = y.mesh
    n = spec.n
    vals = np.empty((len(mesh), n))
    for seg, v in _history_values(spec, mesh).items():
        vals[seg.lo:seg.hi] = v
    for seg in mesh.segments:
        if seg.kind == IMPULSE:
            vals[seg.lo:seg.hi] = params.eta
    for group in mesh.ode_groups():
        i = group[0].index
        a = group[0].start
        if i == 0:
            x0 = spec.phi_value(0.0) - nonlocal_term(spec, y, [0.0])[0]
        else:
            x0 = _vec(spec.G[i - 1](a, y.eval(a, LEFT)), n, a, f"G_{i}")
        base = cache.PhiInv[cache.rows(np.array([a]))[0]] @ x0
        acc = np.zeros(n)
        for seg in group:
            ts = mesh.times[seg.lo:seg.hi]
            rows = cache.rows(ts)
            fv = rhs_values(spec, y, seg)
            integrand = np.einsum("kij,kj->ki", cache.PhiInv[rows], fv)
            cum = acc + _cumtrapz(ts, integrand)
            vals[seg.lo:seg.hi] = np.einsum("kij,kj->ki", cache.Phi[rows], base + cum)
            acc = cum[-1]
    if not np.all(np.isfinite(vals)):
        k = int(np.argmax(~np.all(np.isfinite(vals), axis=1)))
        raise NumericError("J produced a non-finite value", float(mesh.times[k]))
    return Trajectory(mesh, vals)


def apply_F(spec: SystemSpec, params: OperatorParams, z: Trajectory, y: Trajectory) -> Trajectory:
    """``y`` on ODE intervals, ``G_i(t, z(t))`` on impulse intervals,
    ``phi - g(z_theta)`` on the history."""
    mesh = z.mesh
    vals = np.array(y.values, dtype=float)
    for seg, v in _history_values(spec, mesh, z).items():
        vals[seg.lo:seg.hi] = v
    for seg in mesh.segments:
        if seg.kind != IMPULSE:
            continue
        G = spec.G[seg.index - 1]
        for k in range(seg.lo, seg.hi):
            t = float(mesh.times[k])
            vals[k] = _vec(G(t, z.values[k]), spec.n, t, f"G_{seg.index}")
    return Trajectory(mesh, vals)


def characterization_residual(spec: SystemSpec, cache: EvolutionCache, params: OperatorParams, z: Trajectory) -> float:
    """``||z - F(z, J(z))||``: zero exactly for solutions of the system."""
    return sup_distance(z, apply_F(spec, params, z, apply_J(spec, cache, params, z)))
