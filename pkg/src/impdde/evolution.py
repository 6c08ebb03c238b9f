"""Fundamental matrix and evolution operator of the linear part ``z' = A(t) z``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mesh
from .errors import DomainError, NumericError

SAFETY = 1.05
MAX_PAIR_NODES = 1024


@dataclass(frozen=True)
class EvolutionCache:
    """Sampled ``Phi`` and ``Phi^{-1}`` on a grid over ``[t0, t1]`` plus the bound ``M``.

    ``Phi(t0) = PhiInv(t0) = I``.  When built from a :class:`Mesh`, ``mesh`` is
    kept so operators can map mesh nodes to cache rows.
    """

    grid: np.ndarray
    Phi: np.ndarray
    PhiInv: np.ndarray
    M: float
    mesh: Mesh | None = None

    @property
    def n(self) -> int:
        return self.Phi.shape[1]

    def rows(self, times: np.ndarray) -> np.ndarray:
        """Row index of each time; every time must be a grid node."""
        k = np.clip(np.searchsorted(self.grid, times), 0, len(self.grid) - 1)
        if not np.all(self.grid[k] == times):
            raise DomainError("times are not nodes of the evolution grid")
        return k

    def _interp(self, arr: np.ndarray, t: float) -> np.ndarray:
        g = self.grid
        tol = 1e-12 * max(1.0, abs(g[-1]))
        if not (g[0] - tol <= t <= g[-1] + tol):
            raise DomainError(f"time {t} outside [{g[0]}, {g[-1]}]")
        t = min(max(t, g[0]), g[-1])
        j = int(np.clip(np.searchsorted(g, t, side="right") - 1, 0, len(g) - 2))
        w = (t - g[j]) / (g[j + 1] - g[j])
        return (1.0 - w) * arr[j] + w * arr[j + 1]

    def phi(self, t: float) -> np.ndarray:
        return self._interp(self.Phi, t)

    def phi_inv(self, t: float) -> np.ndarray:
        return self._interp(self.PhiInv, t)


def _rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + h / 2, y + h / 2 * k1)
    k3 = rhs(t + h / 2, y + h / 2 * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _matrix(A, t, n=None):
    a = np.asarray(A(t), dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entry in A", t)
    return a


def build_fundamental(A, grid, safety: float = SAFETY, max_pair_nodes: int = MAX_PAIR_NODES) -> EvolutionCache:
    """Integrate ``Phi' = A Phi`` and ``Psi' = -Psi A`` from the identity with RK4.

    ``grid`` is a strictly increasing array, or a :class:`Mesh` (its nodes in
    ``[0, end]`` are used).  ``Psi`` is the inverse path, so no matrix is ever
    inverted.  ``M`` is ``safety`` times the largest ``||Phi(t) Psi(s)||_2``
    over node pairs ``s <= t`` (on at most ``max_pair_nodes`` evenly strided
    nodes, end points included).
    """
    mesh = None
    if isinstance(grid, Mesh):
        mesh = grid
        grid = np.unique(mesh.times[mesh.times >= 0.0])
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("evolution grid must be strictly increasing with at least two nodes")
    a0 = _matrix(A, grid[0])
    n = a0.shape[0]
    Phi = np.empty((len(grid), n, n))
    Psi = np.empty((len(grid), n, n))
    Phi[0] = Psi[0] = np.eye(n)

    def fwd(t, y):
        return _matrix(A, t) @ y

    def adj(t, y):
        return -y @ _matrix(A, t)

    for k in range(len(grid) - 1):
        h = grid[k + 1] - grid[k]
        Phi[k + 1] = _rk4_step(fwd, grid[k], Phi[k], h)
        Psi[k + 1] = _rk4_step(adj, grid[k], Psi[k], h)
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(Psi))):
        raise NumericError("fundamental matrix overflowed")
    M = safety * max(1.0, _max_pair_norm(Phi, Psi, max_pair_nodes))
    Phi.flags.writeable = False
    Psi.flags.writeable = False
    return EvolutionCache(grid, Phi, Psi, float(M), mesh)


def _max_pair_norm(Phi, Psi, max_nodes):
    m = len(Phi)
    idx = np.arange(m) if m <= max_nodes else np.unique(np.linspace(0, m - 1, max_nodes).round().astype(int))
    P, Q = Phi[idx], Psi[idx]
    best = 0.0
    n = P.shape[1]
    chunk = max(1, 2_000_000 // (len(idx) * n * n))
    for i0 in range(0, len(idx), chunk):
        rows = P[i0:i0 + chunk]
        # X[a, b] = Phi(t_a) Psi(s_b); pairs with s_b > t_a are masked out
        X = np.einsum("aij,bjk->abik", rows, Q)
        gram = np.einsum("abji,abjk->abik", X, X)
        sig2 = np.linalg.eigvalsh(gram)[..., -1]
        a = np.arange(i0, i0 + len(rows))[:, None]
        b = np.arange(len(idx))[None, :]
        sig2 = np.where(b <= a, sig2, 0.0)
        best = max(best, float(np.max(sig2)))
    return float(np.sqrt(best))


def evolution_op(cache: EvolutionCache, t: float, s: float) -> np.ndarray:
    """``U(t, s) = Phi(t) Phi(s)^{-1}`` with linear interpolation between nodes."""
    return cache.phi(t) @ cache.phi_inv(s)


def norm_bound(cache: EvolutionCache) -> float:
    return cache.M


def build_cache(spec, mesh: Mesh) -> EvolutionCache:
    """Evolution cache on the non-negative nodes of ``mesh``."""
    return build_fundamental(spec.A, mesh)
