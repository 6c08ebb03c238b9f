"""Constants of the existence/uniqueness hypotheses and the inequality checks.

Constants may be declared analytically or estimated by sampling.  Sampled
Lipschitz constants are maxima over finitely many pairs, hence lower bounds of
the true constants; reports built from them carry :data:`CAVEAT`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import HistorySegment, Partition, SystemSpec
from .errors import DomainError

CAVEAT = (
    "WARNING: estimated constants are lower bounds of the true constants; "
    "declare analytic constants to obtain a certificate."
)

CHUNK = 64
KNOTS = 8
LOCAL_EPS = 1e-3
ZERO_TOL = 1e-12


# ------------------------------------------------------------------ envelopes

class Envelope:
    """Nondecreasing piecewise-linear table in one variable.

    Below the first node the first value is used; past the last node the
    final slope is continued.
    """

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.maximum.accumulate(np.maximum(np.asarray(values, dtype=float), 0.0))

    def __call__(self, u: float) -> float:
        g, v = self.grid, self.values
        if len(g) == 1 or u <= g[-1]:
            return float(np.interp(u, g, v))
        slope = (v[-1] - v[-2]) / (g[-1] - g[-2])
        return float(v[-1] + slope * (u - g[-1]))


class Envelope2:
    """Nondecreasing bilinear table in two variables, same extension rule."""

    def __init__(self, grid, table):
        self.grid = np.asarray(grid, dtype=float)
        t = np.maximum(np.asarray(table, dtype=float), 0.0)
        t = np.maximum.accumulate(np.maximum.accumulate(t, axis=0), axis=1)
        self.table = t

    def __call__(self, u: float, v: float) -> float:
        rows = [Envelope(self.grid, self.table[:, j])(u) for j in range(len(self.grid))]
        return Envelope(self.grid, rows)(v)


# ------------------------------------------------------------------ constants

@dataclass
class ConstantSet:
    M: float
    L: float
    N_q: float
    q: int
    K: Callable[[float, float], float]
    Psi: Callable[[float], float]
    source: dict = field(default_factory=dict)
    zero_residual: float = 0.0

    @property
    def estimated(self) -> list[str]:
        return sorted(k for k, v in self.source.items() if v == "estimated")


@dataclass
class Estimate:
    """A sampled constant: ``value`` plus the largest ``||map(0)||`` seen."""

    value: float
    zero_residual: float = 0.0
    samples: int = 0

    def __float__(self):
        return float(self.value)


def _ball(rng, shape, n, radius):
    """Uniform points in the Euclidean n-ball; ``shape`` leading dims."""
    d = rng.standard_normal(shape + (n,))
    d /= np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)
    rad = radius * rng.random(shape + (1,)) ** (1.0 / n)
    return d * rad


def _chunks(samples: int, seed: int, *tag):
    """Yield ``(rng, count)`` per chunk; chunk k's draws never depend on ``samples``."""
    done = 0
    k = 0
    while done < samples:
        yield np.random.default_rng([int(seed), *tag, k]), min(CHUNK, samples - done)
        done += CHUNK
        k += 1


def estimate_lipschitz_g(spec: SystemSpec, samples: int = 10_000, radius: float = 1.0, seed: int = 0) -> Estimate:
    """Largest sampled ``||g(y)(t) - g(z)(t)|| / sum_j ||y_j(t) - z_j(t)||``.

    Histories are piecewise linear with 8 knots uniform in the ball of the
    given radius.  Every other pair is a small perturbation of a common
    direction shared by all q inputs, which is where additive maps are worst.
    """
    p = spec.partition
    q, n, r = p.q, spec.n, p.r
    if q == 0:
        raise DomainError("no non-local term (q = 0)")
    knots = np.linspace(-r, 0.0, KNOTS)
    ts = np.linspace(-r, 0.0, 2 * KNOTS - 1)
    zero = [HistorySegment.from_knots(knots, np.zeros((KNOTS, n))) for _ in range(q)]
    zres = float(np.max(np.linalg.norm(np.asarray(spec.g(zero)(ts)).reshape(len(ts), n), axis=1)))
    best = 0.0
    for rng, count in _chunks(samples, seed, 1):
        Y = _ball(rng, (CHUNK, q, KNOTS), n, radius)
        Z = _ball(rng, (CHUNK, q, KNOTS), n, radius)
        D = _ball(rng, (CHUNK, 1, KNOTS), n, 1.0)
        a = rng.random((CHUNK, q, 1, 1)) + 0.1
        for k in range(count):
            y, z = Y[k], (Z[k] if k % 2 == 0 else Y[k] + LOCAL_EPS * radius * a[k] * D[k])
            gy = np.asarray(spec.g([HistorySegment.from_knots(knots, v) for v in y])(ts)).reshape(len(ts), n)
            gz = np.asarray(spec.g([HistorySegment.from_knots(knots, v) for v in z])(ts)).reshape(len(ts), n)
            # histories are linear between knots, ts contains the knots and midpoints
            yt = np.array([HistorySegment.from_knots(knots, v)(ts) for v in y])
            zt = np.array([HistorySegment.from_knots(knots, v)(ts) for v in z])
            den = np.linalg.norm(yt - zt, axis=2).sum(axis=0)
            num = np.linalg.norm(gy - gz, axis=1)
            ok = den > 1e-300
            if np.any(ok):
                best = max(best, float(np.max(num[ok] / den[ok])))
    return Estimate(best, zres, samples)


def estimate_lipschitz_impulses(spec: SystemSpec, samples: int = 10_000, radius: float = 1.0, seed: int = 0) -> Estimate:
    """Largest sampled ``||G_i(t, x) - G_i(t, y)|| / ||x - y||`` over all impulses."""
    p = spec.partition
    n = spec.n
    if p.N == 0:
        raise DomainError("no impulses (N = 0)")
    best = 0.0
    zres = 0.0
    for i, ti, si in p.impulse_intervals():
        G = spec.G[i - 1]
        for t in np.linspace(ti, si, 5)[1:] if si > ti else [si]:
            zres = max(zres, float(np.linalg.norm(np.asarray(G(float(t), np.zeros(n)), dtype=float))))
        for rng, count in _chunks(samples, seed, 2, i):
            T = si - (si - ti) * rng.random(CHUNK)
            X = _ball(rng, (CHUNK,), n, radius)
            Y = _ball(rng, (CHUNK,), n, radius)
            D = _ball(rng, (CHUNK,), n, 1.0)
            for k in range(count):
                x = X[k]
                y = Y[k] if k % 2 == 0 else x + LOCAL_EPS * radius * D[k]
                den = np.linalg.norm(x - y)
                if den > 1e-300:
                    gx = np.asarray(G(float(T[k]), x), dtype=float)
                    gy = np.asarray(G(float(T[k]), y), dtype=float)
                    best = max(best, float(np.linalg.norm(gx - gy) / den))
    return Estimate(best, zres, samples)


@dataclass
class KPsiTables:
    grid: np.ndarray
    K_table: np.ndarray
    Psi_table: np.ndarray

    @property
    def K(self) -> Envelope2:
        return Envelope2(self.grid, self.K_table)

    @property
    def Psi(self) -> Envelope:
        return Envelope(self.grid, self.Psi_table)


def estimate_K_Psi(spec: SystemSpec, samples: int = 2000, radius_grid=None, seed: int = 0) -> KPsiTables:
    """Tabulate sampled envelopes of ``f``.

    For each radius u a bank of random histories (norm <= u) is drawn together
    with times uniform in ``[0, tau]``.  ``Psi(u)`` is the largest ``||f||`` on
    the bank; ``K(u, v)`` the largest difference quotient between equally
    indexed members of the u- and v-banks, plus nearby pairs inside the
    smaller ball.  Tables are made nondecreasing by running maxima.
    """
    p = spec.partition
    n, r = spec.n, p.r
    grid = np.linspace(0.125, 1.0, 8) if radius_grid is None else np.asarray(radius_grid, dtype=float)
    knots = np.linspace(-r, 0.0, KNOTS)
    m = len(grid)
    P, Pl, F, Fl = [], [], [], []
    for a, u in enumerate(grid):
        Pa, Pla, Fa, Fla, Ta = [], [], [], [], []
        for rng, count in _chunks(samples, seed, 3):
            base = _ball(rng, (CHUNK, KNOTS), n, 1.0)
            other = _ball(rng, (CHUNK, KNOTS), n, 1.0)
            tt = p.tau * rng.random(CHUNK)
            # radius scaling keeps bank members paired across radii
            Pa.append(u * base[:count])
            Pla.append(u * ((1 - LOCAL_EPS) * base[:count] + LOCAL_EPS * other[:count]))
            Ta.append(tt[:count])
        Pa, Pla, Ta = np.concatenate(Pa), np.concatenate(Pla), np.concatenate(Ta)
        for k in range(len(Pa)):
            Fa.append(np.asarray(spec.f(float(Ta[k]), HistorySegment.from_knots(knots, Pa[k])), dtype=float).reshape(n))
            Fla.append(np.asarray(spec.f(float(Ta[k]), HistorySegment.from_knots(knots, Pla[k])), dtype=float).reshape(n))
        P.append(Pa)
        Pl.append(Pla)
        F.append(np.array(Fa))
        Fl.append(np.array(Fla))
    psi = np.array([max(np.max(np.linalg.norm(F[a], axis=1)), np.max(np.linalg.norm(Fl[a], axis=1))) for a in range(m)])
    K = np.zeros((m, m))
    local = []
    for a in range(m):
        den = np.max(np.linalg.norm(P[a] - Pl[a], axis=2), axis=1)
        num = np.linalg.norm(F[a] - Fl[a], axis=1)
        ok = den > 1e-300
        local.append(float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0)
    for a in range(m):
        for b in range(m):
            den = np.max(np.linalg.norm(P[a] - P[b], axis=2), axis=1)
            num = np.linalg.norm(F[a] - F[b], axis=1)
            ok = den > 1e-300
            glob = float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0
            K[a, b] = max(glob, local[min(a, b)])
    env = Envelope2(grid, K)
    return KPsiTables(grid, env.table, Envelope(grid, psi).values)


def structural_residual(spec: SystemSpec) -> float:
    """Largest ``||g(0)(t)||`` / ``||G_i(t, 0)||`` over a few sample times."""
    p = spec.partition
    n = spec.n
    out = 0.0
    if p.q:
        ts = np.linspace(-p.r, 0.0, 9)
        zero = [HistorySegment.from_knots([-p.r, 0.0], np.zeros((2, n))) for _ in range(p.q)]
        out = float(np.max(np.linalg.norm(np.asarray(spec.g(zero)(ts)).reshape(len(ts), n), axis=1)))
    for i, ti, si in p.impulse_intervals():
        for t in np.linspace(ti, si, 5):
            out = max(out, float(np.linalg.norm(np.asarray(spec.G[i - 1](float(t), np.zeros(n)), dtype=float))))
    return out


# --------------------------------------------------------------------- checks

@dataclass
class Inequality:
    lhs: float
    rhs: float
    strict: bool

    @property
    def passed(self) -> bool:
        return bool(self.lhs < self.rhs) if self.strict else bool(self.lhs <= self.rhs)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "relation": "<" if self.strict else "<=", "pass": self.passed}


CHECK_NAMES = ("h1_i", "h1_ii", "h3_i", "h3_ii", "h3_iii", "h4_i", "h4_ii")
H3_NAMES = ("h3_i", "h3_ii", "h3_iii")
H4_NAMES = ("h4_i", "h4_ii")


@dataclass
class HypothesisReport:
    constants: ConstantSet
    rho: float
    phi_tilde_norm: float
    checks: dict

    def __getattr__(self, name):
        checks = self.__dict__.get("checks", {})
        if name in checks:
            return checks[name]
        raise AttributeError(name)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failing(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def summary(self) -> str:
        c = self.constants
        lines = [
            f"M = {c.M:.6g}, L = {c.L:.6g}, N_q = {c.N_q:.6g}, q = {c.q}",
            f"||phi_tilde|| = {self.phi_tilde_norm:.6g}, rho = {self.rho:.6g}",
        ]
        for k, ineq in self.checks.items():
            rel = "<" if ineq.strict else "<="
            lines.append(f"{k:7s} {ineq.lhs:.6g} {rel} {ineq.rhs:.6g}  {'pass' if ineq.passed else 'FAIL'}")
        lines.append(f"overall: {'pass' if self.overall else 'FAIL'}")
        if c.estimated:
            lines.append(CAVEAT)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        c = self.constants
        big = self.phi_tilde_norm + self.rho
        return {
            "constants": {
                "M": c.M, "L": c.L, "N_q": c.N_q, "q": c.q,
                "K_at_ball": c.K(big, big), "Psi_at_ball": c.Psi(big),
                "source": dict(c.source), "zero_residual": c.zero_residual,
            },
            "rho": self.rho,
            "phi_tilde_norm": self.phi_tilde_norm,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "overall": self.overall,
            "estimated": c.estimated,
            "caveat": CAVEAT if c.estimated else None,
            "summary": self.summary(),
        }


def _inequalities(c: ConstantSet, tau: float, phi_norm: float, rho: float, alpha_norm: float, beta_norm: float) -> dict:
    big = phi_norm + rho
    psi = c.Psi(big)
    k = c.K(big, big)
    return {
        "h1_i": Inequality(c.zero_residual, ZERO_TOL, strict=False),
        "h1_ii": Inequality(c.L + c.N_q * c.q, 0.5, strict=True),
        "h3_i": Inequality(c.M * c.N_q * c.q * big + c.M * tau * psi, rho, strict=False),
        "h3_ii": Inequality(c.M * c.L * big + alpha_norm + c.M * tau * psi, rho, strict=False),
        "h3_iii": Inequality(c.L * big + beta_norm, rho, strict=False),
        "h4_i": Inequality(c.M * c.N_q * c.q + c.M * tau * k, 1.0, strict=True),
        "h4_ii": Inequality(c.M * c.L + c.M * tau * k, 1.0, strict=True),
    }


def _norm(v) -> float:
    return 0.0 if v is None else float(np.linalg.norm(np.atleast_1d(np.asarray(v, dtype=float))))


def check_hypotheses(constants: ConstantSet, partition: Partition, phi_tilde_norm: float, rho: float,
                     alpha=None, beta=None) -> HypothesisReport:
    """Evaluate every inequality literally at the given ``rho``."""
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")
    checks = _inequalities(constants, partition.tau, phi_tilde_norm, rho, _norm(alpha), _norm(beta))
    return HypothesisReport(constants, float(rho), float(phi_tilde_norm), checks)


@dataclass
class RhoSearch:
    feasible: bool
    rho: float | None
    binding: str | None
    resolution: float


def find_rho(constants: ConstantSet, partition: Partition, phi_tilde_norm: float, alpha=None, beta=None,
             rho_max: float = 100.0, include_h4: bool = False, points: int = 400) -> RhoSearch:
    """Smallest rho in ``(0, rho_max]`` satisfying the H3 (and optionally H4) inequalities.

    A logarithmic scan from ``rho_max * 1e-8`` locates the first feasible
    point, then bisection narrows the boundary to ``rho_max * 1e-12``.
    """
    if not rho_max > 0:
        raise DomainError(f"rho_max must be positive, got {rho_max}")
    names = H3_NAMES + (H4_NAMES if include_h4 else ())
    an, bn = _norm(alpha), _norm(beta)
    resolution = rho_max * 1e-12

    def fails(rho):
        ineq = _inequalities(constants, partition.tau, phi_tilde_norm, rho, an, bn)
        return [k for k in names if not ineq[k].passed]

    scan = np.geomspace(rho_max * 1e-8, rho_max, points)
    results = [fails(x) for x in scan]
    first = next((k for k, f in enumerate(results) if not f), None)
    if first is None:
        counts = {k: sum(k in f for f in results) for k in names}
        always = [k for k in names if counts[k] == len(scan)]
        binding = always[0] if always else max(names, key=lambda k: counts[k])
        return RhoSearch(False, None, binding, resolution)
    if first == 0:
        return RhoSearch(True, float(scan[0]), None, resolution)
    lo, hi = float(scan[first - 1]), float(scan[first])
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if fails(mid):
            lo = mid
        else:
            hi = mid
    return RhoSearch(True, hi, None, resolution)
