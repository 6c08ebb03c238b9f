"""Global Picard iteration for ``z = F(z, J(z))`` and a posteriori checks."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import HISTORY, IMPULSE, LEFT, ODE, RIGHT, SystemSpec, Trajectory, sup_distance, translate
from .errors import NumericError
from .evolution import EvolutionCache
from .operators import OperatorParams, apply_F, apply_J, characterization_residual, nonlocal_term, phi_tilde

log = logging.getLogger(__name__)

INITIAL_CHOICES = ("phi_tilde", "zero")


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iters: int = 200
    initial: object = "phi_tilde"  # "phi_tilde", "zero" or a Trajectory

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not isinstance(self.initial, Trajectory) and self.initial not in INITIAL_CHOICES:
            raise ValueError(f"unknown initial iterate {self.initial!r}")


@dataclass
class SolveDiagnostics:
    iterations: int
    residual_history: list[float]
    final_residual: float
    empirical_contraction: float
    converged: bool
    characterization_residual: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": list(self.residual_history),
            "final_residual": self.final_residual,
            "empirical_contraction": self.empirical_contraction,
            "converged": self.converged,
            "characterization_residual": self.characterization_residual,
        }


def picard_step(spec: SystemSpec, cache: EvolutionCache, params: OperatorParams, z: Trajectory) -> Trajectory:
    return apply_F(spec, params, z, apply_J(spec, cache, params, z))


def empirical_contraction(history) -> float:
    """Geometric mean of successive ratios ``d_{k+1} / d_k`` over positive entries."""
    d = [x for x in history if x > 0]
    if len(d) < 2:
        return 0.0
    return float((d[-1] / d[0]) ** (1.0 / (len(d) - 1)))


def initial_iterate(spec, cache, params, initial) -> Trajectory:
    if isinstance(initial, Trajectory):
        return initial
    if initial == "zero":
        return Trajectory.constant(cache.mesh, np.zeros(spec.n))
    return phi_tilde(spec, cache, params)


def solve(spec: SystemSpec, cache: EvolutionCache, params: OperatorParams, opts: SolveOptions | None = None):
    """Iterate ``z_{k+1} = F(z_k, J(z_k))`` until successive iterates are within ``tol``.

    Returns ``(z, diagnostics)``.  ``converged`` additionally requires the
    independent residual ``||z - F(z, J(z))||`` to be below ``10 * tol``.
    Running out of iterations is reported, not raised.
    """
    opts = opts or SolveOptions()
    z = initial_iterate(spec, cache, params, opts.initial)
    history: list[float] = []
    met = False
    for k in range(int(opts.max_iters)):
        nxt = picard_step(spec, cache, params, z)
        if not nxt.is_finite():
            raise NumericError("Picard iterate blew up", None)
        d = sup_distance(nxt, z)
        history.append(d)
        log.debug("picard iteration %d: step %.3e", k + 1, d)
        z = nxt
        if d < opts.tol:
            met = True
            break
    res = characterization_residual(spec, cache, params, z)
    diag = SolveDiagnostics(
        iterations=len(history),
        residual_history=history,
        final_residual=history[-1],
        empirical_contraction=empirical_contraction(history),
        converged=bool(met and res < 10 * opts.tol),
        characterization_residual=res,
    )
    log.info("solve finished: %d iterations, last step %.3e, converged=%s", diag.iterations, diag.final_residual, diag.converged)
    return z, diag


@dataclass
class ProbeResult:
    max_distance: float
    solutions: list
    diagnostics: list
    failed: list[int] = field(default_factory=list)


def uniqueness_probe(spec, cache, params, opts: SolveOptions | None, starts) -> ProbeResult:
    """Solve from every start; report the widest spread among converged runs."""
    opts = opts or SolveOptions()
    sols, diags, failed = [], [], []
    for k, start in enumerate(starts):
        o = SolveOptions(opts.tol, opts.max_iters, start)
        z, d = solve(spec, cache, params, o)
        diags.append(d)
        if d.converged:
            sols.append(z)
        else:
            failed.append(k)
    dist = max((sup_distance(a, b) for a, b in itertools.combinations(sols, 2)), default=0.0)
    return ProbeResult(dist, sols, diags, failed)


@dataclass
class VerificationReport:
    ode_residual: float
    impulse_residual: float
    nonlocal_residual: float

    def to_dict(self) -> dict:
        return {
            "ode_residual": self.ode_residual,
            "impulse_residual": self.impulse_residual,
            "nonlocal_residual": self.nonlocal_residual,
        }


def verify_solution(spec: SystemSpec, cache: EvolutionCache, z: Trajectory) -> VerificationReport:
    """Check ``z`` against the original equations, independently of J and F.

    The ODE defect on each panel ``[t_k, t_{k+1}]`` is the centred difference
    quotient minus the mean of ``A z + f`` at the two ends.  Impulse and
    non-local defects are pointwise on their nodes.
    """
    mesh = z.mesh
    n = spec.n
    ode = imp = nonloc = 0.0
    for seg in mesh.segments:
        ts = mesh.times[seg.lo:seg.hi]
        zs = z.values[seg.lo:seg.hi]
        if seg.kind == ODE:
            rhs = np.empty_like(zs)
            for k, t in enumerate(ts):
                side = RIGHT if k == 0 else LEFT
                A = np.asarray(spec.A(float(t)), dtype=float).reshape(n, n)
                rhs[k] = A @ zs[k] + np.asarray(spec.f(float(t), translate(z, float(t), side)), dtype=float).reshape(n)
            dq = np.diff(zs, axis=0) / np.diff(ts)[:, None]
            defect = dq - 0.5 * (rhs[1:] + rhs[:-1])
            ode = max(ode, float(np.max(np.linalg.norm(defect, axis=1))))
        elif seg.kind == IMPULSE:
            G = spec.G[seg.index - 1]
            for t, x in zip(ts, zs):
                gap = x - np.asarray(G(float(t), x), dtype=float).reshape(n)
                imp = max(imp, float(np.linalg.norm(gap)))
        elif seg.kind == HISTORY:
            phi = np.array([spec.phi_value(float(t), RIGHT if k == 0 else LEFT) for k, t in enumerate(ts)])
            gap = zs - phi + nonlocal_term(spec, z, ts)
            nonloc = max(nonloc, float(np.max(np.linalg.norm(gap, axis=1))))
    return VerificationReport(ode, imp, nonloc)
