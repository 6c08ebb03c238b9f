import math

import numpy as np
import pytest

from impdde.core import Partition, SystemSpec, build_mesh
from impdde.evolution import build_cache
from impdde.hypotheses import ConstantSet
from impdde.operators import OperatorParams


def zero_A(n):
    Z = np.zeros((n, n))
    return lambda t: Z


def const_A(M):
    M = np.asarray(M, dtype=float)
    return lambda t: M


def scalar_spec(f=None, phi=1.0, r=1.0, tau=1.0, a=0.0, impulses=(), G=(), theta=(), g=None, f_lags=None, name="scalar"):
    part = Partition(r, tau, tuple(impulses), tuple(theta))
    fn = f if f is not None else (lambda t, h: np.zeros(1))
    ph = phi if callable(phi) else (lambda t, c=float(phi): np.array([c]))
    return SystemSpec(1, part, const_A([[a]]), fn, ph, tuple(G), g, (), f_lags, None, name)


def quad_spec(R=100.0, n=2, phi=0.5, tau=2.0, r=0.5, impulses=((0.8, 1.0),), theta=(0.3, 1.5)):
    """The quadratic-delay example: f = phi(-r)^2 / R, G_i = cos(s_i)/R sin(z), g = sum / R."""
    part = Partition(r, tau, tuple(impulses), tuple(theta))
    if n == 2:
        A = const_A([[0.0, 1.0], [-1.0, 0.0]])
    else:
        A = zero_A(n)

    def f(t, h):
        return h(-r) ** 2 / R

    def make_G(s):
        return lambda t, x: math.cos(s) / R * np.sin(np.asarray(x, dtype=float))

    G = tuple(make_G(s) for _, s in impulses)

    def g(windows):
        return lambda s: sum(w(s) for w in windows) / R

    phi_fn = phi if callable(phi) else (lambda t: np.full(n, float(phi)))
    L = max(abs(math.cos(s)) for _, s in impulses) / R if impulses else 0.0
    declared = {"L": L, "N_q": 1.0 / R}
    return SystemSpec(n, part, A, f, phi_fn, G, g if theta else None, (), (r,), declared, "quadratic")


def quad_constants(spec, cache, R=100.0):
    return ConstantSet(
        cache.M, spec.declared_constants["L"], 1.0 / R, spec.partition.q,
        lambda u, v: (u + v) / R, lambda x: x * x / R,
        {"L": "declared", "N_q": "declared", "K": "declared", "Psi": "declared"},
    )


@pytest.fixture(scope="session")
def quad_setup():
    spec = quad_spec()
    mesh = build_mesh(spec)
    cache = build_cache(spec, mesh)
    params = OperatorParams.zeros(2, rho=1.0)
    return spec, mesh, cache, params


@pytest.fixture(scope="session")
def quad_solution(quad_setup):
    from impdde.solver import SolveOptions, solve

    spec, mesh, cache, params = quad_setup
    z, diag = solve(spec, cache, params, SolveOptions(tol=1e-10))
    return z, diag


def rng_ball(rng, shape, n, radius):
    d = rng.standard_normal(shape + (n,))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * radius * rng.random(shape + (1,)) ** (1.0 / n)
