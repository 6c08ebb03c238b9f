import math

import numpy as np
import pytest

from conftest import scalar_spec
from impdde.core import Mesh, Partition, Trajectory, build_mesh
from impdde.errors import DomainError
from impdde.evolution import build_cache
from impdde.operators import OperatorParams
from impdde.prolongation import boundary_alternative_check, extend_solution, gronwall_bound
from impdde.solver import SolveOptions, solve


def _solved(spec, step=None, tol=1e-10):
    mesh = build_mesh(spec, step)
    cache = build_cache(spec, mesh)
    z, d = solve(spec, cache, OperatorParams.zeros(spec.n), SolveOptions(tol=tol, max_iters=500))
    assert d.converged
    return z, cache


def _growth_spec():
    def f(t, h):
        return 0.1 * (1.0 + np.abs(h(0.0)))

    return scalar_spec(f=f, phi=1.0, r=0.5, tau=2.0, impulses=[(0.8, 1.0)],
                       G=[lambda t, x: np.sin(x) / 2], f_lags=())


def test_constant_extension():
    spec = scalar_spec(phi=1.7, r=0.5, tau=1.0)
    z, _ = _solved(spec, 0.01)
    ext = extend_solution(spec, z, 2.0)
    assert not ext.escaped
    assert np.all(ext.trajectory.values == 1.7)


def test_pure_delay_method_of_steps():
    spec = scalar_spec(f=lambda t, h: h(-1.0), phi=1.0, r=1.0, tau=1.0)
    z, _ = _solved(spec)
    ext = extend_solution(spec, z, 2.0).trajectory
    ts = np.linspace(1.0, 2.0, 11)
    assert np.allclose(ext.eval(ts)[:, 0], 1 + ts + (ts - 1) ** 2 / 2, atol=1e-5)
    assert ext.eval(2.0)[0] == pytest.approx(3.5, abs=1e-5)


def test_gluing_keeps_solved_part():
    spec = _growth_spec()
    z, _ = _solved(spec, 0.005)
    ext = extend_solution(spec, z, 3.0).trajectory
    assert np.array_equal(ext.values[:len(z.mesh)], z.values)
    assert np.array_equal(ext.times[:len(z.mesh)], z.times)


def test_riccati_escape():
    spec = scalar_spec(f=lambda t, h: h(0.0) ** 2, phi=2.0, r=0.5, tau=0.25, f_lags=())
    z, _ = _solved(spec)
    ext = extend_solution(spec, z, 1.0)
    assert ext.escaped
    assert abs(ext.escape_time - 0.5) <= z.mesh.step
    assert ext.trajectory.mesh.end < ext.escape_time and ext.trajectory.is_finite()


def test_extension_requires_later_end():
    spec = scalar_spec(phi=1.0, r=0.5, tau=1.0)
    z, _ = _solved(spec, 0.1)
    with pytest.raises(DomainError):
        extend_solution(spec, z, 1.0)


def test_consistency_with_direct_solve():
    def f(t, h):
        return -0.8 * h(-0.5) + 0.1 * np.sin(t)

    short = scalar_spec(f=f, phi=1.0, r=0.5, tau=1.5, impulses=[(0.5, 0.7)], G=[lambda t, x: x / 4])
    long = scalar_spec(f=f, phi=1.0, r=0.5, tau=3.0, impulses=[(0.5, 0.7)], G=[lambda t, x: x / 4])
    step = 3.5 / 2000
    z_short, _ = _solved(short, step)
    z_long, _ = _solved(long, step)
    ext = extend_solution(short, z_short, 3.0).trajectory
    pts = np.linspace(-0.5, 3.0, 2001)
    assert np.max(np.abs(ext.eval(pts) - z_long.eval(pts))) <= 1e-4


# ------------------------------------------------------------- Gronwall

def _linear_traj(values_at_a):
    mesh = Mesh.build(Partition(0.5, 2.0, ((0.8, 1.0),), ()), 0.01)
    return Trajectory.constant(mesh, values_at_a)


def test_gronwall_zero_growth():
    spec = _growth_spec()
    z = _linear_traj([2.0])
    assert gronwall_bound(spec, z, (1.0, 3.0), lambda t: 0.0, M=1.3, L=0.2) == pytest.approx(1.3 * 0.2 * 2.0)


def test_gronwall_formula():
    spec = _growth_spec()
    z = _linear_traj([1.0])
    b = gronwall_bound(spec, z, (1.0, 3.0), lambda t: 1.0, M=1.0, L=0.01)
    assert b == pytest.approx((0.01 + 2.0) * math.exp(2.0), rel=1e-9)
    assert b == pytest.approx(14.853, abs=1e-3)


def test_gronwall_rejects_negative_growth():
    spec = _growth_spec()
    with pytest.raises(DomainError):
        gronwall_bound(spec, _linear_traj([1.0]), (1.0, 3.0), lambda t: -1.0, M=1.0, L=0.1)


def test_gronwall_dominates_linear_growth():
    spec = _growth_spec()
    z, cache = _solved(spec)
    ext = extend_solution(spec, z, 5.0).trajectory
    a = spec.partition.s(1)
    bound = gronwall_bound(spec, ext, (a, 5.0), lambda t: 0.1, M=cache.M, L=0.5)
    after = ext.values[ext.times >= a]
    assert np.max(np.abs(after)) <= 1.01 * bound


def test_gronwall_defaults_without_impulses():
    spec = scalar_spec(f=lambda t, h: 0.1 * (1 + np.abs(h(0.0))), phi=1.0, r=0.5, tau=1.0, f_lags=())
    z, _ = _solved(spec, 0.01)
    b = gronwall_bound(spec, z, (0.0, 1.0), lambda t: 0.1)
    assert b == pytest.approx(1.05 * (1.0 + 0.1) * math.exp(1.05 * 0.1), rel=1e-9)


# ------------------------------------------------------ boundary alternative

def test_boundary_check_zero():
    assert not boundary_alternative_check(_linear_traj([0.0]), 1.0).escaped


def test_boundary_check_linear():
    mesh = Mesh.build(Partition(0.5, 3.0, (), ()), 0.1)
    z = Trajectory.from_function(mesh, lambda t: np.array([max(t, 0.0)]))
    res = boundary_alternative_check(z, 2.0)
    assert res.escaped and res.first_hit == pytest.approx(2.0)
    assert res.to_dict() == {"escaped": True, "first_hit": res.first_hit}


def test_quad_solution_stays_in_ball(quad_setup, quad_solution):
    from impdde.operators import phi_tilde

    spec, mesh, cache, params = quad_setup
    z, _ = quad_solution
    radius = phi_tilde(spec, cache, params).norm() + params.rho
    assert not boundary_alternative_check(z, radius).escaped
