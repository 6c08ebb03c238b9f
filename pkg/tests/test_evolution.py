import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from impdde.errors import DomainError, NumericError
from impdde.evolution import build_fundamental, evolution_op, norm_bound

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def test_zero_generator():
    c = build_fundamental(lambda t: np.zeros((2, 2)), np.linspace(0, 1, 101))
    assert np.allclose(c.Phi, np.eye(2))
    assert norm_bound(c) == pytest.approx(1.05)


def test_gaussian_scalar():
    c = build_fundamental(lambda t: np.array([[2 * t]]), np.linspace(0, 1, 1001))
    assert c.phi(1.0)[0, 0] == pytest.approx(math.e, abs=1e-6)


def test_rotation_quarter_turn():
    grid = np.linspace(0, math.pi / 2, 1571)
    c = build_fundamental(lambda t: ROT, grid)
    assert np.allclose(c.phi(math.pi / 2), ROT, atol=1e-6)
    assert c.M == pytest.approx(1.05, abs=1e-3)


def test_identity_at_start_and_inverse_path():
    A = lambda t: np.array([[np.sin(t), 1.0], [-0.3, -t]])
    c = build_fundamental(A, np.linspace(0, 2, 801))
    assert np.array_equal(c.Phi[0], np.eye(2)) and np.array_equal(c.PhiInv[0], np.eye(2))
    prod = np.einsum("kij,kjl->kil", c.Phi, c.PhiInv)
    assert np.max(np.abs(prod - np.eye(2))) < 1e-9


def test_scalar_decay_evolution_op():
    c = build_fundamental(lambda t: np.array([[-1.0]]), np.linspace(0, 1, 1001))
    assert evolution_op(c, 1.0, 0.0)[0, 0] == pytest.approx(math.exp(-1), abs=1e-7)
    for t in (0.0, 0.37, 1.0):
        assert np.allclose(evolution_op(c, t, t), 1.0)


def test_growth_bound():
    c = build_fundamental(lambda t: np.array([[1.0]]), np.linspace(0, 1, 1001))
    assert c.M == pytest.approx(1.05 * math.e, rel=1e-6)
    assert c.M >= 1.0


def test_cocycle_rotation():
    c = build_fundamental(lambda t: ROT, np.linspace(0, 2, 2001))
    U = lambda t, s: evolution_op(c, t, s)
    assert np.linalg.norm(U(2, 1) @ U(1, 0) - U(2, 0)) <= 1e-6


def test_reconstruction_against_direct_integration():
    A = lambda t: np.array([[-0.2, 1.0 + 0.5 * np.sin(t)], [-1.0, 0.1 * t]])
    grid = np.linspace(0, 2, 2001)
    c = build_fundamental(A, grid)
    rng = np.random.default_rng(3)
    for _ in range(5):
        i, j = sorted(rng.integers(0, len(grid), 2))
        s, t = grid[i], grid[j]
        v = rng.standard_normal(2)
        ref = solve_ivp(lambda u, y: A(u) @ y, (s, t), v, rtol=1e-11, atol=1e-12).y[:, -1] if t > s else v
        assert np.allclose(evolution_op(c, t, s) @ v, ref, atol=1e-5)


def test_constant_generator_matches_expm():
    A = np.array([[-0.5, 1.0], [-1.0, -0.5]])
    grid = np.linspace(0, 2, 2001)
    c = build_fundamental(lambda t: A, grid)
    for t in (0.5, 1.3, 2.0):
        assert np.allclose(c.phi(t), expm(A * t), atol=1e-10)


def test_out_of_range_and_bad_inputs():
    c = build_fundamental(lambda t: ROT, np.linspace(0, 1, 11))
    with pytest.raises(DomainError):
        c.phi(1.5)
    with pytest.raises(DomainError):
        build_fundamental(lambda t: ROT, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(NumericError):
        build_fundamental(lambda t: np.array([[np.nan]]), np.linspace(0, 1, 5))


def test_rows_requires_nodes():
    c = build_fundamental(lambda t: ROT, np.linspace(0, 1, 11))
    assert list(c.rows(np.array([0.0, 0.5, 1.0]))) == [0, 5, 10]
    with pytest.raises(DomainError):
        c.rows(np.array([0.55]))
