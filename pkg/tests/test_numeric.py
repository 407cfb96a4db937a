import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hurwitz_matrix, random_spd
from ctvf.numeric import (
    DimensionMismatch,
    NotHurwitz,
    NotSpd,
    RngStream,
    factor_spd,
    solve_lyapunov,
    solve_spd,
    standard_normal,
)


def test_factor_identity_and_diagonal():
    assert np.array_equal(factor_spd(np.eye(2)).lower, np.eye(2))
    np.testing.assert_allclose(factor_spd([[4.0, 0.0], [0.0, 9.0]]).lower, np.diag([2.0, 3.0]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_factor_reproduces_source(seed, n):
    m = random_spd(RngStream(seed), n)
    L = factor_spd(m).lower
    assert np.linalg.norm(L @ L.T - m) <= 1e-10 * np.linalg.norm(m)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_solve_roundtrip(seed, n):
    rng = RngStream(seed)
    m = random_spd(rng, n)
    v = rng.normal(n)
    x = solve_spd(factor_spd(m), m @ v)
    assert np.max(np.abs(x - v)) <= 1e-8 * max(1.0, np.max(np.abs(v)))


def test_solve_examples():
    np.testing.assert_array_equal(solve_spd(factor_spd(np.eye(2)), [1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_allclose(solve_spd(factor_spd(np.diag([4.0, 9.0])), [4.0, 9.0]), [1.0, 1.0])


def test_solve_residual_random(rng):
    m = random_spd(rng, 5)
    b = rng.normal(5)
    x = solve_spd(factor_spd(m), b)
    assert np.linalg.norm(m @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_solve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_spd(factor_spd(np.eye(2)), [1.0, 2.0, 3.0])


def test_semidefinite_needs_jitter():
    v = np.array([1.0, 1.0])
    f = factor_spd(np.outer(v, v))
    assert f.jitter == pytest.approx(1e-10 * 2.0 / 2)


def test_not_spd():
    with pytest.raises(NotSpd):
        factor_spd([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NotSpd):
        factor_spd([[1.0, 2.0], [0.0, 1.0]])


def test_lyapunov_examples():
    np.testing.assert_allclose(solve_lyapunov([[-1.0]], [[1.0]]), [[0.5]])
    np.testing.assert_allclose(solve_lyapunov([[-1.0]], [[4.0]]), [[2.0]])
    np.testing.assert_allclose(solve_lyapunov(-np.eye(2), np.eye(2)), 0.5 * np.eye(2))


def test_lyapunov_residual_and_scipy_oracle():
    rng = RngStream(5)
    for k in range(100):
        n = 1 + k % 4
        a = random_hurwitz_matrix(rng, n)
        q = random_spd(rng, n)
        p = solve_lyapunov(a, q)
        assert np.linalg.norm(a.T @ p + p @ a + q) <= 1e-10 * max(1.0, np.linalg.norm(q))
        np.testing.assert_allclose(p, p.T, atol=1e-14)
        np.testing.assert_allclose(p, scipy.linalg.solve_continuous_lyapunov(a.T, -q), rtol=1e-8, atol=1e-10)


def test_lyapunov_not_hurwitz():
    with pytest.raises(NotHurwitz):
        solve_lyapunov([[1.0]], [[1.0]])


def test_rng_determinism_and_independence():
    a = standard_normal(RngStream(7, 3), 10)
    b = standard_normal(RngStream(7, 3), 10)
    c = standard_normal(RngStream(7, 4), 10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(RngStream(7, 0).spawn(3).normal(10), a)


def test_rng_moments():
    z = standard_normal(RngStream(11), 10**5)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.02


def test_standard_normal_rejects_empty():
    with pytest.raises(ValueError):
        standard_normal(RngStream(0), 0)
