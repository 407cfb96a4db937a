import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctvf.model import mountain_car_env, pendulum_env
from ctvf.numeric import RngStream
from ctvf.policy_opt import (
    BarrierSpec,
    CertifiedPolicy,
    Infeasible,
    QpProblem,
    UncertifiedSetting,
    barrier_row,
    box_rows,
    certified_policy,
    feasible_width,
    greedy_update,
    kkt_residual,
    lipschitz_diagnostic,
    solve_qp,
)

MC = mountain_car_env(barrier_gain=1.0)


@dataclass
class LinearValue:
    """Value estimate with a constant gradient."""

    grad: np.ndarray

    def gradient(self, x):
        return np.asarray(self.grad, dtype=float)


@dataclass
class QuadValue:
    """V(x) = 0.5 x^T x."""

    def gradient(self, x):
        return np.asarray(x, dtype=float)


def test_mountain_car_barrier_row():
    row, bound = barrier_row(MC.barrier, MC.model.f, MC.model.g, np.zeros(2))
    np.testing.assert_allclose(row, [-0.0015], rtol=1e-14)
    assert bound == pytest.approx(0.0475, rel=1e-14)


def test_boundary_and_vacuous_rows():
    bs = BarrierSpec(lambda x: x[1], lambda x: np.array([0.0, 1.0]))
    row, bound = barrier_row(bs, lambda x: np.zeros(2), lambda x: np.array([[0.0], [2.0]]), np.zeros(2))
    np.testing.assert_array_equal(row, [-2.0])
    assert bound == 0.0
    row, bound = barrier_row(bs, lambda x: np.zeros(2), lambda x: np.array([[1.0], [0.0]]), np.array([0.0, 0.3]))
    assert np.all(row == 0) and bound >= 0


@given(st.floats(-1.2, 0.6), st.floats(-0.07, 0.07))
def test_barrier_gradient_matches_fd(pos, vel):
    x, h = np.array([pos, vel]), 1e-6
    fd = np.array([(MC.barrier.b(x + h * e) - MC.barrier.b(x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(fd, MC.barrier.grad_b(x), atol=1e-5)


def test_class_k_gain():
    bs = BarrierSpec(lambda x: 0.0, lambda x: 0.0, 0.3)
    assert bs.alpha(0.0) == 0.0 and bs.alpha(2.0) > bs.alpha(1.0) > 0
    with pytest.raises(ValueError):
        BarrierSpec(lambda x: 0.0, lambda x: 0.0, 0.0)


def test_qp_examples():
    np.testing.assert_allclose(solve_qp(QpProblem(np.eye(2), [-1.0, 0.0])), [1.0, 0.0])
    A, a = box_rows([-1.0], [1.0])
    # 0.5 M u^2 + p u with M = 0.002, p = 0.01
    p = QpProblem([[0.001]], [0.005], A, a)
    assert solve_qp(p)[0] == pytest.approx(-1.0)
    p = QpProblem([[0.001]], [0.005], np.vstack([A, [[-1.0]]]), np.append(a, 0.5))
    assert solve_qp(p)[0] == pytest.approx(-0.5)
    assert kkt_residual(p, solve_qp(p)) <= 1e-8


def test_qp_infeasible():
    with pytest.raises(Infeasible):
        solve_qp(QpProblem([[1.0]], [0.0], [[1.0], [-1.0]], [0.0, -1.0]))


def test_qp_rejects_indefinite():
    with pytest.raises(ValueError):
        QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])


@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(0, 3))
def test_qp_optimal_among_feasible_points(seed, n, k):
    rng = RngStream(seed)
    L = rng.normal(n * n).reshape(n, n)
    H = L @ L.T / n + 0.5 * np.eye(n)
    v = rng.normal(n) * 2
    A, a = box_rows(-np.ones(n), np.ones(n))
    if k:
        u0 = rng.uniform(-0.8, 0.8, n)
        R = rng.normal(k * n).reshape(k, n)
        A, a = np.vstack([A, R]), np.concatenate([a, R @ u0 + rng.uniform(0, 0.5, k)])
    p = QpProblem(H, v, A, a)
    u = solve_qp(p)
    assert kkt_residual(p, u) <= 1e-8
    cand = rng.uniform(-1, 1, (2000, n))
    cand = cand[np.all(cand @ A.T <= a, axis=1)]
    objs = np.einsum("pi,ij,pj->p", cand, H, cand) + 2 * cand @ v
    assert p.objective(u) <= np.min(objs, initial=np.inf) + 1e-12


def test_feasible_width_examples():
    A, a = box_rows([-1.0], [1.0])
    assert feasible_width(A, a) == pytest.approx(1.0)
    assert feasible_width(np.vstack([A, [[-1.0]]]), np.append(a, 0.5)) == pytest.approx(0.75)
    assert feasible_width([[-1.0], [1.0]], [-1.0, 0.0]) <= -0.5 + 1e-12
    assert feasible_width([[1.0]], [0.0]) == math.inf


def test_feasible_width_2d_matches_lp():
    from scipy.optimize import linprog

    rng = RngStream(3)
    for _ in range(20):
        A, a = box_rows(-np.ones(2), np.ones(2))
        R = rng.normal(4).reshape(2, 2)
        A, a = np.vstack([A, R]), np.concatenate([a, rng.normal(2)])
        res = linprog([0, 0, -1], A_ub=np.hstack([A, np.ones((len(A), 1))]), b_ub=a, bounds=[(None, None)] * 3)
        assert feasible_width(A, a) == pytest.approx(-res.fun, abs=1e-9)


def _mc_policy(value, gain=1.0):
    env = mountain_car_env(barrier_gain=gain)
    return certified_policy(env, value)


def test_greedy_zero_gradient():
    cp = _mc_policy(LinearValue(np.zeros(2)))
    assert greedy_update(cp, np.array([-0.5, 0.02]))[0] == 0.0


def test_greedy_lqr_feedback():
    b, m = 2.0, 0.5
    cp = CertifiedPolicy(QuadValue(), lambda x: -x, lambda x: np.array([[b]]), [[m]], [-1e6], [1e6])
    for x in (-1.0, 0.3, 2.0):
        assert greedy_update(cp, np.array([x]))[0] == pytest.approx(-b * x / m)
    rep = lipschitz_diagnostic(cp, np.linspace(-2, 2, 9)[:, None])
    assert rep.lipschitz_ratio == pytest.approx(b / m)
    assert rep.ok


def test_constant_policy_lipschitz_ratio_zero():
    cp = _mc_policy(LinearValue(np.zeros(2)))
    rep = lipschitz_diagnostic(cp, np.array([[-0.5, 0.0], [-0.3, 0.01], [0.1, 0.02]]))
    assert rep.lipschitz_ratio == 0.0 and rep.min_width > 0


def test_nonpositive_width_flagged():
    # a barrier that demands more acceleration than the box allows
    bs = BarrierSpec(lambda x: x[0], lambda x: np.array([1.0]), 1.0)
    cp = CertifiedPolicy(LinearValue([0.0]), lambda x: np.array([-5.0]), lambda x: np.array([[1.0]]), [[1.0]], [-1.0], [1.0], bs)
    rep = lipschitz_diagnostic(cp, np.array([[0.0], [1.0], [10.0]]))
    assert rep.flagged == (0, 1) and not rep.ok


def test_barrier_respected_near_boundary():
    # gradient pushes toward u = -1, which would drive vel below -0.05
    cp = _mc_policy(LinearValue([0.0, 100.0]))
    for vel in (-0.049, -0.045, -0.04):
        x = np.array([0.0, vel])
        u = greedy_update(cp, x)
        row, bound = barrier_row(cp.barrier, cp.f, cp.g, x)
        assert row @ u <= bound + 1e-12
    assert cp.metrics.barrier_activations >= 1


@given(st.floats(-1.2, 0.6), st.floats(-0.07, 0.07), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_box_compliance(pos, vel, g1, g2):
    cp = _mc_policy(LinearValue([g1, g2]))
    u = greedy_update(cp, np.array([pos, vel]))
    assert -1.0 <= u[0] <= 1.0


@given(st.floats(-1.2, 0.6), st.floats(-0.03, 0.07), st.floats(-1e3, 1e3))
def test_inactive_barrier_matches_clipped_minimizer(pos, vel, g2):
    cp = _mc_policy(LinearValue([0.0, g2]))
    x = np.array([pos, vel])
    u = greedy_update(cp, x)
    p = 0.0015 * g2
    free = float(np.clip(-p / 0.002, -1, 1))
    row, bound = barrier_row(cp.barrier, cp.f, cp.g, x)
    if row @ [free] < bound - 1e-9:
        assert u[0] == pytest.approx(free, abs=1e-12)


def test_infeasible_fallback():
    bs = BarrierSpec(lambda x: x[0], lambda x: np.array([1.0]), 1.0)
    cp = CertifiedPolicy(LinearValue([1.0]), lambda x: np.array([-5.0]), lambda x: np.array([[1.0]]), [[1.0]], [-1.0], [1.0], bs)
    u = greedy_update(cp, np.array([0.0]))
    assert u[0] == 1.0
    assert cp.metrics.infeasible_events == 1


def test_uncertified_setting_refused():
    env = pendulum_env()
    bs = BarrierSpec(lambda x: 1.0 - x[0] ** 2, lambda x: np.array([-2 * x[0], 0.0]))
    kw = dict(value=LinearValue(np.zeros(2)), f=env.model.f, g=env.model.g, M=env.cost.M, u_low=[-6.0], u_high=[6.0], barrier=bs, diffusion_free=False)
    with pytest.raises(UncertifiedSetting):
        CertifiedPolicy(**kw)
    CertifiedPolicy(**kw, allow_uncertified=True)
    assert not certified_policy(env, LinearValue(np.zeros(2))).diffusion_free


def test_exploration_noise_stays_in_box():
    cp = CertifiedPolicy(LinearValue([0.0, -1e4]), MC.model.f, MC.model.g, MC.cost.M, [-1.0], [1.0], exploration_std=5.0, rng=RngStream(0))
    us = np.array([greedy_update(cp, np.array([-0.5, 0.0]))[0] for _ in range(50)])
    assert np.all(np.abs(us) <= 1.0) and len(set(us)) > 1
