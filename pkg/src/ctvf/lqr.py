"""Linear feedback on a linear system: analytic values and an exactness check.

For ``dx = (A - B F) x dt`` and ``R(x) = x^T Q x`` the value is ``x^T P x``
with ``Abar^T P + P Abar + Q = 0``. Under the quadratic base kernel
``kv(x, y) = (x^T y)^2`` with ``beta = 0`` the derived kernels are

    K(x, y)     = x^T A_value(y) x,  A_value(y) = -(Abar y y^T + y y^T Abar^T)
    kappa(x, y) = x^T A_cost(y) x,   A_cost(y)  = -(Abar^T A_value(y) + A_value(y) Abar)
"""

from dataclasses import dataclass

import numpy as np

from .ct_learners import ctgp_fit
from .kernels import DerivedKernel, QuadraticKernel
from .model import ClosedLoop, SdeModel, linear_policy
from .numeric import NotHurwitz, RngStream, solve_lyapunov


@dataclass(frozen=True)
class LqrSystem:
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        F = np.asarray(self.F, dtype=float).reshape(B.shape[1], A.shape[0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "F", F)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def a_bar(self):
        return self.A - self.B @ self.F

    def hurwitz(self):
        return bool(np.all(np.linalg.eigvals(self.a_bar).real < 0))

    def closed_loop(self):
        n, m = self.B.shape
        A, B = self.A, self.B
        model = SdeModel(
            n_x=n,
            n_u=m,
            n_w=n,
            drift=lambda x, u: A @ x + B @ np.atleast_1d(u),
            diffusion=lambda x, u: np.zeros((n, n)),
            u_low=np.full(m, -np.inf),
            u_high=np.full(m, np.inf),
            f=lambda x: A @ x,
            g=lambda x: B,
            name="lqr",
        )
        return ClosedLoop(model, linear_policy(self.F))


def lqr_value_analytic(sys: LqrSystem, q_bar):
    """``P`` with ``V(x) = x^T P x`` (beta = 0)."""
    return solve_lyapunov(sys.a_bar, np.atleast_2d(q_bar))


def a_value(sys: LqrSystem, y):
    y = np.asarray(y, dtype=float)
    yy = np.outer(y, y)
    return -(sys.a_bar @ yy + yy @ sys.a_bar.T)


def a_cost(sys: LqrSystem, y):
    av = a_value(sys, y)
    return -(sys.a_bar.T @ av + av @ sys.a_bar)


def lqr_k(sys: LqrSystem, x, y):
    x = np.asarray(x, dtype=float)
    return float(x @ a_value(sys, y) @ x)


def lqr_kappa(sys: LqrSystem, x, y):
    x = np.asarray(x, dtype=float)
    return float(x @ a_cost(sys, y) @ x)


def sphere_samples(rng: RngStream, n, count, radius=1.0):
    Z = rng.normal(count * n).reshape(count, n)
    return radius * Z / np.linalg.norm(Z, axis=1, keepdims=True)


def random_hurwitz(rng: RngStream, n, m=1, margin=0.1):
    """A random (A, B, F) whose closed loop has spectral abscissa <= -margin."""
    A = rng.normal(n * n).reshape(n, n)
    B = rng.normal(n * m).reshape(n, m)
    F = rng.normal(m * n).reshape(m, n)
    abar = A - B @ F
    shift = max(0.0, np.max(np.linalg.eigvals(abar).real) + margin)
    return LqrSystem(A - shift * np.eye(n), B, F)


def lqr_framework_check(sys: LqrSystem, q_bar, n_samples=None, seed=0, radius=1.0, n_test=50):
    """Max abs error between the kernel value estimate and ``x^T P x``.

    The estimate is CTGP (noise free) on samples of ``x^T q_bar x`` with the
    quadratic base kernel; ``n_samples`` defaults to ``n (n + 1) / 2``.
    """
    if not sys.hurwitz():
        raise NotHurwitz("closed loop is not Hurwitz")
    n = sys.n
    q_bar = np.atleast_2d(np.asarray(q_bar, dtype=float))
    n_samples = n * (n + 1) // 2 if n_samples is None else n_samples
    rng = RngStream(seed)
    X = sphere_samples(rng, n, n_samples, radius)
    d = np.einsum("pi,ij,pj->p", X, q_bar, X)
    dk = DerivedKernel(QuadraticKernel(n), sys.closed_loop(), beta=0.0)
    gp = ctgp_fit(dk, X, d, 0.0)
    P = lqr_value_analytic(sys, q_bar)
    T = np.vstack([np.zeros(n), sphere_samples(rng.spawn(1), n, n_test, radius)])
    est, _ = gp.value(T)
    exact = np.einsum("pi,ij,pj->p", T, P, T)
    return float(np.max(np.abs(est - exact)))
