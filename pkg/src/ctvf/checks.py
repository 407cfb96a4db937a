"""Numerical self-checks: derivative factors, kernel validity, HJB identity, LQR, GPTD.

Each suite returns the worst observed error; ``kernel_selfcheck`` compares them
with fixed tolerances.
"""

from dataclasses import dataclass

import numpy as np

from .ct_learners import hjb_residual
from .dt_learners import DtDerivedKernel, GptdPath, gptd_fit, gptd_via_hr
from .kernels import DerivedKernel, Dictionary, GaussianKernel, QuadraticKernel, gauss_deriv_factors
from .lqr import a_cost, a_value, lqr_framework_check, random_hurwitz
from .numeric import RngStream

TOLERANCES = {
    "derivative_factors": 1e-5,
    "kappa_symmetry": 1e-9,
    "gram_min_eig": 1e-8,
    "hjb_residual": 1e-8,
    "lqr_value": 1e-6,
    "lqr_kernels": 1e-10,
    "gptd_dual_route": 1e-8,
}


@dataclass(frozen=True)
class RandomClosedLoop:
    """Smooth random drift with a state-dependent diagonal diffusion matrix."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @classmethod
    def draw(cls, rng: RngStream, n):
        return cls(rng.normal(n * n).reshape(n, n), rng.normal(n), rng.uniform(0.1, 0.5, n))

    def drift(self, x):
        return np.tanh(self.W @ x) + self.b

    def diffusion_matrix(self, x):
        return np.diag(self.c * (1.0 + 0.3 * np.sin(x)))


def _d1(g, h):
    return (-g(2 * h) + 8 * g(h) - 8 * g(-h) + g(-2 * h)) / (12 * h)


def _d2(g, h):
    return (-g(2 * h) + 16 * g(h) - 30 * g(0.0) + 16 * g(-h) - g(-2 * h)) / (12 * h * h)


def _fd_factors(kv, x, y, sigma):
    """Derivative factors by nested 5-point central differences of ``kv``."""
    n = len(x)
    h = 0.01 * sigma
    e = np.eye(n)
    k0 = kv(x, y)

    def along_y(i, order, xx):
        g = lambda t: kv(xx, y + t * e[i])
        return (_d1 if order == 1 else _d2)(g, h)

    a1 = np.array([along_y(i, 1, x) for i in range(n)]) / k0
    a2 = np.array([along_y(i, 2, x) for i in range(n)]) / k0
    a11, a12, a22 = (np.zeros((n, n)) for _ in range(3))
    for j in range(n):
        for i in range(n):
            a11[j, i] = _d1(lambda t: along_y(i, 1, x + t * e[j]), h) / k0
            a12[j, i] = _d1(lambda t: along_y(i, 2, x + t * e[j]), h) / k0
            a22[j, i] = _d2(lambda t: along_y(i, 2, x + t * e[j]), h) / k0
    return a1, a2, a11, a12, a22


def derivative_suite(seed=0, n_configs=100):
    """Worst relative error of the analytic factors against finite differences."""
    rng = RngStream(seed, 11)
    worst = 0.0
    for c in range(n_configs):
        n = 1 + c % 3
        sigma = float(rng.uniform(0.3, 2.0))
        x = rng.normal(n) * sigma
        y = x + rng.normal(n) * sigma
        kv = GaussianKernel(sigma, n)
        an = gauss_deriv_factors(kv, x, y)
        fd = _fd_factors(kv, x, y, sigma)
        for k, (a, f) in enumerate(zip((an.a1, an.a2, an.a11, an.a12, an.a22), fd)):
            order = (1, 2, 2, 3, 4)[k]
            scale = max(np.max(np.abs(a)), sigma**-order)
            worst = max(worst, float(np.max(np.abs(a - f)) / scale))
    return worst


def validity_suite(seed=0, n_sets=50):
    """Worst symmetry defect and most negative Gram eigenvalue, both relative."""
    rng = RngStream(seed, 12)
    asym, neg = 0.0, 0.0
    for s in range(n_sets):
        n = 1 + s % 3
        cl = RandomClosedLoop.draw(rng, n)
        base = GaussianKernel(float(rng.uniform(0.5, 2.0)), n) if s % 2 == 0 else QuadraticKernel(n)
        dk = DerivedKernel(base, cl, float(rng.uniform(0.0, 1.0)))
        m = 2 + s % 19
        X = rng.normal(m * n).reshape(m, n)
        dyn = dk.dynamics(X)
        G = dk.kappa_matrix(X, X, dyn, dyn)
        scale = max(1.0, float(np.max(np.abs(G))))
        asym = max(asym, float(np.max(np.abs(G - G.T))) / scale)
        neg = max(neg, float(-np.min(np.linalg.eigvalsh(0.5 * (G + G.T)))) / scale)
    return asym, neg


def hjb_suite(seed=0, n_points=100):
    """Worst ``|beta V + G(V) - R|`` over random dictionaries and points."""
    rng = RngStream(seed, 13)
    worst = 0.0
    for p in range(n_points):
        n = 1 + p % 3
        cl = RandomClosedLoop.draw(rng, n)
        dk = DerivedKernel(GaussianKernel(float(rng.uniform(0.5, 2.0)), n), cl, float(rng.uniform(0.0, 1.0)))
        m = 1 + p % 7
        D = Dictionary(dk, 1.0, rng.normal(m * n).reshape(m, n), rng.normal(m))
        worst = max(worst, abs(hjb_residual(D, rng.normal(n))))
    return worst


def lqr_suite(seed=0, n_systems=20):
    """Worst value error of the kernel route and worst closed-form kernel mismatch."""
    rng = RngStream(seed, 14)
    value_err, kernel_err = 0.0, 0.0
    for s in range(n_systems):
        n = 1 + s % 3
        sys = random_hurwitz(rng, n)
        L = rng.normal(n * n).reshape(n, n)
        q = L @ L.T + 0.1 * np.eye(n)
        value_err = max(value_err, lqr_framework_check(sys, q, seed=seed + s))
        dk = DerivedKernel(QuadraticKernel(n), sys.closed_loop(), 0.0)
        for _ in range(5):
            x, y = rng.normal(n), rng.normal(n)
            kernel_err = max(
                kernel_err,
                abs(x @ a_value(sys, y) @ x - dk.k_cross(x, y)),
                abs(x @ a_cost(sys, y) @ x - dk.kappa_eval(x, y)),
            )
    return value_err, kernel_err


def gptd_suite(seed=0, n_paths=20):
    """Worst mean/variance gap between the two GPTD routes."""
    rng = RngStream(seed, 15)
    worst = 0.0
    for p in range(n_paths):
        n = 1 + p % 3
        N = 1 + p % 10
        gamma = (0.0, 0.5, float(np.exp(-0.01 * 0.01)))[p % 3]
        base = GaussianKernel(float(rng.uniform(0.5, 1.5)), n)
        path = GptdPath(rng.normal((N + 1) * n).reshape(N + 1, n), rng.normal(N), 0.01 * np.eye(N))
        a, b = gptd_fit(path, base, gamma), gptd_via_hr(path, DtDerivedKernel(base, gamma))
        Q = rng.normal(10 * n).reshape(10, n)
        (ma, va), (mb, vb) = a.value(Q), b.value(Q)
        worst = max(worst, float(np.max(np.abs(ma - mb))), float(np.max(np.abs(va - vb))))
    return worst


def kernel_selfcheck(seed=0):
    """``{name: (ok, worst error, tolerance)}`` over all suites."""
    asym, neg = validity_suite(seed)
    lv, lk = lqr_suite(seed)
    values = {
        "derivative_factors": derivative_suite(seed),
        "kappa_symmetry": asym,
        "gram_min_eig": neg,
        "hjb_residual": hjb_suite(seed),
        "lqr_value": lv,
        "lqr_kernels": lk,
        "gptd_dual_route": gptd_suite(seed),
    }
    return {k: (bool(v <= TOLERANCES[k]), float(v), TOLERANCES[k]) for k, v in values.items()}
