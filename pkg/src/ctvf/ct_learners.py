"""Cost-space learners whose outputs pull back to value estimates.

``ctgp_fit`` is GP regression of the observed immediate cost with the derived
kernel ``kappa``; value posteriors reuse the same weights with ``K``.
``ctkf_update`` is a normalized kernel LMS filter on a coherence dictionary.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import DerivedKernel, Dictionary, PointDynamics
from .numeric import SpdFactor, factor_spd, solve_spd


@dataclass(frozen=True)
class GpPosterior:
    kernel: DerivedKernel
    centers: np.ndarray
    dyn: PointDynamics
    factor: SpdFactor
    weights: np.ndarray
    observations: np.ndarray
    noise_std: float

    def __len__(self):
        return len(self.centers)

    def dictionary(self, tau=1.0):
        """The posterior mean as a kernel expansion (weights as coefficients)."""
        return Dictionary(self.kernel, tau, self.centers, self.weights, self.dyn)

    def _k_star(self, X):
        return self.kernel.kappa_matrix(X, self.centers, None, self.dyn)

    def cost(self, X):
        """Mean and variance of the immediate cost at each row of ``X``."""
        X = np.atleast_2d(X)
        ks = self._k_star(X)
        mean = ks @ self.weights
        prior = self.kernel.kappa_diag(X)
        var = prior - np.einsum("pq,qp->p", ks, solve_spd(self.factor, ks.T))
        return mean, np.maximum(var, 0.0)

    def value(self, X):
        """Mean and variance of the value function at each row of ``X``."""
        X = np.atleast_2d(X)
        Ks = self.kernel.k_matrix(X, self.centers, self.dyn)
        mean = Ks @ self.weights
        prior = self.kernel.base.diag(X)
        var = prior - np.einsum("pq,qp->p", Ks, solve_spd(self.factor, Ks.T))
        return mean, np.maximum(var, 0.0)

    def gradient(self, x):
        return self.weights @ self.kernel.k_grad_x(x, self.centers, self.dyn)


def ctgp_fit(dk: DerivedKernel, samples, costs, noise_std, dyn=None):
    """GP regression of observed costs with the derived kernel."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    d = np.asarray(costs, dtype=float).reshape(-1)
    if len(X) < 1 or len(X) != len(d):
        raise ValueError("need at least one sample and one cost per sample")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    dyn = dk.dynamics(X) if dyn is None else dyn
    G = dk.gram(X, dyn) + noise_std**2 * np.eye(len(X))
    f = factor_spd(G)
    alpha = solve_spd(f, d)
    return GpPosterior(dk, X, dyn, f, alpha, d, float(noise_std))


def cost_posterior(gp: GpPosterior, x):
    m, v = gp.cost(np.atleast_1d(x)[None])
    return float(m[0]), float(v[0])


def value_posterior(gp: GpPosterior, x):
    m, v = gp.value(np.atleast_1d(x)[None])
    return float(m[0]), float(v[0])


def sparsify(dk: DerivedKernel, X, tau, dyn=None):
    """Indices of the samples admitted, in order, by coherence in the cost space."""
    X = np.atleast_2d(X)
    dyn = dk.dynamics(X) if dyn is None else dyn
    diag = dk.kappa_diag(X, dyn)
    keep = []
    for m in range(len(X)):
        if diag[m] <= 0:
            continue
        if keep:
            row = dk.kappa_matrix(X[m : m + 1], X[keep], dyn.take([m]), dyn.take(keep))[0]
            coh = np.max(np.abs(row) / np.sqrt(diag[m] * diag[keep]))
            if coh > tau:
                continue
        keep.append(m)
    return np.array(keep, dtype=int)


@dataclass
class KfState:
    dictionary: Dictionary
    step_size: float

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")

    @property
    def tau(self):
        return self.dictionary.tau

    def predict(self, x):
        return float(self.dictionary.cost(np.atleast_2d(x))[0])


def ctkf_init(dk: DerivedKernel, step_size, tau):
    return KfState(Dictionary(dk, tau), step_size)


def ctkf_update(kf: KfState, dk: DerivedKernel, x, d, dyn_x=None):
    """One normalized functional-gradient step on the squared cost error.

    A coherent sample (not admitted) moves the coefficient of its most
    coherent center by ``-lam e kappa(x, x_b) / kappa(x_b, x_b)^2``, which
    reduces to the admitted-sample step when ``x == x_b``.
    """
    D = kf.dictionary
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dyn_x = dk._dyn(x, dyn_x)
    kxx = dk.kappa_matrix(x, None, dyn_x)[0, 0]
    if kxx <= 0:
        return kf
    row = D.kappa_row(x, dyn_x)
    e = float(row @ D.coefficients) - float(d) if len(D) else -float(d)
    if e == 0.0:
        return kf
    lam = kf.step_size
    coh = np.abs(row) / np.sqrt(kxx * D.diag) if len(D) else np.zeros(0)
    if not len(D) or np.max(coh) <= D.tau:
        D.append(x, -lam * e / kxx, dyn_x)
    else:
        b = int(np.argmax(coh))
        D.coefficients[b] -= lam * e * row[b] / D.diag[b] ** 2
    return kf


def value_from_dictionary(d: Dictionary, dk: DerivedKernel, x):
    if not len(d):
        return 0.0
    return float(dk.k_matrix(np.atleast_2d(x), d.centers, d.dyn)[0] @ d.coefficients)


def value_gradient(d: Dictionary, dk: DerivedKernel, x):
    if not len(d):
        return np.zeros(dk.base.dim)
    return d.coefficients @ dk.k_grad_x(np.asarray(x, dtype=float), d.centers, d.dyn)


def hjb_residual(d: Dictionary, x):
    """``beta V(x) + G(V)(x) - R(x)`` for the dictionary's value and cost estimates."""
    dk = d.kernel
    x = np.asarray(x, dtype=float)
    dyn = dk.dynamics(x[None])
    v = float(d.value(x[None])[0])
    grad = d.gradient(x)
    hess = d.hessian(x)
    generator = -0.5 * np.trace(hess @ dyn.diffusion[0]) - grad @ dyn.drift[0]
    r = float(dk.kappa_matrix(x[None], d.centers, dyn, d.dyn)[0] @ d.coefficients)
    return dk.beta * v + generator - r
