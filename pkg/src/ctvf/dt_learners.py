"""Discrete-time baselines: GPTD (two equivalent routes) and a residual-gradient filter.

With deterministic successors ``x+`` the DT operator
``U(phi)(x) = phi(x) - gamma phi(x+)`` gives

    Kt(x, y)     = kv(x, y) - gamma kv(x, y+)
    kappa_t(x, y) = Kt(x, y) - gamma Kt(x+, y)

and GP regression of DT costs with ``kappa_t`` reproduces classical GPTD.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import block_diag

from .kernels import GaussianKernel, base_from_doc
from .numeric import factor_spd, solve_spd


class MissingSuccessor(KeyError):
    pass


@dataclass(frozen=True)
class DtDerivedKernel:
    base: object
    gamma: float
    successor: Optional[Callable] = None

    def __post_init__(self):
        # gamma = 1 is allowed for the undiscounted episodic setting
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")

    def _next(self, x, x_next):
        if x_next is not None:
            return np.asarray(x_next, dtype=float)
        if self.successor is None:
            raise MissingSuccessor("no successor given and no successor map set")
        return np.asarray(self.successor(np.asarray(x, dtype=float)), dtype=float)

    def k_cross(self, x, y, y_next=None):
        y1 = self._next(y, y_next)
        return self.base(x, y) - self.gamma * self.base(x, y1)

    def kappa(self, x, y, x_next=None, y_next=None):
        x1 = self._next(x, x_next)
        y1 = self._next(y, y_next)
        return self.k_cross(x, y, y1) - self.gamma * self.k_cross(x1, y, y1)

    def k_matrix(self, X, Y, Y_next):
        return self.base.matrix(X, Y) - self.gamma * self.base.matrix(X, Y_next)

    def kappa_matrix(self, X, X_next, Y, Y_next):
        return self.k_matrix(X, Y, Y_next) - self.gamma * self.k_matrix(X_next, Y, Y_next)


def dt_k_cross(dtk: DtDerivedKernel, x, y, y_next=None):
    return dtk.k_cross(x, y, y_next)


def dt_kappa(dtk: DtDerivedKernel, x, y, x_next=None, y_next=None):
    return dtk.kappa(x, y, x_next, y_next)


@dataclass
class GptdPath:
    """A state path ``x_0..x_N`` with DT costs ``d_0..d_{N-1}`` and their covariance."""

    states: np.ndarray
    costs: np.ndarray
    noise_cov: np.ndarray = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.costs = np.asarray(self.costs, dtype=float).reshape(-1)
        N = len(self.costs)
        if N < 1 or len(self.states) != N + 1:
            raise ValueError("a path with N >= 1 costs needs N + 1 states")
        if self.noise_cov is None:
            self.noise_cov = np.zeros((N, N))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if self.noise_cov.shape != (N, N):
            raise ValueError("noise covariance must be N x N")

    @property
    def n(self):
        return len(self.costs)


def difference_matrix(N, gamma):
    """The N x (N + 1) matrix with rows ``e_n - gamma e_{n+1}``."""
    H = np.zeros((N, N + 1))
    idx = np.arange(N)
    H[idx, idx] = 1.0
    H[idx, idx + 1] = -gamma
    return H


def _stack(paths, gamma):
    if isinstance(paths, GptdPath):
        paths = [paths]
    states = np.vstack([p.states for p in paths])
    H = block_diag(*[difference_matrix(p.n, gamma) for p in paths])
    d = np.concatenate([p.costs for p in paths])
    S = block_diag(*[p.noise_cov for p in paths])
    return states, H, d, S


@dataclass(frozen=True)
class GptdPosterior:
    base: object
    gamma: float
    states: np.ndarray
    H: np.ndarray
    factor: object
    weights: np.ndarray  # H^T (H G H^T + S)^-1 d

    def value(self, X):
        X = np.atleast_2d(X)
        k = self.base.matrix(X, self.states)  # (p, N+1)
        mean = k @ self.weights
        Hk = self.H @ k.T
        var = self.base.diag(X) - np.einsum("np,np->p", Hk, solve_spd(self.factor, Hk))
        return mean, np.maximum(var, 0.0)

    def gradient(self, x):
        return self.weights @ self.base.grad_x(np.asarray(x, dtype=float), self.states)


def gptd_fit(paths, base, gamma):
    """Classical GPTD posterior with the difference matrix ``H``."""
    states, H, d, S = _stack(paths, gamma)
    G = base.matrix(states, states)
    f = factor_spd(H @ G @ H.T + S)
    w = H.T @ solve_spd(f, d)
    return GptdPosterior(base, gamma, states, H, f, w)


def gptd_posterior(post, x):
    m, v = post.value(np.atleast_1d(x)[None])
    return float(m[0]), float(v[0])


@dataclass(frozen=True)
class HrPosterior:
    """GP regression of DT costs in the learning space of ``kappa_t``.

    Works on arbitrary transitions ``(x_n, x_n+)``, so sparsified subsets of a
    path are handled the same way as complete paths.
    """

    kernel: DtDerivedKernel
    X: np.ndarray
    X_next: np.ndarray
    factor: object
    weights: np.ndarray
    costs: np.ndarray

    def value(self, Q):
        Q = np.atleast_2d(Q)
        Ks = self.kernel.k_matrix(Q, self.X, self.X_next)
        mean = Ks @ self.weights
        var = self.kernel.base.diag(Q) - np.einsum("pn,np->p", Ks, solve_spd(self.factor, Ks.T))
        return mean, np.maximum(var, 0.0)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = self.kernel.base.grad_x(x, self.X) - self.kernel.gamma * self.kernel.base.grad_x(x, self.X_next)
        return self.weights @ g

    def to_dict(self):
        return value_expansion_doc(
            self.kernel.base,
            np.vstack([self.X, self.X_next]),
            np.concatenate([self.weights, -self.kernel.gamma * self.weights]),
            gamma=self.kernel.gamma,
        )


def gptd_transitions(dtk: DtDerivedKernel, X, X_next, costs, noise_cov):
    X, X_next = np.atleast_2d(X), np.atleast_2d(X_next)
    d = np.asarray(costs, dtype=float).reshape(-1)
    S = np.atleast_2d(noise_cov)
    G = dtk.kappa_matrix(X, X_next, X, X_next)
    f = factor_spd(0.5 * (G + G.T) + S)
    return HrPosterior(dtk, X, X_next, f, solve_spd(f, d), d)


def gptd_via_hr(paths, dtk: DtDerivedKernel):
    """GPTD through the DT learning kernel with successors taken from the path."""
    if isinstance(paths, GptdPath):
        paths = [paths]
    X = np.vstack([p.states[:-1] for p in paths])
    X_next = np.vstack([p.states[1:] for p in paths])
    d = np.concatenate([p.costs for p in paths])
    S = block_diag(*[p.noise_cov for p in paths])
    return gptd_transitions(dtk, X, X_next, d, S)


def sparsify_transitions(dtk: DtDerivedKernel, X, X_next, tau):
    """Coherence-based selection of transitions in the DT learning space."""
    keep = []
    diag = np.array([dtk.kappa_matrix(X[m : m + 1], X_next[m : m + 1], X[m : m + 1], X_next[m : m + 1])[0, 0] for m in range(len(X))])
    for m in range(len(X)):
        if diag[m] <= 0:
            continue
        if keep:
            row = dtk.kappa_matrix(X[m : m + 1], X_next[m : m + 1], X[keep], X_next[keep])[0]
            if np.max(np.abs(row) / np.sqrt(diag[m] * diag[keep])) > tau:
                continue
        keep.append(m)
    return np.array(keep, dtype=int)


@dataclass
class ValueDictionary:
    """Value expansion ``sum_j w_j kv(., z_j)`` with coherence admission in kv."""

    base: object
    tau: float
    centers: np.ndarray = None
    coefficients: np.ndarray = None

    def __post_init__(self):
        n = self.base.dim
        self.centers = np.zeros((0, n)) if self.centers is None else np.atleast_2d(self.centers).reshape(-1, n)
        self.coefficients = np.zeros(len(self.centers)) if self.coefficients is None else np.asarray(self.coefficients, dtype=float)

    def __len__(self):
        return len(self.centers)

    def value(self, X):
        X = np.atleast_2d(X)
        if not len(self):
            return np.zeros(len(X))
        return self.base.matrix(X, self.centers) @ self.coefficients

    def gradient(self, x):
        if not len(self):
            return np.zeros(self.base.dim)
        return self.coefficients @ self.base.grad_x(np.asarray(x, dtype=float), self.centers)

    def add(self, x, c):
        """Add ``c kv(., x)``, projected onto the most coherent center if not admitted."""
        x = np.asarray(x, dtype=float)
        kxx = self.base(x, x)
        if len(self):
            row = self.base.matrix(x[None], self.centers)[0]
            coh = np.abs(row) / np.sqrt(kxx * self.base.diag(self.centers))
            b = int(np.argmax(coh))
            if coh[b] > self.tau:
                self.coefficients[b] += c * row[b] / self.base(self.centers[b], self.centers[b])
                return
        self.centers = np.vstack([self.centers, x])
        self.coefficients = np.append(self.coefficients, c)

    def to_dict(self, **extra):
        return value_expansion_doc(self.base, self.centers, self.coefficients, tau=self.tau, **extra)


def value_expansion_doc(base, centers, coefficients, **extra):
    doc = {
        "format": "ctvf-dictionary/1",
        "space": "value",
        "kernel": "gaussian" if isinstance(base, GaussianKernel) else "quadratic",
        "sigma": getattr(base, "sigma", None),
        "normalizer_exponent": getattr(base, "L", None),
        "dim": base.dim,
        "centers": np.asarray(centers).tolist(),
        "coefficients": np.asarray(coefficients).tolist(),
    }
    doc.update(extra)
    return doc


def value_dictionary_from_doc(doc):
    return ValueDictionary(base_from_doc(doc), doc.get("tau", 1.0), doc["centers"], doc["coefficients"])


@dataclass
class DtkfState:
    value: ValueDictionary
    step_size: float
    gamma: float
    normalized: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step size must be positive")


def dtkf_init(base, step_size, gamma, tau, normalized=False):
    return DtkfState(ValueDictionary(base, tau), step_size, gamma, normalized)


def dtkf_update(state: DtkfState, x, x_next, cost):
    """Residual-gradient step on the Bellman loss ``(V(x) - gamma V(x+) - cost)^2 / 2``."""
    V = state.value
    x, x_next = np.asarray(x, dtype=float), np.asarray(x_next, dtype=float)
    e = float(V.value(x[None])[0] - state.gamma * V.value(x_next[None])[0] - cost)
    if e == 0.0:
        return state
    step = state.step_size * e
    if state.normalized:
        b = V.base
        norm2 = b(x, x) - 2 * state.gamma * b(x, x_next) + state.gamma**2 * b(x_next, x_next)
        if norm2 <= 0:
            return state
        step /= norm2
    V.add(x, -step)
    if state.gamma != 0.0:
        V.add(x_next, step * state.gamma)
    return state
