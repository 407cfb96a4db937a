"""Value-space kernels, their derivatives, and the derived learning kernel.

Given a value-space kernel ``kv`` and a closed loop with drift ``h`` and
diffusion ``A = eta eta^T``, the operator

    U(phi)(x) = beta phi(x) - grad phi(x) . h(x) - 1/2 sum_mn A_mn(x) d_m d_n phi(x)

maps value functions to immediate-cost functions. ``K(x, y) = U_y kv(x, .)(y)``
lives in the value space and ``kappa(x, y) = U_x K(., y)(x)`` is the reproducing
kernel of the cost space. Costs are learned with ``kappa``; the value estimate
reuses the same coefficients with ``K``.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np


class DiffusionUnsupported(ValueError):
    pass


@dataclass(frozen=True)
class GaussianKernel:
    """``(2 pi sigma^2)^(-L/2) exp(-|x - y|^2 / (2 sigma^2))``; L defaults to dim."""

    sigma: float
    dim: int
    L: Optional[int] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.L is None:
            object.__setattr__(self, "L", self.dim)

    @property
    def peak(self):
        return (2.0 * math.pi * self.sigma**2) ** (-self.L / 2.0)

    def matrix(self, X, Y):
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        sq = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
        return self.peak * np.exp(-sq / (2.0 * self.sigma**2))

    def __call__(self, x, y):
        return float(self.matrix(np.atleast_1d(x)[None], np.atleast_1d(y)[None])[0, 0])

    def diag(self, X):
        return np.full(len(np.atleast_2d(X)), self.peak)

    def grad_x(self, x, Y):
        """Rows ``d kv(x, y_i) / dx``."""
        Y = np.atleast_2d(Y)
        d = np.asarray(x, dtype=float)[None, :] - Y
        return -(d / self.sigma**2) * self.matrix(np.atleast_2d(x), Y)[0][:, None]


@dataclass(frozen=True)
class QuadraticKernel:
    """``(x^T y)^2``."""

    dim: int

    def matrix(self, X, Y):
        return (np.atleast_2d(X) @ np.atleast_2d(Y).T) ** 2

    def __call__(self, x, y):
        return float(np.dot(x, y) ** 2)

    def diag(self, X):
        return np.sum(np.atleast_2d(X) ** 2, axis=1) ** 2

    def grad_x(self, x, Y):
        Y = np.atleast_2d(Y)
        return 2.0 * (Y @ x)[:, None] * Y


@dataclass(frozen=True)
class DerivFactors:
    """Gaussian derivative factors; each derivative of kv equals factor * kv.

    With ``d = x - y`` and the derivatives taken in the convention
    ``(D^alpha kv)_y(x) = d^alpha/dy^alpha kv(x, y)``:

    a1[i]      D^{e_i}
    a2[i]      D^{2 e_i}
    a11[j, i]  D^{e_j} in x of D^{e_i}
    a12[j, i]  D^{e_j} in x of D^{2 e_i}
    a22[j, i]  D^{2 e_j} in x of D^{2 e_i}

    Leading axes broadcast over point pairs.
    """

    a1: np.ndarray
    a2: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray


def _factors(d, sigma):
    s2 = sigma**2
    n = d.shape[-1]
    eye = np.eye(n)
    dd = d[..., :, None] * d[..., None, :]  # [j, i] = d_j d_i
    q = d**2 - s2
    a1 = d / s2
    a2 = q / s2**2
    a11 = (eye * s2 - dd) / s2**2
    # a12[j, i] = (2 s2 d_i delta_ij - (d_i^2 - s2) d_j) / s2^3
    a12 = (2.0 * s2 * eye * d[..., None, :] - q[..., None, :] * d[..., :, None]) / s2**3
    # a22[j, i] = (q_i q_j + delta_ij (2 s2^2 - 4 s2 d_i^2)) / s2^4
    a22 = (q[..., :, None] * q[..., None, :] + eye * (2.0 * s2**2 - 4.0 * s2 * d[..., None, :] ** 2)) / s2**4
    return DerivFactors(a1, a2, a11, a12, a22)


def gauss_deriv_factors(params: GaussianKernel, x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return _factors(d, params.sigma)


@dataclass(frozen=True)
class PointDynamics:
    """Closed-loop drift ``h`` (m, n) and diffusion ``A`` (m, n, n) at m points."""

    drift: np.ndarray
    diffusion: np.ndarray

    @property
    def diag(self):
        return np.diagonal(self.diffusion, axis1=1, axis2=2)

    def __len__(self):
        return self.drift.shape[0]

    def take(self, idx):
        return PointDynamics(self.drift[idx], self.diffusion[idx])

    def append(self, other):
        return PointDynamics(
            np.concatenate([self.drift, other.drift]), np.concatenate([self.diffusion, other.diffusion])
        )

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((0, n)), np.zeros((0, n, n)))


def point_dynamics(closed_loop, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = np.array([closed_loop.drift(x) for x in X]).reshape(X.shape)
    A = np.array([closed_loop.diffusion_matrix(x) for x in X]).reshape(X.shape[0], X.shape[1], X.shape[1])
    return PointDynamics(h, A)


Kernel = Union[GaussianKernel, QuadraticKernel]


@dataclass(frozen=True)
class DerivedKernel:
    """The pair ``(K, kappa)`` induced by ``base``, a closed loop and ``beta``.

    Matrix methods accept precomputed ``PointDynamics``; evaluating ``K(., y)``
    only needs the closed loop at ``y``, which is what makes value estimates
    cheap to query once the dynamics at the centers are cached.
    """

    base: Kernel
    closed_loop: object
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def gaussian(self):
        return isinstance(self.base, GaussianKernel)

    def dynamics(self, X):
        dyn = point_dynamics(self.closed_loop, X)
        self._check(dyn)
        return dyn

    def _check(self, dyn):
        if self.gaussian and len(dyn):
            A = dyn.diffusion
            off = A - np.einsum("mi,ij->mij", dyn.diag, np.eye(A.shape[1]))
            if np.max(np.abs(off)) > 1e-14 * max(1.0, float(np.max(np.abs(A)))):
                raise DiffusionUnsupported("Gaussian derived kernel needs a diagonal diffusion matrix")

    def _dyn(self, X, dyn):
        if dyn is None:
            return self.dynamics(X)
        self._check(dyn)
        return dyn

    # -- K -------------------------------------------------------------
    def k_matrix(self, X, Y, dyn_y=None):
        """``K(x_p, y_q)`` for all pairs."""
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        dy = self._dyn(Y, dyn_y)
        if self.gaussian:
            fac = _factors(X[:, None, :] - Y[None, :, :], self.base.sigma)
            a = (
                self.beta
                - np.einsum("pqi,qi->pq", fac.a1, dy.drift)
                - 0.5 * np.einsum("pqi,qi->pq", fac.a2, dy.diag)
            )
            return a * self.base.matrix(X, Y)
        s = X @ Y.T
        xh = X @ dy.drift.T
        xAx = np.einsum("pi,qij,pj->pq", X, dy.diffusion, X)
        return self.beta * s**2 - 2.0 * s * xh - xAx

    def k_grad_x(self, x, Y, dyn_y=None):
        """Rows ``dK(x, y_q)/dx``."""
        x = np.asarray(x, dtype=float)
        Y = np.atleast_2d(Y)
        dy = self._dyn(Y, dyn_y)
        if self.gaussian:
            fac = _factors(x[None, :] - Y, self.base.sigma)
            kv = self.base.matrix(x[None], Y)[0]
            # d kv / dx_j = -a1_j kv
            g = (
                -self.beta * fac.a1
                - np.einsum("qji,qi->qj", fac.a11, dy.drift)
                - 0.5 * np.einsum("qji,qi->qj", fac.a12, dy.diag)
            )
            return g * kv[:, None]
        s = Y @ x
        xh = dy.drift @ x
        return (
            2.0 * self.beta * s[:, None] * Y
            - 2.0 * xh[:, None] * Y
            - 2.0 * s[:, None] * dy.drift
            - 2.0 * np.einsum("qij,j->qi", dy.diffusion, x)
        )

    def k_hess_x(self, x, Y, dyn_y=None):
        """``d^2 K(x, y_q) / dx dx^T`` for each q, shape (q, n, n)."""
        x = np.asarray(x, dtype=float)
        Y = np.atleast_2d(Y)
        dy = self._dyn(Y, dyn_y)
        if self.gaussian:
            s2 = self.base.sigma**2
            n = x.size
            d = x[None, :] - Y
            kv = self.base.matrix(x[None], Y)[0]
            # third/fourth mixed partials of kv as polynomial(d) * kv, built from
            # Hermite-type identities; diagonal diffusion only enters via A_ii
            eye = np.eye(n)
            dd = d[:, :, None] * d[:, None, :]
            hess_kv = (dd - eye * s2) / s2**2  # d2 kv / dx_j dx_k
            # d2/dx_j dx_k of (d/dy_i kv) = -d3 kv/dx_i dx_j dx_k
            third = _third(d, s2)  # [q, i, j, k] = d3 kv / dx_i dx_j dx_k / kv
            fourth = _fourth_ii(d, s2)  # [q, i, j, k] = d4 kv / dx_i dx_i dx_j dx_k / kv
            H = (
                self.beta * hess_kv
                + np.einsum("qi,qijk->qjk", dy.drift, third)
                - 0.5 * np.einsum("qi,qijk->qjk", dy.diag, fourth)
            )
            return H * kv[:, None, None]
        hy = dy.drift
        return (
            2.0 * self.beta * np.einsum("qi,qj->qij", Y, Y)
            - 2.0 * (np.einsum("qi,qj->qij", Y, hy) + np.einsum("qi,qj->qij", hy, Y))
            - 2.0 * dy.diffusion
        )

    def k_cross(self, x, y):
        return float(self.k_matrix(np.atleast_1d(x)[None], np.atleast_1d(y)[None])[0, 0])

    def k_cross_grad_x(self, x, y):
        return self.k_grad_x(np.atleast_1d(x), np.atleast_1d(y)[None])[0]

    # -- kappa ---------------------------------------------------------
    def kappa_matrix(self, X, Y=None, dyn_x=None, dyn_y=None):
        X = np.atleast_2d(X)
        dx = self._dyn(X, dyn_x)
        if Y is None:
            Y, dy = X, dx
        else:
            Y = np.atleast_2d(Y)
            dy = self._dyn(Y, dyn_y)
        if self.gaussian:
            return _gauss_a(X, Y, dx, dy, self.base.sigma, self.beta) * self.base.matrix(X, Y)
        return _quad_kappa(X, Y, dx, dy, self.beta)

    def kappa_diag(self, X, dyn_x=None):
        X = np.atleast_2d(X)
        dx = self._dyn(X, dyn_x)
        out = np.empty(len(X))
        for m in range(len(X)):
            out[m] = self.kappa_matrix(X[m : m + 1], None, dx.take(slice(m, m + 1)))[0, 0]
        return out

    def kappa_eval(self, x, y):
        return float(self.kappa_matrix(np.atleast_1d(x)[None], np.atleast_1d(y)[None])[0, 0])

    def gram(self, centers, dyn=None):
        G = self.kappa_matrix(centers, None, dyn)
        return 0.5 * (G + G.T)


def _gauss_a(X, Y, dx, dy, sigma, beta):
    """The multiplier ``a(x, y)`` with ``kappa = a kv`` (diagonal diffusion)."""
    fac = _factors(X[:, None, :] - Y[None, :, :], sigma)
    hx, hy = dx.drift, dy.drift
    Ax, Ay = dx.diag, dy.diag
    a = beta**2 - beta * (
        np.einsum("pqi,qi->pq", fac.a1, hy) - np.einsum("pqi,pi->pq", fac.a1, hx)
    )
    a = a - 0.5 * beta * (np.einsum("pqi,qi->pq", fac.a2, Ay) + np.einsum("pqi,pi->pq", fac.a2, Ax))
    a = a + np.einsum("pqji,qi,pj->pq", fac.a11, hy, hx)
    # second index pairing: A_jj(x) h^i(y) multiplies a12[i, j]
    a = a + 0.5 * (
        np.einsum("pqji,qi,pj->pq", fac.a12, Ay, hx) - np.einsum("pqij,pj,qi->pq", fac.a12, Ax, hy)
    )
    a = a + 0.25 * np.einsum("pqji,qi,pj->pq", fac.a22, Ay, Ax)
    return a


def _third(d, s2):
    # d3 kv / dx_i dx_j dx_k / kv for kv = exp(-|d|^2 / 2 s2)
    n = d.shape[-1]
    e = np.eye(n)
    t = -np.einsum("qi,qj,qk->qijk", d, d, d) / s2**3
    t = t + (
        np.einsum("ij,qk->qijk", e, d) + np.einsum("ik,qj->qijk", e, d) + np.einsum("jk,qi->qijk", e, d)
    ) / s2**2
    return t


def _fourth_ii(d, s2):
    # d4 kv / dx_i^2 dx_j dx_k / kv
    n = d.shape[-1]
    e = np.eye(n)
    dd = np.einsum("qj,qk->qjk", d, d)
    q = d**2  # d_i^2
    # full fourth derivative with indices (i, i, j, k)
    t = np.einsum("qi,qjk->qijk", q, dd) / s2**4
    t = t - (
        np.einsum("qjk->qjk", dd)[:, None, :, :]
        + 2.0 * np.einsum("ij,qi,qk->qijk", e, d, d)
        + 2.0 * np.einsum("ik,qi,qj->qijk", e, d, d)
        + np.einsum("jk,qi->qijk", e, q)
    ) / s2**3
    t = t + (np.ones((n,))[None, :, None, None] * e[None, None] + 2.0 * np.einsum("ij,ik->ijk", e, e)[None]) / s2**2
    return t


def _quad_kappa(X, Y, dx, dy, beta):
    """kappa for the quadratic base with an arbitrary closed loop."""
    s = X @ Y.T  # (p, q)
    hx, hy, Ax, Ay = dx.drift, dy.drift, dx.diffusion, dy.diffusion
    xhy = X @ hy.T  # x . h(y)
    K = beta * s**2 - 2.0 * s * xhy - np.einsum("pi,qij,pj->pq", X, Ay, X)
    # grad_x K . h(x)
    yhx = hx @ Y.T  # h(x) . y
    hxhy = hx @ hy.T
    Ayx = np.einsum("qij,pj->pqi", Ay, X)
    grad_dot = (
        2.0 * beta * s * yhx
        - 2.0 * xhy * yhx
        - 2.0 * s * hxhy
        - 2.0 * np.einsum("pqi,pi->pq", Ayx, hx)
    )
    # 1/2 tr(hess_x K A(x))
    yAy = np.einsum("qi,pij,qj->pq", Y, Ax, Y)
    yAh = np.einsum("qi,pij,qj->pq", Y, Ax, hy)
    trAA = np.einsum("qij,pji->pq", Ay, Ax)
    half_tr = beta * yAy - 2.0 * yAh - trAA
    return beta * K - grad_dot - half_tr


def coherence(dk: DerivedKernel, centers, x, dyn_centers=None, dyn_x=None, diag_centers=None):
    """Max normalized |kappa| between ``x`` and the centers (0 for no centers)."""
    centers = np.atleast_2d(centers)
    if centers.shape[0] == 0 or centers.size == 0:
        return 0.0
    x = np.atleast_2d(x)
    dx = dk._dyn(x, dyn_x)
    kxx = dk.kappa_matrix(x, None, dx)[0, 0]
    if diag_centers is None:
        diag_centers = dk.kappa_diag(centers, dyn_centers)
    kxc = dk.kappa_matrix(x, centers, dx, dyn_centers)[0]
    denom = np.sqrt(np.maximum(kxx * diag_centers, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(denom > 0, np.abs(kxc) / denom, 0.0)
    return float(np.max(c))


@dataclass
class Dictionary:
    """Kernel expansion ``sum_i c_i k(., x_i)`` with coherence-based admission.

    The same centers and coefficients describe the cost estimate (with kappa)
    and the value estimate (with K).
    """

    kernel: DerivedKernel
    tau: float
    centers: np.ndarray = None
    coefficients: np.ndarray = None
    dyn: PointDynamics = None
    diag: np.ndarray = None

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("coherence threshold must lie in (0, 1]")
        n = self.kernel.base.dim
        if self.centers is None:
            self.centers = np.zeros((0, n))
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float)).reshape(-1, n)
        if self.coefficients is None:
            self.coefficients = np.zeros(len(self.centers))
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.dyn is None:
            self.dyn = self.kernel.dynamics(self.centers) if len(self.centers) else PointDynamics.empty(n)
        if self.diag is None:
            self.diag = self.kernel.kappa_diag(self.centers, self.dyn) if len(self.centers) else np.zeros(0)

    def __len__(self):
        return len(self.centers)

    def coherence(self, x, dyn_x=None):
        return coherence(self.kernel, self.centers, x, self.dyn, dyn_x, self.diag)

    def admits(self, x, dyn_x=None):
        x = np.atleast_2d(x)
        dyn_x = self.kernel._dyn(x, dyn_x)
        if self.kernel.kappa_matrix(x, None, dyn_x)[0, 0] <= 0:
            return False
        return self.coherence(x, dyn_x) <= self.tau

    def append(self, x, c, dyn_x=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dyn_x = self.kernel._dyn(x, dyn_x)
        self.centers = np.vstack([self.centers, x])
        self.coefficients = np.append(self.coefficients, c)
        self.dyn = self.dyn.append(dyn_x)
        self.diag = np.append(self.diag, self.kernel.kappa_matrix(x, None, dyn_x)[0, 0])

    def kappa_row(self, x, dyn_x=None):
        if not len(self):
            return np.zeros(0)
        return self.kernel.kappa_matrix(np.atleast_2d(x), self.centers, dyn_x, self.dyn)[0]

    def cost(self, X):
        X = np.atleast_2d(X)
        if not len(self):
            return np.zeros(len(X))
        return self.kernel.kappa_matrix(X, self.centers, None, self.dyn) @ self.coefficients

    def value(self, X):
        X = np.atleast_2d(X)
        if not len(self):
            return np.zeros(len(X))
        return self.kernel.k_matrix(X, self.centers, self.dyn) @ self.coefficients

    def gradient(self, x):
        """Gradient of the value estimate at one state."""
        if not len(self):
            return np.zeros(self.kernel.base.dim)
        return self.coefficients @ self.kernel.k_grad_x(x, self.centers, self.dyn)

    def hessian(self, x):
        if not len(self):
            n = self.kernel.base.dim
            return np.zeros((n, n))
        return np.einsum("q,qij->ij", self.coefficients, self.kernel.k_hess_x(x, self.centers, self.dyn))

    # -- serialization -------------------------------------------------
    def to_dict(self, **extra):
        base = self.kernel.base
        doc = {
            "format": "ctvf-dictionary/1",
            "space": "cost",
            "kernel": "gaussian" if self.kernel.gaussian else "quadratic",
            "sigma": getattr(base, "sigma", None),
            "normalizer_exponent": getattr(base, "L", None),
            "dim": base.dim,
            "beta": self.kernel.beta,
            "tau": self.tau,
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
            "center_drift": self.dyn.drift.tolist(),
            "center_diffusion": self.dyn.diffusion.tolist(),
        }
        doc.update(extra)
        return doc

    def dump(self, path, **extra):
        with open(path, "w") as fh:
            json.dump(self.to_dict(**extra), fh, indent=1)


def base_from_doc(doc):
    if doc["kernel"] == "gaussian":
        return GaussianKernel(doc["sigma"], doc["dim"], doc["normalizer_exponent"])
    return QuadraticKernel(doc["dim"])


def dictionary_from_doc(doc, closed_loop=None):
    """Rebuild a cost-space dictionary; the cached center dynamics are reused."""
    base = base_from_doc(doc)
    n = doc["dim"]
    dyn = PointDynamics(
        np.asarray(doc["center_drift"], dtype=float).reshape(-1, n),
        np.asarray(doc["center_diffusion"], dtype=float).reshape(-1, n, n),
    )
    dk = DerivedKernel(base, closed_loop, doc["beta"])
    return Dictionary(
        dk,
        doc["tau"],
        np.asarray(doc["centers"], dtype=float).reshape(-1, n),
        np.asarray(doc["coefficients"], dtype=float),
        dyn,
    )


def load_dictionary(path, closed_loop=None):
    with open(path) as fh:
        return dictionary_from_doc(json.load(fh), closed_loop)


def coherence_admit(d: Dictionary, dk: DerivedKernel, x):
    if d.kernel is not dk:
        d = Dictionary(dk, d.tau, d.centers, d.coefficients)
    return d.admits(x)


def kv_eval(params: Kernel, x, y):
    return params(np.atleast_1d(x), np.atleast_1d(y))


def k_cross(dk: DerivedKernel, x, y):
    return dk.k_cross(x, y)


def kappa_eval(dk: DerivedKernel, x, y):
    return dk.kappa_eval(x, y)


def k_cross_grad_x(dk: DerivedKernel, x, y):
    return dk.k_cross_grad_x(x, y)


def gram(dk: DerivedKernel, centers):
    return dk.gram(np.atleast_2d(centers))
