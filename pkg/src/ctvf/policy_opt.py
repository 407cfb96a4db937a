"""Greedy policy updates constrained by a control barrier certificate.

The update at ``x`` is the small QP

    min_u  0.5 u^T M u + (dV/dx g(x)) u
    s.t.   u in box,  -(db/dx g(x)) u <= db/dx f(x) + alpha(b(x))

solved exactly by active-set enumeration.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog, nnls

FEAS_TOL = 1e-9


class Infeasible(ValueError):
    pass


class UncertifiedSetting(ValueError):
    pass


@dataclass(frozen=True)
class BarrierSpec:
    """Safe set ``{b >= 0}`` with class-K function ``alpha(s) = gain * s``."""

    b: Callable
    grad_b: Callable
    gain: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("barrier gain must be positive")

    def alpha(self, s):
        return self.gain * s


def barrier_row(bs: BarrierSpec, f, g, x):
    """The barrier condition as one ``row @ u <= bound`` halfspace."""
    x = np.asarray(x, dtype=float)
    db = np.asarray(bs.grad_b(x), dtype=float)
    row = -(db @ np.atleast_2d(g(x)))
    bound = float(db @ np.asarray(f(x), dtype=float) + bs.alpha(bs.b(x)))
    return row, bound


def box_rows(low, high):
    low, high = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
    n = len(low)
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([high, -low])


@dataclass(frozen=True)
class QpProblem:
    """``min u^T H u + 2 v^T u`` subject to ``A_le u <= a_le``."""

    H: np.ndarray
    v: np.ndarray
    A_le: np.ndarray = None
    a_le: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n) or not np.allclose(H, H.T) or np.any(np.linalg.eigvalsh(H) <= 0):
            raise ValueError("H must be symmetric positive definite")
        A = np.zeros((0, n)) if self.A_le is None else np.atleast_2d(np.asarray(self.A_le, dtype=float))
        a = np.zeros(0) if self.a_le is None else np.atleast_1d(np.asarray(self.a_le, dtype=float))
        if A.shape[1] != n or len(A) != len(a):
            raise ValueError("constraint rows do not match the problem size")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "v", np.atleast_1d(np.asarray(self.v, dtype=float)))
        object.__setattr__(self, "A_le", A)
        object.__setattr__(self, "a_le", a)

    @property
    def n(self):
        return self.H.shape[0]

    def objective(self, u):
        u = np.asarray(u, dtype=float)
        return float(u @ self.H @ u + 2.0 * self.v @ u)

    def violation(self, u):
        if not len(self.a_le):
            return 0.0
        return float(max(0.0, np.max(self.A_le @ u - self.a_le)))


def _equality_min(p: QpProblem, S):
    """Minimizer of the objective on ``A_S u = a_S`` (None if rows are dependent)."""
    n = p.n
    if not S:
        return np.linalg.solve(p.H, -p.v)
    A = p.A_le[list(S)]
    if np.linalg.matrix_rank(A) < len(S):
        return None
    kkt = np.block([[2.0 * p.H, A.T], [A, np.zeros((len(S), len(S)))]])
    rhs = np.concatenate([-2.0 * p.v, p.a_le[list(S)]])
    return np.linalg.solve(kkt, rhs)[:n]


def solve_qp(p: QpProblem):
    """Exact minimizer by enumerating active sets of at most ``n`` rows."""
    m = len(p.a_le)
    best, best_obj = None, math.inf
    for k in range(min(p.n, m) + 1):
        for S in itertools.combinations(range(m), k):
            u = _equality_min(p, S)
            if u is None:
                continue
            if m and np.max(p.A_le @ u - p.a_le) > FEAS_TOL:
                continue
            obj = p.objective(u)
            if obj < best_obj - 1e-15:
                best, best_obj = u, obj
        if best is not None and k == 0:
            return best
    if best is None:
        raise Infeasible("no control satisfies all constraint rows")
    return best


def kkt_residual(p: QpProblem, u, active_tol=1e-8):
    """Max of stationarity, primal infeasibility and complementarity residuals."""
    u = np.asarray(u, dtype=float)
    grad = 2.0 * (p.H @ u + p.v)
    slack = p.a_le - p.A_le @ u if len(p.a_le) else np.zeros(0)
    active = np.flatnonzero(np.abs(slack) <= active_tol * max(1.0, np.max(np.abs(p.a_le), initial=0.0)))
    if len(active):
        lam, stat = nnls(p.A_le[active].T, -grad)
        comp = float(np.max(np.abs(lam * slack[active])))
    else:
        stat, comp = float(np.linalg.norm(grad)), 0.0
    return max(float(stat), p.violation(u), comp)


def feasible_width(rows, bounds):
    """``max w`` such that ``rows @ u + w <= bounds`` for some ``u``.

    Exact vertex enumeration for at most two controls, LP otherwise.
    Returns ``inf`` when the width is unbounded.
    """
    A = np.atleast_2d(np.asarray(rows, dtype=float))
    a = np.atleast_1d(np.asarray(bounds, dtype=float))
    n = A.shape[1]
    Aw = np.hstack([A, np.ones((len(A), 1))])
    if n <= 2 and np.linalg.matrix_rank(Aw) == n + 1:
        best, best_z = -math.inf, None
        for S in itertools.combinations(range(len(A)), n + 1):
            B = Aw[list(S)]
            if abs(np.linalg.det(B)) < 1e-14:
                continue
            z = np.linalg.solve(B, a[list(S)])
            if np.max(Aw @ z - a) <= FEAS_TOL * max(1.0, np.max(np.abs(a))) and z[-1] > best:
                best, best_z = z[-1], z
        if best_z is not None:
            # dual certificate: y >= 0 on tight rows with A^T y = 0 and sum y = 1
            tight = np.flatnonzero(np.abs(Aw @ best_z - a) <= 1e-9 * max(1.0, np.max(np.abs(a))))
            target = np.zeros(n + 1)
            target[-1] = 1.0
            _, res = nnls(Aw[tight].T, target)
            if res <= 1e-9:
                return float(best)
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=Aw, b_ub=a, bounds=[(None, None)] * (n + 1), method="highs")
    if res.status == 3:
        return math.inf
    if res.status != 0:
        raise RuntimeError(f"width LP failed: {res.message}")
    return float(-res.fun)


@dataclass
class PolicyMetrics:
    evaluations: int = 0
    barrier_activations: int = 0
    infeasible_events: int = 0
    min_width: float = math.inf

    def as_dict(self):
        return {
            "evaluations": self.evaluations,
            "barrier_activations": self.barrier_activations,
            "infeasible_events": self.infeasible_events,
            "min_width": self.min_width,
        }


@dataclass
class CertifiedPolicy:
    """Greedy policy w.r.t. a value estimate, filtered by an optional barrier.

    ``value`` needs a ``gradient(x)`` method. Certification assumes a
    diffusion-free model; stochastic models are refused when a barrier is set
    unless ``allow_uncertified`` is passed.
    """

    value: object
    f: Callable
    g: Callable
    M: np.ndarray
    u_low: np.ndarray
    u_high: np.ndarray
    barrier: Optional[BarrierSpec] = None
    diffusion_free: bool = True
    allow_uncertified: bool = False
    exploration_std: float = 0.0
    rng: object = None
    track_width: bool = True
    metrics: PolicyMetrics = field(default_factory=PolicyMetrics)

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.u_low = np.atleast_1d(np.asarray(self.u_low, dtype=float))
        self.u_high = np.atleast_1d(np.asarray(self.u_high, dtype=float))
        if self.barrier is not None and not self.diffusion_free and not self.allow_uncertified:
            raise UncertifiedSetting("barrier certification needs a diffusion-free model")
        if self.exploration_std > 0 and self.rng is None:
            raise ValueError("exploration noise needs an rng")

    def __call__(self, x):
        return greedy_update(self, x)

    def rows(self, x):
        A, a = box_rows(self.u_low, self.u_high)
        if self.barrier is None:
            return A, a, None
        row, bound = barrier_row(self.barrier, self.f, self.g, x)
        return np.vstack([A, row]), np.append(a, bound), len(a)


def certified_policy(env, value, barrier=True, allow_uncertified=False, **kw):
    model = env.model
    if not model.control_affine:
        raise ValueError("greedy updates need a control-affine model")
    x0 = np.zeros(model.n_x)
    return CertifiedPolicy(
        value=value,
        f=model.f,
        g=model.g,
        M=env.cost.M,
        u_low=model.u_low,
        u_high=model.u_high,
        barrier=env.barrier if barrier else None,
        diffusion_free=model.diffusion_free(x0, np.zeros(model.n_u)),
        allow_uncertified=allow_uncertified,
        **kw,
    )


def _least_violating(row, low, high, p):
    """Box point minimizing ``row @ u``; free coordinates take the clipped minimizer of ``p``."""
    u = np.clip(-p, low, high)
    u = np.where(row > 0, low, np.where(row < 0, high, u))
    return u


def greedy_update(cp: CertifiedPolicy, x):
    """``argmin_{u in S(x)} 0.5 u^T M u + (dV/dx g(x)) u``, always inside the box."""
    x = np.asarray(x, dtype=float)
    p = np.atleast_2d(cp.g(x)).T @ np.asarray(cp.value.gradient(x), dtype=float)
    A, a, brow = cp.rows(x)
    qp = QpProblem(0.5 * cp.M, 0.5 * p, A, a)
    m = cp.metrics
    m.evaluations += 1
    if cp.track_width and brow is not None:
        m.min_width = min(m.min_width, feasible_width(A, a))
    try:
        u = solve_qp(qp)
        if brow is not None and abs(A[brow] @ u - a[brow]) <= 1e-9 * max(1.0, abs(a[brow])):
            m.barrier_activations += 1
    except Infeasible:
        m.infeasible_events += 1
        u = _least_violating(A[brow], cp.u_low, cp.u_high, np.linalg.solve(cp.M, p))
    if cp.exploration_std > 0:
        u = u + cp.exploration_std * cp.rng.normal(len(u))
    return np.clip(u, cp.u_low, cp.u_high)


@dataclass(frozen=True)
class LipschitzReport:
    min_width: float
    lipschitz_ratio: float
    flagged: tuple  # indices of samples with width <= 0

    @property
    def ok(self):
        return not self.flagged


def lipschitz_diagnostic(cp: CertifiedPolicy, X):
    """Minimum feasible width and the empirical Lipschitz ratio over sample pairs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) < 2:
        raise ValueError("need at least two sample points")
    widths = np.array([feasible_width(*cp.rows(x)[:2]) for x in X])
    U = np.array([greedy_update(cp, x) for x in X])
    i, j = np.triu_indices(len(X), 1)
    dx = np.linalg.norm(X[i] - X[j], axis=1)
    du = np.linalg.norm(U[i] - U[j], axis=1)
    ok = dx > 0
    ratio = float(np.max(du[ok] / dx[ok])) if np.any(ok) else 0.0
    return LipschitzReport(float(np.min(widths)), ratio, tuple(int(k) for k in np.flatnonzero(widths <= 0)))
