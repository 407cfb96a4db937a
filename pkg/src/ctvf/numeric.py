"""Dense linear algebra, Lyapunov solver and seeded random streams."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular


class NotSpd(np.linalg.LinAlgError):
    pass


class NotHurwitz(np.linalg.LinAlgError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    ``jitter`` records the diagonal shift that was needed (0.0 when none).
    """

    source: np.ndarray
    lower: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.lower.shape[0]


def factor_spd(m, sym_tol=1e-9):
    """Cholesky-factor ``m``; retries once with a trace-scaled jitter."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionMismatch(f"expected a nonempty square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotSpd("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > sym_tol * scale:
        raise NotSpd("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    try:
        return SpdFactor(m, np.linalg.cholesky(m))
    except np.linalg.LinAlgError:
        pass
    n = m.shape[0]
    jitter = 1e-10 * np.trace(m) / n
    if not jitter > 0:
        raise NotSpd("non-positive trace, cannot jitter")
    try:
        lower = np.linalg.cholesky(m + jitter * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NotSpd("pivot <= 0 after jitter") from exc
    return SpdFactor(m, lower, jitter)


def solve_spd(f: SpdFactor, rhs):
    """Solve ``source @ x = rhs`` (rhs may be a vector or a matrix of columns)."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != f.n:
        raise DimensionMismatch(f"rhs has {rhs.shape[0]} rows, factor has {f.n}")
    z = solve_triangular(f.lower, rhs, lower=True)
    return solve_triangular(f.lower.T, z, lower=False)


def solve_lyapunov(a_bar, q_bar):
    """Solve ``a_bar.T @ P + P @ a_bar + q_bar = 0`` by vectorization.

    Uses the Kronecker form ``(I kron A^T + A^T kron I) vec(P) = -vec(Q)``;
    intended for small systems only.
    """
    a = np.atleast_2d(np.asarray(a_bar, dtype=float))
    q = np.atleast_2d(np.asarray(q_bar, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise DimensionMismatch("a_bar and q_bar must be square and of equal size")
    if np.any(np.linalg.eigvals(a).real >= 0):
        raise NotHurwitz("closed-loop matrix is not Hurwitz")
    eye = np.eye(n)
    # row-major vec: vec(A^T P) = (A^T kron I) vec(P), vec(P A) = (I kron A^T) vec(P)
    op = np.kron(a.T, eye) + np.kron(eye, a.T)
    try:
        p = np.linalg.solve(op, -q.reshape(-1)).reshape(n, n)
    except np.linalg.LinAlgError as exc:
        raise NotHurwitz("singular Kronecker system") from exc
    return 0.5 * (p + p.T) if np.allclose(q, q.T) else p


@dataclass
class RngStream:
    """Reproducible normal/uniform draws keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox counter-based generator; distinct stream ids give
    independent streams. A stream has a single consumer.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normal(self, n):
        return self._gen.standard_normal(n)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def spawn(self, stream_id):
        """Independent stream sharing this stream's seed."""
        return RngStream(self.seed, stream_id)


def standard_normal(rng: RngStream, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.normal(n)
