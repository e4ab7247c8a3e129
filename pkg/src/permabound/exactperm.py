"""Exact permanents and m-subpermanent sums.

These are the ground-truth oracles for every inequality check in the package,
so each fast routine has an independent brute-force twin:

* :func:`permanent_ryser` (Gray-code Ryser) vs :func:`permanent_brute`
* :func:`subperm_vector` (column-subset DP) vs :func:`subperm_brute`
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import BadDimensions, OddN, TooLarge
from .matcore import as_matrix, k_embed

RYSER_MAX_N = 30
# Above this size the double-double kernel gets slow; fall back to plain Kahan.
RYSER_DD_MAX_N = 24
BRUTE_MAX_N = 9
DP_MAX_N = 22
SUBPERM_BRUTE_MAX_N = 7


@dataclass(frozen=True)
class LogValue:
    """A nonnegative number stored as its natural log."""

    log_magnitude: float
    is_zero: bool = False

    @classmethod
    def zero(cls) -> "LogValue":
        return cls(float("-inf"), True)

    @classmethod
    def from_value(cls, x: float) -> "LogValue":
        if x < 0:
            raise ValueError(f"LogValue holds nonnegative numbers, got {x}")
        return cls.zero() if x == 0 else cls(math.log(x))

    @property
    def log(self) -> float:
        """``-inf`` for zero, otherwise the stored magnitude."""
        return float("-inf") if self.is_zero else self.log_magnitude

    @property
    def value(self) -> float:
        return 0.0 if self.is_zero else math.exp(self.log_magnitude)

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class SubpermVector:
    """``values[m]`` is the sum of permanents of all m x m submatrices."""

    n: int
    values: np.ndarray

    def __getitem__(self, m: int) -> float:
        return float(self.values[m])


@numba.njit(cache=True)
def _ryser_gray(A):
    # Gray-code Ryser: per(A) = (-1)^n sum_S (-1)^|S| prod_i sum_{j in S} A[i, j].
    # Kahan-compensated accumulation of the 2^n - 1 signed terms.
    n = A.shape[0]
    rowsum = np.zeros(n)
    total = 0.0
    comp = 0.0
    in_set = np.zeros(n, dtype=np.bool_)
    size = 0
    for k in range(1, 1 << n):
        j = 0
        while not (k >> j) & 1:
            j += 1
        if in_set[j]:
            in_set[j] = False
            size -= 1
            for i in range(n):
                rowsum[i] -= A[i, j]
        else:
            in_set[j] = True
            size += 1
            for i in range(n):
                rowsum[i] += A[i, j]
        term = 1.0
        for i in range(n):
            term *= rowsum[i]
        if (n - size) & 1:
            term = -term
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


@numba.njit(inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@numba.njit(inline="always")
def _two_prod(a, b):
    # Dekker product: p + e == a * b exactly.
    p = a * b
    c = 134217729.0 * a
    ah = c - (c - a)
    al = a - ah
    c = 134217729.0 * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@numba.njit(cache=True)
def _ryser_gray_dd(A):
    # Same sweep as _ryser_gray with row sums, products and the running total
    # carried as double-double pairs. Terms reach prod(row sums), which can
    # exceed per(A) by many orders of magnitude, so single rounding per term
    # is not enough for near-uniform matrices.
    n = A.shape[0]
    rh = np.zeros(n)
    rl = np.zeros(n)
    th = 0.0
    tl = 0.0
    in_set = np.zeros(n, dtype=np.bool_)
    size = 0
    for k in range(1, 1 << n):
        j = 0
        while not (k >> j) & 1:
            j += 1
        sgn = -1.0 if in_set[j] else 1.0
        in_set[j] = not in_set[j]
        size += 1 if sgn > 0 else -1
        for i in range(n):
            s, e = _two_sum(rh[i], sgn * A[i, j])
            rh[i], rl[i] = _two_sum(s, e + rl[i])
        ph = 1.0
        pl = 0.0
        for i in range(n):
            p, e = _two_prod(ph, rh[i])
            ph, pl = _two_sum(p, e + ph * rl[i] + pl * rh[i])
        if (n - size) & 1:
            ph = -ph
            pl = -pl
        s, e = _two_sum(th, ph)
        th, tl = _two_sum(s, e + tl + pl)
    return th + tl


def permanent_ryser(M) -> LogValue:
    """Exact permanent of a nonnegative matrix, ``n <= 30``, in log domain.

    Rows are rescaled to unit maximum before the Gray-code sweep so the signed
    partial sums stay in a well-conditioned range; the factors are added back
    in log space.

    For ``n <= RYSER_DD_MAX_N`` the sweep runs in double-double arithmetic and
    is accurate to about 1e-14 relative even for near-uniform matrices. Beyond
    that the plain Kahan kernel is used; its relative error scales like
    ``eps * prod(row sums) / per(A)``, which for ``J_n`` at ``n = 22`` is
    already about 1e-6.
    """
    A = as_matrix(M)
    n = A.shape[0]
    if n > RYSER_MAX_N:
        raise TooLarge(f"Ryser permanent limited to n <= {RYSER_MAX_N}, got {n}")
    rowmax = A.max(axis=1)
    if np.any(rowmax == 0):
        return LogValue.zero()
    kernel = _ryser_gray_dd if n <= RYSER_DD_MAX_N else _ryser_gray
    total = kernel(np.ascontiguousarray(A / rowmax[:, None]))
    if total <= 0:
        # Only reachable when per is zero (or lost entirely to rounding).
        return LogValue.zero()
    return LogValue(float(np.log(rowmax).sum() + math.log(total)))


def permanent_brute(M) -> float:
    """Sum over all n! permutations. Oracle for :func:`permanent_ryser`."""
    A = as_matrix(M)
    n = A.shape[0]
    if n > BRUTE_MAX_N:
        raise TooLarge(f"brute-force permanent limited to n <= {BRUTE_MAX_N}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    terms = np.prod(A[np.arange(n), perms], axis=1)
    return math.fsum(terms)


def _popcounts(nbits: int) -> np.ndarray:
    pc = np.zeros(1 << nbits, dtype=np.int64)
    for j in range(nbits):
        pc.reshape(-1, 2, 1 << j)[:, 1, :] += 1
    return pc


def subperm_vector(M) -> SubpermVector:
    """All m-subpermanent sums ``per_0 .. per_n`` in one DP pass.

    The state is the set of already-used columns. Each row is either skipped
    or matched to an unused column, so after the last row ``dp[mask]`` is the
    weighted count of matchings covering exactly the columns in ``mask``.
    """
    A = as_matrix(M)
    n = A.shape[0]
    if n > DP_MAX_N:
        raise TooLarge(f"subpermanent DP limited to n <= {DP_MAX_N}, got {n}")
    dp = np.zeros(1 << n)
    dp[0] = 1.0
    for i in range(n):
        new = dp.copy()
        for j in range(n):
            if A[i, j] == 0:
                continue
            src = dp.reshape(-1, 2, 1 << j)
            new.reshape(-1, 2, 1 << j)[:, 1, :] += A[i, j] * src[:, 0, :]
        dp = new
    values = np.bincount(_popcounts(n), weights=dp, minlength=n + 1)
    return SubpermVector(n=n, values=values)


def subperm_sum_dp(M, m: int) -> float:
    A = as_matrix(M)
    if not 0 <= m <= A.shape[0]:
        raise BadDimensions(f"need 0 <= m <= n, got m={m}")
    return float(subperm_vector(A).values[m])


def subperm_brute(M, m: int) -> float:
    """Explicit sum over row/column subsets of size ``m``. Oracle, ``n <= 7``."""
    A = as_matrix(M)
    n = A.shape[0]
    if n > SUBPERM_BRUTE_MAX_N:
        raise TooLarge(f"brute-force subpermanent limited to n <= {SUBPERM_BRUTE_MAX_N}, got {n}")
    if not 0 <= m <= n:
        raise BadDimensions(f"need 0 <= m <= n, got m={m}")
    if m == 0:
        return 1.0
    subsets = list(itertools.combinations(range(n), m))
    return math.fsum(
        permanent_brute(A[np.ix_(S, T)]) for S in subsets for T in subsets
    )


def perm_via_k_identity(A, m: int, a: float, b: float) -> float:
    """``per_m(A)`` recovered from the permanent of the bordered matrix.

    ``per_m(A) = per(K) / (a^m b^(2(n-m)) ((n-m)!)^2)`` with ``K = k_embed(A, m, a, b)``.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if 2 * n - m > DP_MAX_N:
        raise TooLarge(f"bordered matrix of size {2 * n - m} exceeds {DP_MAX_N}")
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    lp = permanent_ryser(k_embed(A, m, a, b))
    if lp.is_zero:
        return 0.0
    k = n - m
    return math.exp(lp.log_magnitude - m * math.log(a) - 2 * k * math.log(b) - 2 * gammaln(k + 1))


def permanent_aJbI(n: int, a: float, b: float) -> LogValue:
    """``per(aJ_n + bI_n) = n! a^n sum_{i<=n} (b/a)^i / i!``, evaluated in log space."""
    if n < 1 or a <= 0 or b < 0:
        raise ValueError("need n >= 1, a > 0, b >= 0")
    if b == 0:
        return LogValue(float(gammaln(n + 1) + n * math.log(a)))
    i = np.arange(n + 1)
    series = logsumexp(i * math.log(b / a) - gammaln(i + 1))
    return LogValue(float(gammaln(n + 1) + n * math.log(a) + series))


def log_perm_kn(n: int) -> LogValue:
    """Closed form ``per(K_n) = n!/n^n * 2^(-n/2)``."""
    if n < 2 or n % 2:
        raise OddN(f"K_n is defined for even n >= 2, got {n}")
    return LogValue(float(gammaln(n + 1) - n * math.log(n) - 0.5 * n * math.log(2)))
