"""Closed-form bounds, functionals and limit curves, all in natural-log domain.

Boundary conventions are global: ``0 * log 0 = 0`` and ``(1 - 1) * log(1 - 1) = 0``
(so ``0^0 = 1``). They are realised through :func:`scipy.special.xlogy`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import BoundaryPoint, DomainError, EntryOutOfRange, NotBoolean, OddN
from .matcore import DS_TOL, as_matrix

__all__ = [
    "BoundReport", "log_F", "cw_value", "cw_gradient", "log_vdw", "log_G", "log_G2",
    "log_schrijver_bound", "schrijver_tilde", "log_cpr", "log_cpr_bound", "log_gurvits_bound",
    "log_bregman_upper", "log_holder_upper", "log_lms", "log_sd", "log_lms_kn", "log_sd_kn",
    "log_lms_k", "log_sd_k", "log_F_k", "log_sf", "log_d", "log_d_over_sf", "g_curve",
    "m_curve", "s_curve", "l_curve", "sd_k_rate", "odd_entropy", "od_value",
    "bethe_divergence", "od_uniform_max", "log_subperm_lower_ds", "is_diagonally_dominant",
]


def _unit_entries(M, tol: float = DS_TOL) -> np.ndarray:
    A = as_matrix(M, tol)
    if np.any(A > 1 + tol):
        raise EntryOutOfRange(f"entries must lie in [0, 1], max is {A.max():.17g}")
    return np.minimum(A, 1.0)


def _ent1m(A: np.ndarray) -> np.ndarray:
    # (1 - x) log(1 - x) with 0 log 0 = 0
    return xlogy(1 - A, 1 - A)


# -- Bethe functional -----------------------------------------------------------

def log_F(P, tol: float = DS_TOL) -> float:
    """``sum (1 - P_ij) log(1 - P_ij)``: log of the entrywise lower bound F(P)."""
    return float(_ent1m(_unit_entries(P, tol)).sum())


def cw_value(P, Q, tol: float = DS_TOL) -> float:
    """``CW(P, Q) = sum (1-Q) log(1-Q) - sum Q log(Q / P)``.

    Returns ``-inf`` when ``Q`` puts mass outside the support of ``P``. ``Q`` is
    only range-checked; callers are responsible for it being doubly stochastic.
    """
    P = as_matrix(P, tol)
    Q = _unit_entries(Q, tol)
    pos = Q > 0
    if np.any(pos & (P == 0)):
        return float("-inf")
    kl = float(np.sum(Q[pos] * (np.log(Q[pos]) - np.log(P[pos]))))
    return float(_ent1m(Q).sum()) - kl


def cw_gradient(P, Q, tol: float = DS_TOL) -> np.ndarray:
    """Partial derivatives ``-2 - log(1-Q) - log Q + log P`` on supp(P).

    Entries off the support are NaN (the functional is not differentiable in
    those coordinates).

    Raises:
        BoundaryPoint: some ``Q_ij`` on supp(P) equals 0 or 1.
        DomainError: ``Q`` is positive somewhere outside supp(P).
    """
    P = as_matrix(P, tol)
    Q = _unit_entries(Q, tol)
    supp = P > 0
    if np.any((Q > 0) & ~supp):
        raise DomainError("Q has mass outside the support of P")
    qs = Q[supp]
    if np.any((qs <= 0) | (qs >= 1)):
        raise BoundaryPoint("gradient is unbounded where Q is 0 or 1 on supp(P)")
    G = np.full(P.shape, np.nan)
    G[supp] = -2.0 - np.log1p(-qs) - np.log(qs) + np.log(P[supp])
    return G


# -- scalar helpers -------------------------------------------------------------

def log_vdw(n: int) -> float:
    """``log(n! / n^n)``."""
    if n < 1:
        raise DomainError("vdw(n) needs n >= 1")
    return float(gammaln(n + 1) - n * math.log(n))


def log_G(x: float) -> float:
    """``log G(x) = (x - 1) log((x - 1) / x)`` for ``x >= 1``; ``G(1) = 1``."""
    if x < 1:
        raise DomainError(f"G(x) needs x >= 1, got {x}")
    return float(xlogy(x - 1, (x - 1) / x))


def log_G2(x: float, t: float) -> float:
    """``log G(x, t) = (x - t) log((x - t) / x)`` for ``x >= t >= 0``, ``x > 0``."""
    if not (x > 0 and 0 <= t <= x):
        raise DomainError(f"G(x, t) needs x >= t >= 0 and x > 0, got x={x}, t={t}")
    return float(xlogy(x - t, (x - t) / x))


def log_schrijver_bound(k: int, n: int) -> float:
    """``(k - 1) n log((k - 1) / k)``: min permanent over ``k^-1 Lambda(k, n)``."""
    if k < 1 or n < 1:
        raise DomainError("need k, n >= 1")
    return n * log_G(k)


def schrijver_tilde(A, tol: float = DS_TOL) -> np.ndarray:
    """Entrywise ``A (1 - A)``."""
    A = _unit_entries(A, tol)
    return A * (1 - A)


def log_cpr(P, j: int, tol: float = DS_TOL) -> float:
    """Column product ``sum_i (1 - P_ij) log(1 - P_ij)`` for column ``j`` (0-based)."""
    P = _unit_entries(P, tol)
    return float(_ent1m(P[:, j]).sum())


def log_cpr_bound(P, tol: float = DS_TOL) -> float:
    """``sum_j log G(C_j)`` with ``C_j`` the number of nonzeros in column ``j``."""
    P = _unit_entries(P, tol)
    counts = np.count_nonzero(P, axis=0)
    return float(sum(log_G(max(c, 1)) for c in counts))


def log_gurvits_bound(P, tol: float = DS_TOL) -> float:
    """``sum_j log G(min(j, C_j))`` with columns taken in the given order, j = 1..n."""
    P = _unit_entries(P, tol)
    counts = np.count_nonzero(P, axis=0)
    return float(sum(log_G(max(min(j, c), 1)) for j, c in enumerate(counts, start=1)))


def log_bregman_upper(A) -> float:
    """Bregman: ``per(A) <= prod_i (r_i!)^(1 / r_i)`` for a 0/1 matrix with row sums ``r_i``."""
    A = as_matrix(A)
    if not np.all((A == 0) | (A == 1)):
        raise NotBoolean("Bregman's bound needs a 0/1 matrix")
    r = A.sum(axis=1)
    if np.any(r < 1):
        raise DomainError("Bregman's bound needs every row sum >= 1")
    return float(np.sum(gammaln(r + 1) / r))


def log_holder_upper(A, sum_of_squares: bool = False) -> float:
    """``per(A) <= prod_i (A_ii^2 + s_i^2)^(1/2)``, ``s_i`` the off-diagonal row sum.

    ``sum_of_squares=True`` uses ``sum_{j != i} A_ij^2`` in place of ``s_i^2``.
    That variant is not a valid bound in general (``J_4`` violates it) and is
    kept for comparison only.
    """
    A = as_matrix(A)
    d = np.diag(A)
    off = A - np.diag(d)
    tail = (off**2).sum(axis=1) if sum_of_squares else off.sum(axis=1) ** 2
    with np.errstate(divide="ignore"):
        return float(0.5 * np.sum(np.log(d**2 + tail)))


def is_diagonally_dominant(A) -> bool:
    A = as_matrix(A)
    d = np.diag(A)
    return bool(np.all(d >= A.sum(axis=1) - d))


# -- correlation functionals ----------------------------------------------------

def _leave_one_out_prod(X: np.ndarray) -> np.ndarray:
    # out[i, j] = prod_{k != i} X[k, j], without division.
    n = X.shape[0]
    ones = np.ones((1, X.shape[1]))
    prefix = np.vstack([ones, np.cumprod(X, axis=0)[:-1]])
    suffix = np.vstack([np.cumprod(X[::-1], axis=0)[:-1][::-1], ones]) if n > 1 else ones
    return prefix * suffix


def _no_collision_weights(A: np.ndarray) -> np.ndarray:
    # W[i, j] = A_ij prod_{k != i} (1 - A_kj)
    return A * _leave_one_out_prod(1 - A)


def log_lms(A, tol: float = DS_TOL) -> float:
    """``sum_i log sum_j W_ij`` with ``W_ij = A_ij prod_{k != i} (1 - A_kj)``.

    Row ``i`` contributes the probability that vector ``V_i`` collides with no other.
    """
    W = _no_collision_weights(_unit_entries(A, tol))
    with np.errstate(divide="ignore"):
        return float(np.log(W.sum(axis=1)).sum())


def log_sd(A, tol: float = DS_TOL) -> float:
    """``sum_j log sum_i W_ij``, the column sums of the same weights as :func:`log_lms`.

    Column factor ``j`` equals ``q_(j)(1, ..., 1)`` for doubly stochastic ``A``.
    """
    W = _no_collision_weights(_unit_entries(A, tol))
    with np.errstate(divide="ignore"):
        return float(np.log(W.sum(axis=0)).sum())


def _check_k_params(r: int, n: int, m: int):
    if r < 1 or n < 2 or not 1 <= m <= n:
        raise DomainError(f"need r >= 1, n >= 2, 1 <= m <= n; got r={r}, n={n}, m={m}")


def log_lms_k(r: int, n: int, m: int) -> float:
    """Closed form of ``log LMS(K)`` for ``K = k_embed(A, m, t/r, 1/n)``, ``A`` in RB(r, n)."""
    _check_k_params(r, n, m)
    t, k = m / n, n - m
    lq = math.log1p(-1 / n)
    top = t * math.exp(xlogy(r - 1, 1 - t / r) + k * lq) + (1 - t) * math.exp((n - 1) * lq)
    bottom = (k - 1) * lq + r * math.log1p(-t / r) if k else 0.0
    return n * math.log(top) + k * bottom


def log_sd_k(r: int, n: int, m: int) -> float:
    """Closed form of ``log SD(K)`` for the same bordered matrix as :func:`log_lms_k`.

    Derived by evaluating each column factor directly: a left column holds ``r``
    entries ``t/r`` and ``n - m`` entries ``1/n``; a right column holds ``n``
    entries ``1/n``.
    """
    _check_k_params(r, n, m)
    t, k = m / n, n - m
    lq = math.log1p(-1 / n)
    la = math.log1p(-t / r) if t < r else float("-inf")
    left = t * math.exp(xlogy(r - 1, 1 - t / r) + k * lq)
    if k:
        left += (1 - t) * math.exp(r * la + (k - 1) * lq)
    return n * math.log(left) + k * (n - 1) * lq


def log_F_k(r: int, n: int, m: int) -> float:
    """``log F(K) = (r - t) n log(1 - t/r) + 2 n (n - m)(1 - 1/n) log(1 - 1/n)``."""
    _check_k_params(r, n, m)
    t = m / n
    return float(n * xlogy(r - t, 1 - t / r) + 2 * n * (n - m) * xlogy(1 - 1 / n, 1 - 1 / n))


def log_lms_kn(n: int) -> float:
    """``log LMS(K_n)`` for the r = 1, t = 1/2 counterexample family."""
    if n < 2 or n % 2:
        raise OddN(f"K_n needs even n >= 2, got {n}")
    return log_lms_k(1, n, n // 2)


def log_sd_kn(n: int) -> float:
    if n < 2 or n % 2:
        raise OddN(f"K_n needs even n >= 2, got {n}")
    return log_sd_k(1, n, n // 2)


# -- monomer-dimer bounds -------------------------------------------------------

def log_sf(r: int, n: int, m: int) -> float:
    """Lower bound on ``per_m(A)`` for ``A`` in RI(r, n), with ``t = m/n``, ``alpha = t/r``.

    ``SF = (1-alpha)^((1-alpha) n r) (1-1/n)^((1-1/n) 2 n^2 (1-t))
           / (alpha^(n t) n^(-2n(1-t)) ((n-m)!)^2)``
    """
    if r < 1 or not 1 <= m <= n:
        raise DomainError(f"need r >= 1 and 1 <= m <= n; got r={r}, n={n}, m={m}")
    t = m / n
    alpha = t / r
    k = n - m
    return float(
        n * r * xlogy(1 - alpha, 1 - alpha)
        + 2 * n * k * xlogy(1 - 1 / n, 1 - 1 / n)
        - m * math.log(alpha)
        + 2 * k * math.log(n)
        - 2 * gammaln(k + 1)
    )


def log_d(r: int, n: int, m: int) -> float:
    """Lower Matching Conjecture value ``C(n,m)^2 ((r-t)/r)^(n(r-t)) (t r)^(n t)``."""
    if r < 1 or not 1 <= m <= n:
        raise DomainError(f"need r >= 1 and 1 <= m <= n; got r={r}, n={n}, m={m}")
    t = m / n
    lbinom = gammaln(n + 1) - gammaln(m + 1) - gammaln(n - m + 1)
    return float(2 * lbinom + n * xlogy(r - t, (r - t) / r) + m * math.log(t * r))


def log_d_over_sf(n: int, m: int) -> float:
    """``log(D / SF) = 2 (sum_{k=m+1}^{n} log G(k) - (n - m) log G(n))``, independent of r.

    Positive for ``m < n`` because ``G`` is decreasing.
    """
    if not 1 <= m <= n:
        raise DomainError(f"need 1 <= m <= n; got n={n}, m={m}")
    return 2.0 * (math.fsum(log_G(k) for k in range(m + 1, n + 1)) - (n - m) * log_G(n))


def log_subperm_lower_ds(P, m: int, tol: float = DS_TOL) -> float:
    """Lower bound on ``per_m(P)`` for doubly stochastic ``P``.

    ``prod_{i,j} (1 - t P_ij)^(1 - t P_ij) G(n)^(2(n-m)) / (t^m n^(-2(n-m)) ((n-m)!)^2)``
    with ``t = m/n``.
    """
    P = _unit_entries(P, tol)
    n = P.shape[0]
    if not 1 <= m <= n:
        raise DomainError(f"need 1 <= m <= n; got n={n}, m={m}")
    t = m / n
    k = n - m
    return float(
        _ent1m(t * P).sum()
        + 2 * k * log_G(n)
        - m * math.log(t)
        + 2 * k * math.log(n)
        - 2 * gammaln(k + 1)
    )


# -- limit curves ---------------------------------------------------------------

def _check_rt(r, t):
    if r < 1 or not 0 <= t <= 1:
        raise DomainError(f"need r >= 1 and t in [0, 1]; got r={r}, t={t}")


def g_curve(r: float, t: float) -> float:
    """``t log(r/t) - 2(1-t) log(1-t) + (r-t) log(1-t/r)``."""
    _check_rt(r, t)
    return float(t * math.log(r) - xlogy(t, t) - 2 * xlogy(1 - t, 1 - t) + xlogy(r - t, 1 - t / r))


def m_curve(r: float, t: float) -> float:
    """``(r-t) log(1-t/r) - 2(1-t)``."""
    _check_rt(r, t)
    return float(xlogy(r - t, 1 - t / r) - 2 * (1 - t))


def s_curve(r: float, t: float) -> float:
    """``log(t (1-t/r)^(r-1) e^-(1-t) + (1-t) e^-1) - (1-t)^2 + r (1-t) log(1-t/r)``."""
    _check_rt(r, t)
    inner = t * math.exp(xlogy(r - 1, 1 - t / r) - (1 - t)) + (1 - t) * math.exp(-1)
    return float(math.log(inner) - (1 - t) ** 2 + r * xlogy(1 - t, 1 - t / r))


def l_curve(r: float, t: float) -> float:
    """``(r-1) log(1-t/r) - 2(1-t)``."""
    _check_rt(r, t)
    return float(xlogy(r - 1, 1 - t / r) - 2 * (1 - t))


def sd_k_rate(r: float, t: float) -> float:
    """Limit of ``log SD(K) / n`` obtained from :func:`log_sd_k`.

    Equals ``l_curve(r, t) + log(1 - t(1-t)/r)``.
    """
    return l_curve(r, t) + math.log1p(-t * (1 - t) / r)


# -- simplex functionals --------------------------------------------------------

def odd_entropy(p):
    """``p log p - (1-p) log(1-p)`` on [0, 1]. Accepts scalars or arrays."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("odd entropy is defined on [0, 1]")
    out = xlogy(p, p) - xlogy(1 - p, 1 - p)
    return float(out) if out.ndim == 0 else out


def od_value(q, p) -> float:
    """``sum (1 - q_i) log(1 - q_i) - q_i log(q_i / p_i)`` for ``q`` on the simplex, ``p > 0``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((q < 0) | (q > 1)) or np.any(p <= 0):
        raise DomainError("need q in [0, 1]^n and p > 0")
    return float(np.sum(xlogy(1 - q, 1 - q) - xlogy(q, q) + xlogy(q, p)))


def bethe_divergence(x, y) -> float:
    """``sum x log(x/y) - (1-x) log((1-x)/(1-y))``: Bregman distance of the odd entropy."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any((y <= 0) | (y >= 1)):
        raise DomainError("need x in [0, 1]^n and y in (0, 1)^n")
    return float(np.sum(xlogy(x, x) - xlogy(x, y) - xlogy(1 - x, 1 - x) + xlogy(1 - x, 1 - y)))


def od_uniform_max(n: int, c: float = 1.0) -> float:
    """Maximum of ``od_value(q, c e)`` over the simplex, attained at ``q = e / n``."""
    if n < 2 or c <= 0:
        raise DomainError("need n >= 2 and c > 0")
    return (n - 1) * math.log1p(-1 / n) + math.log(n) + math.log(c)


# -- report container -----------------------------------------------------------

def _num(x):
    if x is None:
        return None
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if x == float("-inf"):
        return "-inf"
    if x == float("inf"):
        return "inf"
    return x


@dataclass
class BoundReport:
    """Every bound for one matrix, as natural logs of bounds on ``per`` of that matrix."""

    matrix_id: str
    n: int
    log_F: float
    log_lms: float
    log_sd: float
    log_vdw: float
    log_cpr_bound: float
    log_gurvits_bound: float
    log_per_exact: Optional[float] = None
    log_max_cw: Optional[float] = None
    log_bregman: Optional[float] = None
    log_holder_upper: Optional[float] = None

    FIELDS = (
        "matrix_id", "n", "log_per_exact", "log_F", "log_max_cw", "log_lms", "log_sd",
        "log_vdw", "log_bregman", "log_holder_upper", "log_cpr_bound", "log_gurvits_bound",
    )

    def chain_ok(self, tol: float = 1e-7) -> bool:
        """``log_per_exact >= log_max_cw >= log_F`` wherever the terms are present."""
        ok = True
        if self.log_max_cw is not None:
            ok &= self.log_max_cw >= self.log_F - tol
            if self.log_per_exact is not None:
                ok &= self.log_per_exact >= self.log_max_cw - tol
        elif self.log_per_exact is not None:
            ok &= self.log_per_exact >= self.log_F - tol
        return bool(ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: _num(d[k]) for k in self.FIELDS}
