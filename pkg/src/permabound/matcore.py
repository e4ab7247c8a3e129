"""Matrix validation, support analysis, Sinkhorn scaling and named matrix families.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every public
function accepts anything array-like and validates it through
:func:`as_matrix`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching

from .errors import BadDimensions, NoPerfectMatching, NotConverged, OddN, ValidationError

DS_TOL = 1e-9
SINKHORN_MAX_ITER = 10_000


def as_matrix(M, tol: float = DS_TOL) -> np.ndarray:
    """Validate ``M`` as a square nonnegative matrix and return a float64 copy.

    Entries in ``[-tol, 0)`` are clamped to zero; anything more negative is an
    error, as are NaN/inf entries and non-square shapes.
    """
    A = np.array(M, dtype=float, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValidationError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix has non-finite entries")
    if np.any(A < -tol):
        raise ValidationError(f"matrix has entries below -{tol:g}")
    A[A < 0] = 0.0
    return A


def is_doubly_stochastic(M, tol: float = DS_TOL) -> bool:
    A = as_matrix(M, tol)
    if np.any(A > 1 + tol):
        return False
    return bool(
        np.all(np.abs(A.sum(axis=1) - 1) <= tol) and np.all(np.abs(A.sum(axis=0) - 1) <= tol)
    )


@dataclass(frozen=True)
class StochScale:
    """Diagonal scalings with ``Diag(row_factors) @ M @ Diag(col_factors)`` doubly stochastic."""

    row_factors: np.ndarray
    col_factors: np.ndarray

    def __post_init__(self):
        for v in (self.row_factors, self.col_factors):
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise ValidationError("scaling factors must be positive and finite")

    def apply(self, M) -> np.ndarray:
        return self.row_factors[:, None] * np.asarray(M, dtype=float) * self.col_factors[None, :]

    def unapply(self, S) -> np.ndarray:
        return np.asarray(S, dtype=float) / self.row_factors[:, None] / self.col_factors[None, :]

    @property
    def log_det(self) -> float:
        """``sum(log a_i) + sum(log b_j)``; per(apply(M)) = exp(log_det) * per(M)."""
        return float(np.log(self.row_factors).sum() + np.log(self.col_factors).sum())


@dataclass(frozen=True)
class SupportPattern:
    mask: np.ndarray
    max_matching: int
    matching: np.ndarray  # column matched to each row, -1 where unmatched

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def has_perfect_matching(self) -> bool:
        return self.max_matching == self.n


def support_pattern(M) -> SupportPattern:
    A = as_matrix(M)
    mask = A > 0
    match = maximum_bipartite_matching(csr_matrix(mask.astype(np.int8)), perm_type="column")
    match = np.asarray(match, dtype=np.int64)
    return SupportPattern(mask=mask, max_matching=int(np.sum(match >= 0)), matching=match)


def total_support(M) -> np.ndarray:
    """Boolean mask of the entries that lie on at least one perfect matching.

    Uses the alternating-cycle criterion: with a fixed perfect matching ``mu``,
    entry ``(i, j)`` is usable iff columns ``mu[i]`` and ``j`` are strongly
    connected in the digraph ``mu[k] -> l`` for every support entry ``(k, l)``.
    Returns an all-false mask when no perfect matching exists.
    """
    sp = support_pattern(M)
    n = sp.n
    if not sp.has_perfect_matching:
        return np.zeros((n, n), dtype=bool)
    mu = sp.matching
    rows, cols = np.nonzero(sp.mask)
    graph = csr_matrix((np.ones(len(rows)), (mu[rows], cols)), shape=(n, n))
    _, label = connected_components(graph, directed=True, connection="strong")
    return sp.mask & (label[mu][:, None] == label[None, :])


def sinkhorn_scale(M, tol: float = DS_TOL, max_iter: int = SINKHORN_MAX_ITER):
    """Alternating row/column normalisation.

    Returns ``(S, scale)`` with ``S = scale.apply(M)`` doubly stochastic within
    ``tol``. The scaled matrix is recomputed from the accumulated factors, so
    ``scale.unapply(S)`` reproduces ``M`` up to rounding.

    Raises:
        NoPerfectMatching: the support admits no permutation (per(M) = 0).
        NotConverged: the support has a perfect matching but not total support
            (no exact scaling exists), or ``max_iter`` was exhausted.
    """
    A = as_matrix(M, tol)
    n = A.shape[0]
    sp = support_pattern(A)
    if not sp.has_perfect_matching:
        raise NoPerfectMatching(f"support has maximum matching {sp.max_matching} < {n}")
    if np.any(sp.mask & ~total_support(A)):
        raise NotConverged("support lacks total support; no diagonal scaling is doubly stochastic")

    a = 1.0 / A.sum(axis=1)
    b = np.ones(n)
    for _ in range(max_iter):
        b = 1.0 / (A.T @ a)
        a = 1.0 / (A @ b)
        S = a[:, None] * A * b[None, :]
        if np.max(np.abs(S.sum(axis=0) - 1)) <= tol and np.max(np.abs(S.sum(axis=1) - 1)) <= tol:
            break
    else:
        raise NotConverged(f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations")
    scale = StochScale(row_factors=a, col_factors=b)
    return scale.apply(A), scale


def random_doubly_stochastic(n: int, rng: np.random.Generator, density: float = 1.0) -> np.ndarray:
    """Sinkhorn image of a random nonnegative matrix.

    With ``density < 1`` entries are zeroed at random, a random permutation is
    forced into the support, and entries outside the total support are dropped
    so the scaling exists. A draw whose scaling stalls (an entry near 1e-10
    makes Sinkhorn sublinear) is discarded and redrawn.
    """
    while True:
        M = rng.random((n, n)) ** 2
        if density < 1.0:
            M *= rng.random((n, n)) < density
            M[np.arange(n), rng.permutation(n)] += rng.random(n) + 0.1
            M *= total_support(M)
        try:
            S, _ = sinkhorn_scale(M, tol=1e-13, max_iter=100_000)
        except NotConverged:
            continue
        return S


def family_example1(n: int) -> np.ndarray:
    """``aJ_n + bI_n`` with diagonal 1/2 and off-diagonal entries ``1/(2(n-1))``."""
    if n < 2:
        raise BadDimensions("family_example1 needs n >= 2")
    P = np.full((n, n), 1.0 / (2 * (n - 1)))
    np.fill_diagonal(P, 0.5)
    return P


def family_example2(blocks: int) -> np.ndarray:
    """Direct sum of ``blocks`` copies of ``J_2 / 2``."""
    if blocks < 1:
        raise BadDimensions("family_example2 needs blocks >= 1")
    return np.kron(np.eye(blocks), np.full((2, 2), 0.5))


def k_embed(A, m: int, a: float, b: float) -> np.ndarray:
    """Bordered matrix ``[[a*A, b*J_{n,n-m}], [b*J_{n-m,n}, 0]]`` of size ``2n-m``.

    With ``A`` having all line sums ``r``, ``a = (m/n)/r`` and ``b = 1/n`` the
    result is doubly stochastic.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if not 0 <= m <= n:
        raise BadDimensions(f"need 0 <= m <= n, got m={m}, n={n}")
    k = n - m
    K = np.zeros((n + k, n + k))
    K[:n, :n] = a * A
    K[:n, n:] = b
    K[n:, :n] = b
    return K


def k_counterexample(n: int) -> np.ndarray:
    """``[[I_n / 2, J_{n,n/2} / n], [J_{n/2,n} / n, 0]]`` for even ``n``."""
    if n < 2 or n % 2:
        raise OddN(f"k_counterexample needs even n >= 2, got {n}")
    return k_embed(np.eye(n), n // 2, 0.5, 1.0 / n)


def is_regular(M, r: int | None = None) -> bool:
    A = np.asarray(M)
    rs, cs = A.sum(axis=1), A.sum(axis=0)
    target = rs[0] if r is None else r
    return bool(np.all(rs == target) and np.all(cs == target))


# -- I/O ----------------------------------------------------------------------

def parse_matrix(text: str, fmt: str | None = None) -> np.ndarray:
    """Parse CSV (one row per line) or JSON ``{"n": int, "entries": [[...]]}``."""
    stripped = text.lstrip()
    if fmt is None:
        fmt = "json" if stripped.startswith("{") else "csv"
    if fmt == "json":
        obj = json.loads(text)
        try:
            rows = obj["entries"]
        except (KeyError, TypeError) as exc:
            raise ValidationError("JSON matrix needs an 'entries' field") from exc
        if "n" in obj and obj["n"] != len(rows):
            raise ValidationError(f"declared n={obj['n']} but {len(rows)} rows given")
    elif fmt == "csv":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        try:
            rows = [[float(c) for c in r] for r in rows]
        except ValueError as exc:
            raise ValidationError(f"non-numeric CSV entry: {exc}") from exc
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValidationError("ragged or empty matrix")
    return as_matrix(rows)


def read_matrix(path) -> np.ndarray:
    p = Path(path)
    fmt = "json" if p.suffix.lower() == ".json" else None
    return parse_matrix(p.read_text(encoding="utf-8"), fmt)


def format_matrix(M, fmt: str = "csv") -> str:
    A = np.asarray(M, dtype=float)
    if fmt == "json":
        return json.dumps({"n": A.shape[0], "entries": A.tolist()})
    return "\n".join(",".join(format(x, ".17g") for x in row) for row in A) + "\n"
