"""Random r-regular bipartite multigraph models and Monte Carlo estimators.

Two models produce matrices in RI(r, n), the nonnegative integer matrices with
every row and column sum equal to ``r``:

* BM (pairing model): a uniform permutation of ``rn`` points, folded modulo ``n``.
* HW: a sum of ``r`` independent uniform permutation matrices.

Estimators split the work into fixed-size chunks. Chunk ``k`` draws from the
``k``-th child of ``SeedSequence(seed)`` and results are reduced in chunk order,
so the output does not depend on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CapExceeded, DomainError, RejectionBudgetExceeded, TooLarge
from .exactperm import DP_MAX_N, permanent_ryser, subperm_vector

MODELS = ("bm", "hw")
CHUNK = 2048
EMD_MAX_N = 20


@dataclass
class McEstimate:
    samples: int
    mean: float
    std_error: float
    log_domain: bool
    seed: int
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def log_mean(self) -> float:
        return math.log(self.mean) if self.mean > 0 else float("-inf")

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "mean": self.mean,
            "std_error": self.std_error,
            "log_domain": self.log_domain,
            "seed": self.seed,
        }

    def samples_csv(self) -> str:
        if self.values is None:
            raise ValueError("per-sample values were not kept; pass keep_values=True")
        rows = ["sample_index,value"] + [f"{i},{v:.17g}" for i, v in enumerate(self.values)]
        return "\n".join(rows) + "\n"


def _check_rn(r: int, n: int):
    if r < 1 or n < 1:
        raise DomainError(f"need r >= 1 and n >= 1, got r={r}, n={n}")


def is_ri(M, r: int) -> bool:
    """True iff ``M`` is a nonnegative integer matrix with all line sums ``r``."""
    A = np.asarray(M)
    return bool(
        A.ndim == 2 and A.shape[0] == A.shape[1]
        and np.all(A >= 0) and np.all(A == np.round(A))
        and np.all(A.sum(axis=0) == r) and np.all(A.sum(axis=1) == r)
    )


# -- samplers -------------------------------------------------------------------

def _bm_cells(r: int, n: int, rng: np.random.Generator, batch: int) -> np.ndarray:
    # Point x of block x // n sits in row x % n; its partner pi(x) lands in column pi(x) % n.
    pts = np.arange(r * n)
    pi = rng.permuted(np.tile(pts, (batch, 1)), axis=1)
    return (pts % n)[None, :] * n + pi % n


def _hw_cells(r: int, n: int, rng: np.random.Generator, batch: int) -> np.ndarray:
    rows = np.arange(n)
    sig = rng.permuted(np.tile(rows, (batch * r, 1)), axis=1).reshape(batch, r * n)
    return np.tile(rows, r)[None, :] * n + sig


def _cells_to_matrix(cells: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(cells, minlength=n * n).reshape(n, n)


def sample_bm(r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """One BM(r, n) sample: the ``r^2`` n x n blocks of a uniform ``rn x rn`` permutation, summed."""
    _check_rn(r, n)
    return _cells_to_matrix(_bm_cells(r, n, rng, 1)[0], n)


def sample_hw(r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """One HW(r, n) sample: the sum of ``r`` independent uniform permutation matrices."""
    _check_rn(r, n)
    return _cells_to_matrix(_hw_cells(r, n, rng, 1)[0], n)


def sample_cbm(r: int, n: int, rng: np.random.Generator, max_rejects: int = 100_000) -> np.ndarray:
    """BM(r, n) conditioned on being a 0/1 matrix, by rejection."""
    _check_rn(r, n)
    for _ in range(max_rejects + 1):
        M = sample_bm(r, n, rng)
        if M.max() <= 1:
            return M
    raise RejectionBudgetExceeded(f"no 0/1 BM({r},{n}) sample in {max_rejects} rejections")


def _sampler(model: str) -> Callable:
    try:
        return {"bm": sample_bm, "hw": sample_hw}[model.lower()]
    except KeyError:
        raise DomainError(f"model must be one of {MODELS}, got {model!r}") from None


# -- estimators -----------------------------------------------------------------

def _run_chunks(chunk_fn: Callable, samples: int, seed: int, threads: int) -> np.ndarray:
    if samples < 1:
        raise DomainError("samples must be >= 1")
    sizes = [CHUNK] * (samples // CHUNK) + ([samples % CHUNK] if samples % CHUNK else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(np.random.Generator(np.random.PCG64(s)), k) for s, k in zip(seqs, sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: chunk_fn(*job), jobs))
    else:
        parts = [chunk_fn(*job) for job in jobs]
    return np.concatenate(parts)


def _summarise(values: np.ndarray, seed: int, log_domain: bool, keep_values: bool) -> McEstimate:
    k = values.size
    std_error = float(values.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return McEstimate(samples=k, mean=float(values.mean()), std_error=std_error,
                      log_domain=log_domain, seed=seed, values=values if keep_values else None)


def estimate_expected_perm(model: str, r: int, n: int, samples: int, seed: int = 0,
                           threads: int = 1, keep_values: bool = False) -> McEstimate:
    """Mean of ``per`` over model samples, in the linear domain.

    ``per`` of these matrices is heavy tailed, so the standard error is the
    honest measure of how far to trust the mean.
    """
    _check_rn(r, n)
    if n > DP_MAX_N:
        raise TooLarge(f"exact permanent per sample limited to n <= {DP_MAX_N}")
    draw = _sampler(model)

    def chunk(rng, k):
        return np.array([permanent_ryser(draw(r, n, rng)).value for _ in range(k)])

    return _summarise(_run_chunks(chunk, samples, seed, threads), seed, False, keep_values)


def _has_multi_edge(cells: np.ndarray) -> np.ndarray:
    s = np.sort(cells, axis=1)
    return np.any(s[:, 1:] == s[:, :-1], axis=1)


def estimate_prob_boolean(model: str, r: int, n: int, samples: int, seed: int = 0,
                          threads: int = 1, keep_values: bool = False) -> McEstimate:
    """Fraction of model samples that are 0/1 matrices (simple graphs)."""
    _check_rn(r, n)
    cells_fn = {"bm": _bm_cells, "hw": _hw_cells}.get(model.lower())
    if cells_fn is None:
        raise DomainError(f"model must be one of {MODELS}, got {model!r}")

    def chunk(rng, k):
        return (~_has_multi_edge(cells_fn(r, n, rng, k))).astype(float)

    return _summarise(_run_chunks(chunk, samples, seed, threads), seed, False, keep_values)


def estimate_emd(model: str, r: int, n: int, m: int, samples: int, seed: int = 0,
                 threads: int = 1, keep_values: bool = False) -> McEstimate:
    """Mean of the m-subpermanent sum ``per_m`` over model samples."""
    _check_rn(r, n)
    if n > EMD_MAX_N:
        raise TooLarge(f"subpermanent DP per sample limited to n <= {EMD_MAX_N}")
    if not 0 <= m <= n:
        raise DomainError(f"need 0 <= m <= n, got m={m}")
    draw = _sampler(model)

    def chunk(rng, k):
        return np.array([subperm_vector(draw(r, n, rng)).values[m] for _ in range(k)])

    return _summarise(_run_chunks(chunk, samples, seed, threads), seed, False, keep_values)


# -- exhaustive enumeration -----------------------------------------------------

def _bounded_compositions(total: int, caps: np.ndarray):
    """All nonnegative integer vectors ``v <= caps`` with ``sum(v) == total``."""
    n = caps.size
    suffix = np.concatenate([np.cumsum(caps[::-1])[::-1], [0]])
    v = np.zeros(n, dtype=np.int64)

    def rec(j, left):
        if j == n - 1:
            if left <= caps[j]:
                v[j] = left
                yield v.copy()
            return
        lo = max(0, left - suffix[j + 1])
        for x in range(lo, min(left, caps[j]) + 1):
            v[j] = x
            yield from rec(j + 1, left - x)

    if total <= suffix[0]:
        yield from rec(0, total)


def enumerate_ri(r: int, n: int, cap: int = 1_000_000) -> list:
    """Every matrix of RI(r, n), by row-wise DFS with column-capacity pruning.

    Raises:
        CapExceeded: more than ``cap`` matrices would be produced.
    """
    _check_rn(r, n)
    out = []
    rows = np.zeros((n, n), dtype=np.int64)

    def rec(i, col_left):
        if i == n - 1:
            rows[i] = col_left
            out.append(rows.copy())
            if len(out) > cap:
                raise CapExceeded(f"RI({r},{n}) has more than {cap} matrices")
            return
        for v in _bounded_compositions(r, col_left):
            rows[i] = v
            rec(i + 1, col_left - v)

    rec(0, np.full(n, r, dtype=np.int64))
    return out
