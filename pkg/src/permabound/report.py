"""Assemble a :class:`~permabound.bounds.BoundReport` for a single matrix."""
from __future__ import annotations

import numpy as np

from . import bounds
from .betheopt import FW_MAX_ITER, FW_TOL, maximize_cw
from .exactperm import DP_MAX_N, permanent_ryser
from .errors import ZeroPermanent
from .matcore import (
    as_matrix, is_doubly_stochastic, sinkhorn_scale, support_pattern, total_support,
)


def bound_report(M, matrix_id: str = "", sinkhorn: bool = False, with_cw: bool = True,
                 tol: float = FW_TOL, max_iter: int = FW_MAX_ITER) -> bounds.BoundReport:
    """Every available bound on ``log per`` of one matrix.

    Bounds that need a doubly stochastic argument (F, LMS, SD, van der Waerden,
    the column-count bounds) are evaluated on the Sinkhorn scaling of ``M`` and
    shifted back by the scaling's log-determinant, so every field bounds the
    permanent of ``M`` itself. With ``sinkhorn=True`` the scaled matrix replaces
    ``M`` and no shift is applied.

    Raises:
        ZeroPermanent: from the optimiser when ``per(M) = 0``.
    """
    A = as_matrix(M)
    n = A.shape[0]
    if not support_pattern(A).has_perfect_matching:
        raise ZeroPermanent("support has no perfect matching")
    if sinkhorn:
        A, _ = sinkhorn_scale(A * total_support(A))

    if is_doubly_stochastic(A):
        S, shift = A, 0.0
    else:
        # Entries off the total support lie on no permutation: dropping them keeps per.
        S, scale = sinkhorn_scale(A * total_support(A), tol=1e-13, max_iter=100_000)
        shift = -scale.log_det

    log_per = permanent_ryser(A).log if n <= DP_MAX_N else None
    log_cw = maximize_cw(A, tol=tol, max_iter=max_iter, record_trace=False).value if with_cw else None
    is_boolean = bool(np.all((A == 0) | (A == 1)))

    return bounds.BoundReport(
        matrix_id=matrix_id,
        n=n,
        log_per_exact=log_per,
        log_F=bounds.log_F(S) + shift,
        log_max_cw=log_cw,
        log_lms=bounds.log_lms(S) + shift,
        log_sd=bounds.log_sd(S) + shift,
        log_vdw=bounds.log_vdw(n) + shift,
        log_bregman=bounds.log_bregman_upper(A) if is_boolean and np.all(A.sum(axis=1) > 0) else None,
        log_holder_upper=bounds.log_holder_upper(A),
        log_cpr_bound=bounds.log_cpr_bound(S) + shift,
        log_gurvits_bound=bounds.log_gurvits_bound(S) + shift,
    )
