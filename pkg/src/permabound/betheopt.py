"""Maximisation of the Bethe functional over the Birkhoff polytope, and capacities.

``maximize_cw`` runs Frank-Wolfe with away steps over the face of the Birkhoff
polytope supported on the total support of ``P``. The linear oracle on that face
is an assignment problem; iterates are stored as explicit convex combinations of
permutation matrices so away steps can shrink bad vertices.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize, minimize_scalar
from scipy.special import logsumexp, xlogy

from .bounds import cw_value
from .errors import DomainError, Infeasible, Unbounded, ZeroPermanent
from .matcore import as_matrix, sinkhorn_scale, support_pattern, total_support

# Iterates never move closer than this fraction of a step to the polytope boundary:
# the gradient is unbounded there while the objective stays continuous.
BOUNDARY_EPS = 1e-12
FW_TOL = 1e-8
FW_MAX_ITER = 20_000
POLISH_EVERY = 10


@dataclass
class CWResult:
    q_star: np.ndarray
    value: float
    duality_gap: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "q_star": self.q_star.tolist(),
            "value": self.value,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def trace_csv(self) -> str:
        lines = ["iteration,value,gap"]
        lines += [f"{k},{v:.17g},{g:.17g}" for k, v, g in self.trace]
        return "\n".join(lines) + "\n"


@dataclass
class CapacityResult:
    value: float  # natural log of Cap
    minimizer: np.ndarray
    gradient_norm: float
    converged: bool = True
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "minimizer": self.minimizer.tolist(),
            "gradient_norm": self.gradient_norm,
            "converged": self.converged,
            "iterations": self.iterations,
        }


# -- linear oracle --------------------------------------------------------------

def _lsa_value(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


def assignment_solve(cost, forbidden=None, lexicographic: bool = True) -> np.ndarray:
    """Minimum-cost permutation avoiding ``forbidden`` cells.

    Args:
        cost: n x n real array.
        forbidden: optional boolean mask, True where the assignment is not allowed.
        lexicographic: break ties toward the lexicographically smallest
            permutation. Costs O(n^2) extra assignment solves.

    Returns:
        ``perm`` with ``perm[i]`` the column assigned to row ``i`` (0-based).

    Raises:
        Infeasible: no permutation avoids the forbidden cells.
    """
    C = np.array(cost, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("cost must be square")
    if forbidden is not None:
        C[np.asarray(forbidden, dtype=bool)] = np.inf
    try:
        rows, cols = linear_sum_assignment(C)
    except ValueError as exc:
        raise Infeasible("no permutation avoids the forbidden cells") from exc
    perm = np.empty(n, dtype=np.intp)
    perm[rows] = cols
    if not lexicographic:
        return perm

    best = float(C[rows, cols].sum())
    slack = 1e-12 * max(1.0, abs(best), float(np.abs(C[np.isfinite(C)]).sum()))
    fixed = 0.0
    free_rows = list(range(n))
    free_cols = list(range(n))
    for i in range(n):
        free_rows.remove(i)
        for j in sorted(free_cols):
            if j == perm[i]:
                break
            if not np.isfinite(C[i, j]):
                continue
            rest_cols = [c for c in free_cols if c != j]
            sub = C[np.ix_(free_rows, rest_cols)]
            try:
                v = fixed + C[i, j] + _lsa_value(sub)
            except ValueError:
                continue
            if v <= best + slack:
                r2, c2 = (linear_sum_assignment(sub) if sub.size else ([], []))
                perm[i] = j
                for a, b in zip(r2, c2):
                    perm[free_rows[a]] = rest_cols[b]
                break
        fixed += C[i, perm[i]]
        free_cols.remove(perm[i])
    return perm


def birkhoff_decompose(Q, tol: float = 1e-14, max_terms: int | None = None):
    """Greedy Birkhoff-von Neumann decomposition.

    Returns a list of ``(weight, perm)`` whose weights sum to one. Each step
    takes the maximum-product permutation inside the current residual support
    and removes its bottleneck weight.
    """
    R = np.array(Q, dtype=float)
    n = R.shape[0]
    max_terms = max_terms or n * n
    terms = []
    mass = 1.0
    while mass > tol and len(terms) < max_terms:
        mask = R > tol * 1e-3
        with np.errstate(divide="ignore"):
            cost = np.where(mask, -np.log(np.where(mask, R, 1.0)), np.inf)
        try:
            perm = assignment_solve(cost, lexicographic=False)
        except Infeasible:
            break
        w = float(R[np.arange(n), perm].min())
        if w <= 0:
            break
        terms.append((w, perm))
        R[np.arange(n), perm] -= w
        mass -= w
    total = sum(w for w, _ in terms)
    return [(w / total, p) for w, p in terms]


# -- Frank-Wolfe -----------------------------------------------------------------

_TINY = 1e-300


class _Face:
    """CW(P, .) restricted to the entries of the total support of P.

    Points are passed as ``(q, qc)`` with ``qc = 1 - q`` carried separately, so
    entries close to one keep full relative precision in ``1 - q``.
    """

    def __init__(self, P: np.ndarray, mask: np.ndarray):
        self.P = P
        self.mask = mask
        self.logp = np.log(P[mask])
        self.n = P.shape[0]

    def dense(self, q: np.ndarray) -> np.ndarray:
        Q = np.zeros((self.n, self.n))
        Q[self.mask] = q
        return Q

    def value(self, q: np.ndarray, qc: np.ndarray) -> float:
        q, qc = np.clip(q, 0.0, 1.0), np.clip(qc, 0.0, 1.0)
        return float(np.sum(xlogy(qc, qc) - xlogy(q, q) + q * self.logp))

    def grad(self, q: np.ndarray, qc: np.ndarray) -> np.ndarray:
        return -2.0 - np.log(np.maximum(qc, _TINY)) - np.log(np.maximum(q, _TINY)) + self.logp

    def curvature(self, q: np.ndarray, qc: np.ndarray) -> np.ndarray:
        return 1.0 / np.maximum(qc, _TINY) - 1.0 / np.maximum(q, _TINY)


class _ActiveSet:
    """Convex combination of permutation vertices of the face."""

    def __init__(self, face: _Face, terms):
        self.face = face
        self.perms: list[tuple] = []
        self.vecs: list[np.ndarray] = []
        self.weights: list[float] = []
        for w, p in terms:
            self.add(tuple(int(x) for x in p), w)

    def vertex(self, perm) -> np.ndarray:
        V = np.zeros((self.face.n, self.face.n))
        V[np.arange(self.face.n), list(perm)] = 1.0
        return V[self.face.mask]

    def add(self, perm: tuple, w: float) -> None:
        if perm in self.perms:
            self.weights[self.perms.index(perm)] += w
        else:
            self.perms.append(perm)
            self.vecs.append(self.vertex(perm))
            self.weights.append(w)

    def drop(self, k: int) -> None:
        del self.perms[k], self.vecs[k], self.weights[k]
        total = math.fsum(self.weights)
        self.weights = [w / total for w in self.weights]

    def point(self):
        W = np.asarray(self.weights)
        M = np.asarray(self.vecs)
        return W @ M, W @ (1.0 - M)

    def coverage(self) -> np.ndarray:
        return np.asarray(self.vecs).sum(axis=0)


def _line_search(face: _Face, q, qc, dq, dqc, gmax: float) -> float:
    """Maximise the concave ``phi(g) = f(q + g dq)`` on ``[0, gmax]`` via its derivative.

    ``dqc`` is the matching direction for ``1 - q``, computed separately to
    keep precision.
    """
    nz = dq != 0
    q, qc, dq, dqc = q[nz], qc[nz], dq[nz], dqc[nz]
    logp = face.logp[nz]

    def xs(g):
        return np.maximum(q + g * dq, _TINY), np.maximum(qc + g * dqc, _TINY)

    def dphi(g):
        x, xc = xs(g)
        return float(np.dot(dq, -2.0 - np.log(xc) - np.log(x) + logp))

    def d2phi(g):
        x, xc = xs(g)
        return float(np.dot(dq * dq, 1.0 / xc - 1.0 / x))

    if dphi(gmax) >= 0:
        return gmax
    lo, hi = 0.0, gmax
    g = 0.5 * gmax
    scale = float(np.abs(dq).sum())
    for _ in range(200):
        s = dphi(g)
        if abs(s) <= 1e-13 * scale:
            return g
        if s > 0:
            lo = g
        else:
            hi = g
        if hi - lo <= 1e-16 * hi:
            break
        h = d2phi(g)
        step = g - s / h if h < 0 else None
        g = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    return lo if lo > 0 else g


def _newton_polish(face: _Face, q: np.ndarray, max_steps: int = 60):
    """Equality-constrained Newton ascent on the face, for interior optima.

    Solves the KKT system of ``max f(q)`` subject to unit row and column sums
    over the non-fixed entries. Returns an improved ``q`` or ``None`` when no
    step increases the objective.
    """
    rows, cols = np.nonzero(face.mask)
    idx = np.flatnonzero(q < 1.0)
    if idx.size == 0:
        return None
    n = face.n
    A = np.zeros((2 * n, idx.size))
    A[rows[idx], np.arange(idx.size)] = 1.0
    A[n + cols[idx], np.arange(idx.size)] = 1.0
    A = A[A.any(axis=1)]
    m = A.shape[0]
    q = q.copy()
    f = face.value(q, 1.0 - q)
    improved = False
    for _ in range(max_steps):
        x = q[idx]
        if np.any(x <= 0.0):
            break  # an uncovered entry: the Newton model is undefined there
        g = -2.0 - np.log(np.maximum(1.0 - x, _TINY)) - np.log(np.maximum(x, _TINY)) + face.logp[idx]
        h = face.curvature(x, 1.0 - x)
        resid = 1.0 - A @ x
        # Symmetric diagonal scaling: the curvature spans many orders of magnitude.
        sc = 1.0 / np.sqrt(np.maximum(np.abs(h), 1.0))
        K = np.block([[np.diag(h * sc * sc), (A * sc).T], [A * sc, np.zeros((m, m))]])
        try:
            sol = np.linalg.lstsq(K, np.concatenate([-g * sc, resid]), rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        d = sol[: idx.size] * sc
        if not np.all(np.isfinite(d)) or np.max(np.abs(d)) < 1e-15:
            break
        # Fraction-to-boundary rule keeps every entry strictly inside (0, 1).
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lim = np.where(d < 0, -x / d, np.where(d > 0, (1 - x) / d, np.inf))
        t = min(1.0, 0.99 * float(lim.min()))
        while t > 1e-10:
            cand = q.copy()
            cand[idx] = x + t * d
            fc = face.value(cand, 1.0 - cand)
            if fc >= f:
                break
            t *= 0.5
        else:
            break
        done = np.max(np.abs(cand - q)) < 1e-15 or fc - f <= 1e-16 * max(1.0, abs(f))
        q, f, improved = cand, fc, True
        if done:
            break
    return q if improved else None


def _near_vertex(Q: np.ndarray, tol: float = 1e-9):
    """The permutation ``Q`` sits next to, if every row has an entry within ``tol`` of 1."""
    perm = Q.argmax(axis=1)
    if np.all(Q[np.arange(Q.shape[0]), perm] >= 1 - tol) and np.unique(perm).size == perm.size:
        return perm
    return None


def _vertex_escape(P: np.ndarray, perm: np.ndarray):
    """Optimality test for the vertex ``perm`` and an ascent direction if it fails.

    From a permutation vertex the one-sided derivative towards ``R`` is finite:
    the ``x log x`` singularities of entries leaving 1 and entries leaving 0
    cancel. What is left is reward plus entropy rate of a Markov chain on the
    mass moved off the vertex, with edge weights
    ``W[i, k] = P[i, perm[k]] / P[i, perm[i]]`` (``k != i``). Its supremum is
    ``log rho(W)``, so the vertex is optimal iff ``rho(W) <= 1``; otherwise the
    Perron (Parry) chain gives a doubly stochastic ``R`` to move towards.

    Returns ``(rho, R)`` with ``R`` in the original column order, or
    ``(rho, None)`` when the vertex is optimal.
    """
    n = P.shape[0]
    W = P[:, perm] / P[np.arange(n), perm][:, None]
    np.fill_diagonal(W, 0.0)
    vals, right = np.linalg.eig(W)
    k = int(np.argmax(vals.real))
    rho = float(vals[k].real)
    if rho <= 1.0 + 1e-12:
        return rho, None
    vals_l, left = np.linalg.eig(W.T)
    v = np.abs(right[:, k].real)
    u = np.abs(left[:, int(np.argmax(vals_l.real))].real)
    with np.errstate(divide="ignore", invalid="ignore"):
        chain = np.nan_to_num(W * v[None, :] / (rho * v[:, None]))
    mass = u * v
    mass /= mass.max()
    R_perm = np.diag(1.0 - mass) + mass[:, None] * chain
    R = np.zeros_like(R_perm)
    R[:, perm] = R_perm
    return rho, R


def _fw_loop(face: _Face, act: _ActiveSet, forbidden, tol, max_iter, away_steps, polish,
             record_trace, it0=0):
    """Away-step Frank-Wolfe from the active set ``act``.

    Returns ``(best_q, best_f, best_gap, iterations, converged, trace)``. Also
    returns early when the iterate collapses onto a permutation vertex, where
    the linear gap is meaningless and :func:`_vertex_escape` takes over.
    """
    q, qc = act.point()
    f = face.value(q, qc)
    best_q, best_f, best_gap = q.copy(), f, math.inf
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = face.grad(q, qc)
        s_perm = tuple(int(x) for x in
                       assignment_solve(face.dense(-g), forbidden, lexicographic=False))
        s = act.vertex(s_perm)
        gap = float(np.dot(g, s - q))
        if f == best_f:
            best_gap = min(best_gap, gap)
        if record_trace:
            trace.append((it0 + it - 1, f, gap))
        if gap <= tol:
            converged = True
            best_q, best_f, best_gap = q.copy(), f, gap
            break

        k_away, away_gap = -1, -math.inf
        if away_steps and len(act.perms) > 1:
            scores = np.asarray(act.vecs) @ g
            k_away = int(np.argmin(scores))
            away_gap = float(np.dot(g, q) - scores[k_away])

        if k_away >= 0 and away_gap > gap:
            a = act.vecs[k_away]
            w_a = act.weights[k_away]
            gmax = w_a / (1.0 - w_a)
            # A full drop is safe when other vertices still cover every entry.
            droppable = bool(np.all(act.coverage() - a > 0))
            cap = gmax if droppable else gmax * (1 - BOUNDARY_EPS)
            gamma = _line_search(face, q, qc, q - a, qc - (1.0 - a), cap)
            if gamma <= 0:
                break
            if droppable and gamma >= gmax:
                act.drop(k_away)
            else:
                act.weights = [w * (1 + gamma) for w in act.weights]
                act.weights[k_away] -= gamma
        else:
            gamma = _line_search(face, q, qc, s - q, (1.0 - s) - qc, 1 - BOUNDARY_EPS)
            if gamma <= 0:
                break
            act.weights = [w * (1 - gamma) for w in act.weights]
            act.add(s_perm, gamma)

        q_new, qc_new = act.point()
        f_new = face.value(q_new, qc_new)
        if f_new < f - 1e-13 * max(1.0, abs(f)):
            break  # objective refused the step: numerical floor reached
        q, qc, f = q_new, qc_new, f_new

        if it % POLISH_EVERY == 1:
            if _near_vertex(face.dense(q)) is not None:
                if f > best_f:
                    best_q, best_f, best_gap = q.copy(), f, gap
                break
            if polish:
                q_pol = _newton_polish(face, q)
                f_pol = -math.inf if q_pol is None else face.value(q_pol, 1.0 - q_pol)
                # Ties within rounding still count: the polished point may carry the certificate.
                if f_pol >= f - 1e-13 * max(1.0, abs(f)):
                    g_pol = face.grad(q_pol, 1.0 - q_pol)
                    v = act.vertex(assignment_solve(face.dense(-g_pol), forbidden,
                                                    lexicographic=False))
                    gap_pol = float(np.dot(g_pol, v - q_pol))
                    if gap_pol <= tol:
                        if record_trace:
                            trace.append((it0 + it, f_pol, gap_pol))
                        best_q, best_f, best_gap = q_pol, f_pol, gap_pol
                        converged = True
                        break
                    # Re-express the polished point over permutation vertices.
                    trial = _ActiveSet(face, birkhoff_decompose(face.dense(q_pol)))
                    if np.all(trial.coverage() > 0):
                        tq, tqc = trial.point()
                        tf = face.value(tq, tqc)
                        if tf > f:
                            act, q, qc, f = trial, tq, tqc, tf
        if f > best_f:
            best_q, best_f, best_gap = q.copy(), f, gap
    return best_q, best_f, best_gap, it, converged, trace


def maximize_cw(P, tol: float = FW_TOL, max_iter: int = FW_MAX_ITER, start=None,
                away_steps: bool = True, polish: bool = True,
                record_trace: bool = True) -> CWResult:
    """Maximise ``CW(P, Q)`` over doubly stochastic ``Q`` with supp(Q) in supp(P).

    Starts from the Sinkhorn scaling of the 0/1 indicator of the total support
    of ``P`` (or from ``start``), decomposed into permutation vertices. Each
    iteration calls :func:`assignment_solve` on the negated gradient restricted
    to that support, then takes either a Frank-Wolfe step or an away step, with
    an exact concave line search capped ``BOUNDARY_EPS`` short of the boundary.
    Every ``POLISH_EVERY`` iterations a constrained Newton step is tried, which
    converges fast when the maximiser is interior. Stops when the Frank-Wolfe
    gap falls to ``tol`` and returns the best iterate seen.

    The objective is not smooth at the polytope boundary, and single-vertex
    moves out of a permutation vertex can all be non-improving while a mixture
    improves. When the iterate collapses onto a vertex, the exact optimality
    test of :func:`_vertex_escape` either certifies it (reported with
    ``duality_gap = 0``) or supplies an ascent direction, and Frank-Wolfe
    restarts from the best point along it.

    Raises:
        ZeroPermanent: the support of ``P`` has no perfect matching.
    """
    P = as_matrix(P)
    if not support_pattern(P).has_perfect_matching:
        raise ZeroPermanent("per(P) = 0: no perfect matching in the support")
    mask = total_support(P)
    face = _Face(P, mask)
    forbidden = ~mask
    Pm = np.where(mask, P, 0.0)

    if start is None:
        Q0, _ = sinkhorn_scale(mask.astype(float), tol=1e-14, max_iter=100_000)
    else:
        Q0 = as_matrix(start)
        if np.any((Q0 > 0) & forbidden):
            raise DomainError("start point has mass outside the total support of P")

    trace = []
    used = 0
    best_q, best_f, best_gap, converged = None, -math.inf, math.inf, False
    while used < max_iter:
        act = _ActiveSet(face, birkhoff_decompose(Q0))
        q, f, gap, it, converged, part = _fw_loop(face, act, forbidden, tol, max_iter - used,
                                                  away_steps, polish, record_trace, used)
        used += it
        trace += part
        if best_q is None or f >= best_f:
            best_q, best_f, best_gap = q, f, gap
        if converged:
            break
        # The vertex test is exact, so a loose snap only proposes a candidate.
        perm = _near_vertex(face.dense(best_q), tol=1e-3)
        if perm is None:
            break
        _, R = _vertex_escape(Pm, perm)
        V = np.zeros_like(P)
        V[np.arange(face.n), perm] = 1.0
        if R is None:
            best_q, best_f, best_gap, converged = V[mask], face.value(V[mask], 1.0 - V[mask]), 0.0, True
            if record_trace:
                trace.append((used, best_f, 0.0))
            break
        # Concave along the segment, so a bounded scalar search finds the best step.
        seg = minimize_scalar(lambda e: -cw_value(Pm, (1 - e) * V + e * R),
                              bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        if -seg.fun <= best_f:
            break
        Q0 = (1 - seg.x) * V + seg.x * R

    Q = face.dense(best_q)
    return CWResult(
        q_star=Q,
        value=cw_value(P, Q),
        duality_gap=max(best_gap, 0.0) if math.isfinite(best_gap) else math.inf,
        iterations=used,
        converged=converged,
        trace=trace,
    )


# -- capacities ------------------------------------------------------------------

def capacity_product(P, tol: float = 1e-10, max_iter: int = 500) -> CapacityResult:
    """``log Cap`` of ``Prod_P(x) = prod_i sum_j P_ij x_j`` by damped Newton.

    Minimises the convex ``h(y) = sum_i log sum_j P_ij e^{y_j} - sum_j y_j``;
    ``h`` is invariant under ``y -> y + c``, so the minimiser is centred to
    ``sum y = 0`` (``prod x = 1``).
    """
    P = as_matrix(P)
    n = P.shape[0]
    if np.any(P.sum(axis=1) == 0):
        raise DomainError("every row of P needs a positive entry")
    if np.any(P.sum(axis=0) == 0):
        raise Unbounded("a zero column makes Cap(Prod_P) = 0")

    def h_and_parts(y):
        W = P * np.exp(y - y.max())[None, :]
        S = W.sum(axis=1)
        R = W / S[:, None]
        h = float(np.log(S).sum() + n * y.max() - y.sum())
        return h, R

    y = np.zeros(n)
    h, R = h_and_parts(y)
    gnorm = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        c = R.sum(axis=0)
        grad = c - 1.0
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            converged = True
            break
        H = np.diag(c) - R.T @ R + np.ones((n, n)) / n
        step = -np.linalg.solve(H, grad)
        t = 1.0
        # Near the optimum the Armijo decrease drops below the rounding in h.
        noise = 8 * np.finfo(float).eps * max(1.0, abs(h))
        while True:
            h_new, R_new = h_and_parts(y + t * step)
            if h_new <= h + 1e-4 * t * float(grad @ step) + noise or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            break
        y, h, R = y + t * step, h_new, R_new
    y = y - y.mean()
    return CapacityResult(value=h, minimizer=np.exp(y), gradient_norm=gnorm,
                          converged=converged, iterations=it)


def qj_log_value(P, j: int, y) -> float:
    """``log q_(j)(e^y)`` where ``y`` has one coordinate per column ``l != j``."""
    val, _ = _qj_parts(as_matrix(P), j, np.asarray(y, dtype=float))
    return val


def _qj_parts(P, j, y):
    n = P.shape[0]
    cols = [l for l in range(n) if l != j]
    B = P[:, cols]
    shift = y.max() if y.size else 0.0
    W = B * np.exp(y - shift)[None, :]
    S = W.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log(S) + shift
        R = np.where(S[:, None] > 0, W / np.where(S > 0, S, 1.0)[:, None], 0.0)
    terms = np.full(n, -np.inf)
    for i in range(n):
        if P[i, j] <= 0:
            continue
        others = np.delete(L, i)
        if np.all(np.isfinite(others)):
            terms[i] = math.log(P[i, j]) + others.sum()
    val = float(logsumexp(terms)) if np.any(np.isfinite(terms)) else -math.inf
    return val, (terms, R)


_WARN_LOCK = threading.Lock()


def capacity_qj(P, j: int, tol: float = 1e-10) -> CapacityResult:
    """``log Cap(q_(j))`` with ``q_(j) = d/dx_j Prod_P`` evaluated at ``x_j = 0``.

    ``q_(j)(x) = sum_i P_ij prod_{k != i} sum_{l != j} P_kl x_l`` is homogeneous
    of degree ``n - 1`` in the remaining ``n - 1`` variables. Minimises the
    convex ``log q_(j)(e^y) - sum y`` with BFGS and an analytic gradient.
    """
    P = as_matrix(P)
    n = P.shape[0]
    if not 0 <= j < n:
        raise DomainError(f"column index {j} out of range")
    if np.any(P.sum(axis=1) == 0):
        raise DomainError("every row of P needs a positive entry")
    if n == 1:
        return CapacityResult(value=math.log(P[0, 0]), minimizer=np.ones(0), gradient_norm=0.0)
    cols = [l for l in range(n) if l != j]
    if np.any(P[:, cols].sum(axis=0) == 0):
        raise Unbounded("q_(j) does not depend on some variable, so its capacity is 0")

    def fun(y):
        val, (terms, R) = _qj_parts(P, j, y)
        if not math.isfinite(val):
            raise Unbounded("q_(j) vanishes identically")
        w = np.exp(terms - val)
        grad = R.sum(axis=0) - w @ R - 1.0
        return val - y.sum(), grad

    # gtol sits near rounding, where the Wolfe search can stall; convergence is judged below.
    # catch_warnings swaps global state, hence the lock.
    with _WARN_LOCK, warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The line search algorithm did not converge")
        res = minimize(fun, np.zeros(n - 1), jac=True, method="BFGS",
                       options={"gtol": tol, "maxiter": 10_000})
    y = res.x - res.x.mean()
    value, grad = fun(y)
    return CapacityResult(value=float(value), minimizer=np.exp(y),
                          gradient_norm=float(np.linalg.norm(grad)),
                          converged=bool(np.linalg.norm(grad) <= max(tol, 1e-8)),
                          iterations=int(res.nit))
