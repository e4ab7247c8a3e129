import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import block_diag

from scipy.optimize import minimize

from permabound.betheopt import (
    _vertex_escape, assignment_solve, birkhoff_decompose, capacity_product, capacity_qj,
    maximize_cw, qj_log_value,
)
from permabound.bounds import cw_value, log_cpr, log_F, log_F_k
from permabound.errors import DomainError, Infeasible, Unbounded, ZeroPermanent
from permabound.exactperm import permanent_ryser
from permabound.matcore import (
    is_doubly_stochastic, k_counterexample, k_embed, random_doubly_stochastic, sinkhorn_scale,
)

LN2 = math.log(2)
seeds = st.integers(0, 2**32 - 1)


def ds(n, seed, density=1.0):
    return random_doubly_stochastic(n, np.random.default_rng(seed), density=density)


def brute_assignment(C, forbidden=None):
    """Lexicographically first minimum-cost permutation, by enumeration."""
    n = C.shape[0]
    best, arg = math.inf, None
    for p in itertools.permutations(range(n)):
        if forbidden is not None and any(forbidden[i, p[i]] for i in range(n)):
            continue
        v = sum(C[i, p[i]] for i in range(n))
        if v < best - 1e-9:
            best, arg = v, p
    return arg


def dominant(n, rng):
    A = rng.random((n, n))
    np.fill_diagonal(A, 0)
    np.fill_diagonal(A, A.sum(axis=1) + rng.random(n))
    return A


class TestAssignment:
    def test_zero_cost_identity(self):
        assert list(assignment_solve(np.zeros((5, 5)))) == list(range(5))

    def test_reward_diagonal(self):
        assert list(assignment_solve(-np.eye(4))) == [0, 1, 2, 3]

    @given(seeds)
    def test_matches_brute_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        C = rng.integers(0, 3, (5, 5)).astype(float)
        forbidden = rng.random((5, 5)) < 0.2
        want = brute_assignment(C, forbidden)
        if want is None:
            with pytest.raises(Infeasible):
                assignment_solve(C, forbidden)
        else:
            assert tuple(assignment_solve(C, forbidden)) == want

    def test_random_real_costs(self, rng):
        C = rng.random((5, 5))
        assert tuple(assignment_solve(C)) == brute_assignment(C)

    def test_infeasible(self):
        forbidden = np.zeros((3, 3), dtype=bool)
        forbidden[:, 1] = True
        with pytest.raises(Infeasible):
            assignment_solve(np.zeros((3, 3)), forbidden)


class TestBirkhoff:
    @given(st.integers(1, 7), seeds, st.sampled_from([1.0, 0.5]))
    def test_reconstructs(self, n, seed, density):
        Q = ds(n, seed, density)
        terms = birkhoff_decompose(Q)
        assert sum(w for w, _ in terms) == pytest.approx(1.0)
        R = sum(w * np.eye(n)[p] for w, p in terms)
        np.testing.assert_allclose(R, Q, atol=1e-10)
        assert len(terms) <= (n - 1) ** 2 + 1


class TestMaximizeCW:
    @pytest.mark.parametrize("n", [1, 3, 6])
    def test_identity(self, n):
        res = maximize_cw(np.eye(n))
        assert res.value == 0.0
        np.testing.assert_array_equal(res.q_star, np.eye(n))

    def test_half_j2(self):
        assert maximize_cw(np.full((2, 2), 0.5)).value == pytest.approx(-2 * LN2, abs=1e-12)

    @pytest.mark.parametrize("blocks", [1, 2, 4])
    def test_direct_sum_of_half_j2(self, blocks):
        P = block_diag(*[np.full((2, 2), 0.5)] * blocks)
        res = maximize_cw(P)
        assert res.value == pytest.approx(-2 * blocks * LN2, abs=1e-9)
        assert res.value == pytest.approx(log_F(P), abs=1e-9)

    @pytest.mark.parametrize("n", [2, 4, 6])
    def test_k_counterexample_value_is_F(self, n):
        K = k_counterexample(n)
        assert maximize_cw(K).value == pytest.approx(log_F(K), abs=1e-7)

    @pytest.mark.parametrize("r,n,m", [(2, 4, 2), (3, 5, 3)])
    def test_k_embed_value_is_F(self, r, n, m):
        A = sum(np.roll(np.eye(n), s, axis=1) for s in range(r))
        K = k_embed(A, m, (m / n) / r, 1 / n)
        assert maximize_cw(K).value == pytest.approx(log_F_k(r, n, m), abs=1e-7)

    @pytest.mark.parametrize("seed", range(5))
    def test_diagonally_dominant(self, seed):
        rng = np.random.default_rng(seed)
        P = dominant(int(rng.integers(2, 7)), rng)
        res = maximize_cw(P)
        assert res.value == pytest.approx(np.log(np.diag(P)).sum(), abs=1e-6)

    def test_zero_permanent(self):
        P = np.ones((3, 3))
        P[:, 0] = 0
        with pytest.raises(ZeroPermanent):
            maximize_cw(P)

    @settings(max_examples=25)
    @given(st.integers(2, 7), seeds, st.sampled_from([1.0, 0.5]))
    def test_chain_and_invariants(self, n, seed, density):
        P = ds(n, seed, density)
        res = maximize_cw(P)
        assert res.converged and res.duality_gap <= 1e-8
        assert is_doubly_stochastic(res.q_star, 1e-8)
        assert not np.any((res.q_star > 0) & (P == 0))
        assert math.isfinite(res.value)
        assert res.value >= log_F(P) - 1e-12
        assert permanent_ryser(P).log >= res.value - 1e-7
        assert res.value == pytest.approx(cw_value(P, res.q_star), abs=1e-12)

    @settings(max_examples=15)
    @given(st.integers(3, 6), seeds)
    def test_non_stochastic_input(self, n, seed):
        # Scalability: max CW moves by the same log-scaling as per.
        P = ds(n, seed)
        d = np.random.default_rng(seed).random(n) + 0.2
        res, res_scaled = maximize_cw(P), maximize_cw(d[:, None] * P)
        assert res_scaled.value == pytest.approx(res.value + np.log(d).sum(), abs=1e-7)

    @given(st.integers(3, 6), seeds)
    @settings(max_examples=15)
    def test_trace_monotone(self, n, seed):
        res = maximize_cw(ds(n, seed, 0.6), polish=False, max_iter=300)
        values = [v for _, v, _ in res.trace]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        start, _ = sinkhorn_scale((ds(n, seed, 0.6) > 0).astype(float), tol=1e-14)
        assert res.value >= cw_value(ds(n, seed, 0.6), start) - 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_restart_invariance(self, seed):
        tol = 1e-8
        P = ds(5, seed)
        a = maximize_cw(P, tol=tol)
        b = maximize_cw(P, tol=tol, start=P)
        c = maximize_cw(P, tol=tol, start=ds(5, seed + 100))
        assert abs(a.value - b.value) <= 10 * tol
        assert abs(a.value - c.value) <= 10 * tol

    def test_escapes_non_optimal_vertex(self):
        # Every single-vertex move out of this permutation loses, but a mixture
        # gains: the optimum is interior and about 0.0048 above the vertex.
        P = ds(5, 239)
        perm = np.array([4, 3, 0, 1, 2])
        rho, R = _vertex_escape(P, perm)
        assert rho > 1 and is_doubly_stochastic(R, 1e-12)
        res = maximize_cw(P)
        vertex_value = np.log(P[np.arange(5), perm]).sum()
        assert res.converged and res.value > vertex_value + 4e-3
        assert res.value == pytest.approx(-3.0878528885902554, abs=1e-8)

    def test_vertex_certificate(self, rng):
        P = dominant(5, rng)
        rho, R = _vertex_escape(P, np.arange(5))
        assert rho <= 1 and R is None
        res = maximize_cw(P)
        assert res.converged and res.duality_gap == 0.0
        np.testing.assert_array_equal(res.q_star, np.eye(5))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_slsqp_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        P = ds(n, seed, 0.8)
        cons = [{"type": "eq", "fun": lambda x: np.concatenate(
            [x.reshape(n, n).sum(0) - 1, x.reshape(n, n).sum(1)[:-1] - 1])}]
        bounds = [(0, 1) if p > 0 else (0, 0) for p in P.ravel()]
        best = -math.inf
        for k in range(4):
            x0 = (0.5 * P + 0.5 * ds(n, 1000 + k) * (P > 0))
            x0 = sinkhorn_scale(x0)[0].ravel()
            o = minimize(lambda x: -cw_value(P, np.clip(x.reshape(n, n), 0, 1)), x0,
                         method="SLSQP", bounds=bounds, constraints=cons,
                         options={"ftol": 1e-14, "maxiter": 500})
            Q = np.clip(o.x.reshape(n, n), 0, 1)
            if is_doubly_stochastic(Q, 1e-9):
                best = max(best, cw_value(P, Q))
        assert maximize_cw(P).value >= best - 1e-7

    def test_bad_start(self):
        with pytest.raises(DomainError):
            maximize_cw(np.eye(3), start=np.full((3, 3), 1 / 3))

    def test_serialisation(self):
        res = maximize_cw(ds(3, 0))
        d = json.loads(json.dumps(res.to_dict()))
        assert set(d) == {"q_star", "value", "duality_gap", "iterations", "converged"}
        lines = res.trace_csv().splitlines()
        assert lines[0] == "iteration,value,gap" and len(lines) == len(res.trace) + 1


class TestCapacity:
    @given(st.integers(2, 7), seeds)
    def test_doubly_stochastic_is_zero(self, n, seed):
        res = capacity_product(ds(n, seed))
        assert abs(res.value) <= 1e-10
        np.testing.assert_allclose(res.minimizer, 1.0, atol=1e-6)

    def test_diagonal(self):
        d = np.array([0.5, 2.0, 3.0])
        assert capacity_product(np.diag(d)).value == pytest.approx(np.log(d).sum(), abs=1e-10)

    def test_all_ones_2x2(self):
        assert capacity_product(np.ones((2, 2))).value == pytest.approx(math.log(4), abs=1e-12)

    @given(st.integers(2, 7), seeds)
    def test_sinkhorn_dual(self, n, seed):
        M = np.random.default_rng(seed).random((n, n)) + 0.01
        S, scale = sinkhorn_scale(M, tol=1e-13)
        res = capacity_product(M)
        assert res.converged and res.gradient_norm <= 1e-10
        assert abs(capacity_product(S).value) <= 1e-6
        assert res.value == pytest.approx(-scale.log_det, abs=1e-8)
        assert abs(np.log(res.minimizer).sum()) <= 1e-10

    def test_capacity_errors(self):
        with pytest.raises(DomainError):
            capacity_product([[1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(Unbounded):
            capacity_product([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(DomainError):
            capacity_qj(np.eye(3), 5)
        with pytest.raises(Unbounded):
            capacity_qj([[1.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 0.0, 1.0]], 0)

    @pytest.mark.parametrize("n", [2, 4])
    def test_qj_identity(self, n):
        for j in range(n):
            assert capacity_qj(np.eye(n), j).value == pytest.approx(0.0, abs=1e-10)

    @settings(max_examples=30)
    @given(st.integers(2, 6), seeds, st.data())
    def test_qj_dominates_cpr(self, n, seed, data):
        P = ds(n, seed)
        j = data.draw(st.integers(0, n - 1))
        res = capacity_qj(P, j)
        assert res.value >= log_cpr(P, j) - 1e-7
        assert abs(np.log(res.minimizer).sum()) <= 1e-10

    @given(st.integers(2, 6), seeds, st.data())
    def test_qj_at_ones(self, n, seed, data):
        P = ds(n, seed)
        j = data.draw(st.integers(0, n - 1))
        others = np.prod(1 - P[:, j]) / (1 - P[:, j])
        assert qj_log_value(P, j, np.zeros(n - 1)) == pytest.approx(
            math.log(np.sum(P[:, j] * others)), abs=1e-12)

    def test_qj_matches_direct_polynomial(self, rng):
        P = ds(4, 5)
        j = 2
        x = rng.random(3) + 0.3
        full = np.insert(x, j, 0.0)
        direct = sum(P[i, j] * np.prod([P[k] @ full for k in range(4) if k != i]) for i in range(4))
        assert qj_log_value(P, j, np.log(x)) == pytest.approx(math.log(direct), abs=1e-12)

    def test_result_serialisation(self):
        d = capacity_product(ds(3, 1)).to_dict()
        assert set(d) == {"value", "minimizer", "gradient_norm", "converged", "iterations"}
        json.dumps(d)
