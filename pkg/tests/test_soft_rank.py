import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shiva.finite_diff import numeric_jacobian, rel_error
from shiva.numeric import make_rng, sigmoid
from shiva.soft_rank import (anneal, chain_scores_grad, inclusion_grads, inclusion_prob,
                             perturb_scores, rank_vjp, soft_rank, soft_rank_jacobian)

score_vectors = st.integers(1, 24).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-20, 20)))
temperatures = st.floats(0.01, 10.0)


def hard_descending_rank(s):
    """1-based rank where the largest score gets rank 1."""
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(len(s))
    ranks[order] = np.arange(1, len(s) + 1)
    return ranks


def loop_soft_rank(s, tau):
    """Straight-line double loop, independent of the vectorized code."""
    n = len(s)
    return np.array([1.0 + sum(1.0 / (1.0 + np.exp(-(s[j] - s[i]) / tau))
                               for j in range(n) if j != i) for i in range(n)])


class TestSoftRank:
    def test_ties(self):
        np.testing.assert_array_equal(soft_rank([5.0, 5.0], 0.7).ranks, [1.5, 1.5])

    def test_single_token(self):
        np.testing.assert_array_equal(soft_rank([2.0], 0.3).ranks, [1.0])

    def test_low_temperature(self):
        np.testing.assert_allclose(soft_rank([3.0, 1.0, 2.0], 0.01).ranks, [1, 3, 2], atol=1e-6)

    def test_matches_loop_oracle(self):
        s = make_rng(0).normal(size=9)
        np.testing.assert_allclose(soft_rank(s, 0.4).ranks, loop_soft_rank(s, 0.4), rtol=1e-13)

    def test_pairwise_cache(self):
        state = soft_rank([0.2, -0.5, 1.0], 0.5)
        assert np.all(np.diag(state.pairwise) == 0)
        np.testing.assert_allclose(state.pairwise[0, 2], sigmoid((1.0 - 0.2) / 0.5))

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_temperature(self, tau):
        with pytest.raises(ValueError):
            soft_rank([1.0, 2.0], tau)

    def test_non_finite_scores(self):
        with pytest.raises(ValueError):
            soft_rank([1.0, np.inf], 0.1)

    @given(score_vectors, temperatures)
    def test_rank_sum_conserved(self, s, tau):
        n = len(s)
        assert abs(soft_rank(s, tau).ranks.sum() - n * (n + 1) / 2) < 1e-9

    @given(score_vectors, temperatures)
    def test_ranks_in_range(self, s, tau):
        r = soft_rank(s, tau).ranks
        assert np.all(r >= 1.0) and np.all(r <= len(s))

    @given(score_vectors, temperatures)
    def test_order_consistency(self, s, tau):
        r = soft_rank(s, tau).ranks
        i, j = np.argmax(s), np.argmin(s)
        assume((s[i] - s[j]) / tau > 1e-6)
        assert r[i] < r[j]

    def test_hard_limit(self):
        """Gaps of at least 10 tau put every soft rank within 1e-3 of the hard one."""
        rng = make_rng(1)
        for n in (2, 5, 16, 32):
            for _ in range(20):
                tau = rng.uniform(0.01, 1.0)
                s = np.cumsum(rng.uniform(10 * tau, 30 * tau, size=n))
                s = rng.permutation(s)
                assert np.max(np.abs(soft_rank(s, tau).ranks - hard_descending_rank(s))) < 1e-3


class TestJacobian:
    def test_sign_structure_and_row_sums(self):
        rng = make_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 33))
            jac = soft_rank_jacobian(soft_rank(rng.normal(size=n) * 2, rng.uniform(0.1, 2)))
            off = jac[~np.eye(n, dtype=bool)]
            assert np.all(np.diag(jac) < 0) and np.all(off > 0)
            assert np.max(np.abs(jac.sum(axis=1))) < 1e-10

    def test_finite_differences(self):
        s = make_rng(3).normal(size=8)
        num = numeric_jacobian(lambda v: soft_rank(v, 0.5).ranks, s, 1e-6)
        assert np.max(np.abs(soft_rank_jacobian(soft_rank(s, 0.5)) - num)) < 1e-5

    @settings(max_examples=50)
    @given(st.integers(1, 20), st.integers(0, 10_000))
    def test_vjp_matches_dense(self, n, seed):
        rng = make_rng(seed)
        state = soft_rank(rng.normal(size=n), 0.3)
        g = rng.normal(size=n)
        np.testing.assert_allclose(rank_vjp(state, g), g @ soft_rank_jacobian(state), atol=1e-12)


class TestInclusion:
    def test_half_at_own_rank(self):
        state = soft_rank([0.3, -1.0, 2.0], 0.5)
        probs = inclusion_prob(state, float(state.ranks[1]), 0.2)
        assert probs.pi[1] == 0.5

    def test_full_budget_cold(self):
        """k = N keeps every token except the last, which sits exactly on the boundary."""
        state = soft_rank(make_rng(4).normal(size=10), 0.01)
        pi = inclusion_prob(state, 10.0, 1e-3).pi
        last = np.argmax(state.ranks)
        assert pi[last] == pytest.approx(0.5, abs=1e-6)
        assert np.all(np.delete(pi, last) > 0.99)

    def test_normalized_temperature(self):
        state = soft_rank([1.0, 0.0, -1.0, 0.5], 0.2)
        a = inclusion_prob(state, 2.0, 0.1, normalized=True).pi
        b = inclusion_prob(state, 2.0, 0.4, normalized=False).pi
        np.testing.assert_array_equal(a, b)

    def test_argument_errors(self):
        state = soft_rank([1.0, 2.0], 0.2)
        with pytest.raises(ValueError):
            inclusion_prob(state, 3.0, 0.1)
        with pytest.raises(ValueError):
            inclusion_prob(state, 1.0, 0.0)

    def test_monotone_in_k(self):
        state = soft_rank(make_rng(5).normal(size=12), 0.3)
        pis = np.array([inclusion_prob(state, k, 0.1).pi for k in np.linspace(0, 12, 400)])
        assert np.all(np.diff(pis, axis=0) >= 0)

    def test_anti_monotone_in_rank(self):
        state = soft_rank(make_rng(6).normal(size=12), 0.3)
        pi = inclusion_prob(state, 5.5, 0.05).pi
        order = np.argsort(state.ranks)
        assert np.all(np.diff(pi[order]) < 0)

    def test_grads(self):
        state = soft_rank(make_rng(7).normal(size=10), 0.4)
        probs = inclusion_prob(state, 4.3, 0.1)
        dpi_dr, dpi_dk = inclusion_grads(probs, state)
        assert np.all(dpi_dk > 0)
        np.testing.assert_array_equal(dpi_dr, -dpi_dk)
        h = 1e-6
        num = (inclusion_prob(state, 4.3 + h, 0.1).pi - inclusion_prob(state, 4.3 - h, 0.1).pi) / (2 * h)
        assert rel_error(dpi_dk, num) < 1e-6


class TestChainScores:
    def test_zero_upstream(self):
        state = soft_rank([0.1, 0.4, -0.3], 0.3)
        np.testing.assert_array_equal(
            chain_scores_grad(np.zeros(3), inclusion_prob(state, 1.5, 0.1), state), np.zeros(3))

    def test_shift_invariant(self):
        rng = make_rng(8)
        s, w = rng.normal(size=6), rng.normal(size=6)
        a, b = soft_rank(s, 0.3), soft_rank(s + 4.0, 0.3)
        ga = chain_scores_grad(w, inclusion_prob(a, 2.0, 0.1), a)
        gb = chain_scores_grad(w, inclusion_prob(b, 2.0, 0.1), b)
        np.testing.assert_allclose(ga, gb, atol=1e-12)

    def test_end_to_end_finite_differences(self):
        rng = make_rng(9)
        s, w = rng.normal(size=6), rng.normal(size=6)

        def loss(v):
            return np.array([w @ inclusion_prob(soft_rank(v, 0.5), 2.7, 0.2).pi])

        state = soft_rank(s, 0.5)
        ana = chain_scores_grad(w, inclusion_prob(state, 2.7, 0.2), state)
        assert rel_error(ana, numeric_jacobian(loss, s, 1e-6)[0]) < 1e-5

    def test_dimension_mismatch(self):
        state = soft_rank([0.1, 0.4, -0.3], 0.3)
        with pytest.raises(ValueError):
            chain_scores_grad(np.zeros(2), inclusion_prob(state, 1.5, 0.1), state)


class TestPerturb:
    def test_zero_sigma_is_identity(self):
        s = np.array([0.3, -2.0])
        np.testing.assert_array_equal(perturb_scores(s, 0.0), s)

    def test_reproducible(self):
        s = np.zeros(5)
        np.testing.assert_array_equal(perturb_scores(s, 0.2, make_rng(1)),
                                      perturb_scores(s, 0.2, make_rng(1)))

    def test_empirical_std(self):
        eps = perturb_scores(np.zeros(100_000), 0.37, make_rng(2))
        assert abs(eps.std() / 0.37 - 1.0) < 0.01

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            perturb_scores([1.0], -0.1, make_rng(0))


def test_anneal_endpoints():
    assert anneal(0, 100, 0.2, 0.02) == 0.2
    assert anneal(100, 100, 0.2, 0.02) == pytest.approx(0.02)
    assert anneal(50, 100, 0.2, 0.02) == pytest.approx(0.11)
    assert anneal(500, 100, 0.2, 0.02) == pytest.approx(0.02)
