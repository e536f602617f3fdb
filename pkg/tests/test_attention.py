import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geoformer.attention import (
    INFORMER_MAX_MEAN,
    PAPER_EQ3,
    AttentionConfig,
    DotProductCounter,
    ProbSparseConfig,
    count_dot_products,
    dense_attention,
    multi_head_self_attention,
    n_top_queries,
    probsparse_attention,
    sparsity_measurement,
    top_u_queries,
)
from geoformer.errors import ConfigurationError, DimensionError
from geoformer.gradcheck import gradient_error
from geoformer.tensor import Tensor


def brute_force_attention(q, k, v):
    """Two-loop reference: explicit dot products, exponentials and weighted sums."""
    n_q, d = q.shape
    out = np.zeros((n_q, v.shape[1]))
    for i in range(n_q):
        scores = [sum(q[i, p] * k[j, p] for p in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        top = max(scores)
        w = [math.exp(s - top) for s in scores]
        z = sum(w)
        for j in range(k.shape[0]):
            out[i] += (w[j] / z) * v[j]
    return out


def leaf(rng, *shape):
    return Tensor(rng.uniform(-2, 2, shape), requires_grad=True)


class TestConfigs:
    def test_dk(self):
        assert AttentionConfig(64, 4).d_k == 16

    def test_indivisible(self):
        with pytest.raises(ConfigurationError):
            AttentionConfig(10, 4)

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            ProbSparseConfig(measurement_variant="median")

    @pytest.mark.parametrize("n,u", [(1, 1), (2, 2), (10, 10), (32, 18), (100, 24), (4096, 42)])
    def test_u_formula(self, n, u):
        assert n_top_queries(n, 5.0) == u
        assert u == (1 if n == 1 else min(n, math.ceil(5 * math.log(n))))


class TestDenseAttention:
    def test_single_token(self):
        one = Tensor([[1.0]])
        np.testing.assert_array_equal(dense_attention(one, one, one).data, [[1.0]])

    def test_hand_computed(self):
        out = dense_attention(Tensor([[1.0], [0.0]]), Tensor([[1.0], [0.0]]), Tensor([[2.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[2.5379], [3.0]], atol=1e-3)

    def test_constant_values(self):
        rng = np.random.default_rng(2)
        v = np.tile([[1.5, -2.0, 0.25]], (6, 1))
        out = dense_attention(Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(6, 5))), Tensor(v))
        np.testing.assert_allclose(out.data, np.tile(v[:1], (4, 1)), atol=1e-14)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        q, k, v = rng.normal(size=(5, 3)), rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
        out = dense_attention(Tensor(q), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(out, brute_force_attention(q, k, v), atol=1e-9, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dense_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 1))))

    def test_batched_equals_per_item(self):
        rng = np.random.default_rng(4)
        q, k, v = rng.normal(size=(3, 2, 5, 4)), rng.normal(size=(3, 2, 6, 4)), rng.normal(size=(3, 2, 6, 3))
        out = dense_attention(Tensor(q), Tensor(k), Tensor(v)).data
        for b in range(3):
            for h in range(2):
                ref = dense_attention(Tensor(q[b, h]), Tensor(k[b, h]), Tensor(v[b, h])).data
                np.testing.assert_allclose(out[b, h], ref, atol=1e-14)

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        q, k, v = leaf(rng, 3, 4), leaf(rng, 3, 4), leaf(rng, 3, 4)
        err, _ = gradient_error(lambda: dense_attention(q, k, v), [q, k, v])
        assert err < 1e-4


class TestMultiHead:
    def test_identity_projections_single_head(self):
        rng = np.random.default_rng(6)
        e = Tensor(rng.normal(size=(5, 4)))
        eye = Tensor(np.eye(4))
        out = multi_head_self_attention(e, eye, eye, eye, eye, n_heads=1)
        np.testing.assert_allclose(out.data, dense_attention(e, e, e).data, atol=1e-14)

    @pytest.mark.parametrize("n", [1, 3, 17])
    def test_shape(self, n):
        rng = np.random.default_rng(n)
        ws = [Tensor(rng.normal(size=(8, 8))) for _ in range(4)]
        assert multi_head_self_attention(Tensor(rng.normal(size=(n, 8))), *ws, n_heads=4).shape == (n, 8)

    def test_heads_are_independent_blocks(self):
        # head h only sees columns h*d_k:(h+1)*d_k of the projections
        rng = np.random.default_rng(7)
        e = rng.normal(size=(4, 4))
        wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
        out = multi_head_self_attention(
            Tensor(e), Tensor(wq), Tensor(wk), Tensor(wv), Tensor(np.eye(4)), n_heads=2
        ).data
        for h in range(2):
            cols = slice(2 * h, 2 * h + 2)
            ref = brute_force_attention(e @ wq[:, cols], e @ wk[:, cols], e @ wv[:, cols])
            np.testing.assert_allclose(out[:, cols], ref, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(8)
        e = leaf(rng, 3, 4)
        ws = [leaf(rng, 4, 4) for _ in range(4)]
        err, _ = gradient_error(lambda: multi_head_self_attention(e, *ws, n_heads=2), [e, *ws])
        assert err < 1e-4


class TestSparsityMeasurement:
    def test_uniform_exp_mean(self):
        m = sparsity_measurement(np.zeros((1, 4)), PAPER_EQ3).values
        assert abs(m[0] - (math.log(4) - 1)) <= 1e-9
        assert m[0] == pytest.approx(0.38629, abs=1e-5)

    def test_uniform_max_mean(self):
        m = sparsity_measurement(np.full((2, 5), 3.7), INFORMER_MAX_MEAN).values
        np.testing.assert_allclose(m, 0.0, atol=1e-12)

    def test_dominant_query_scores_higher_max_mean(self):
        x = np.array([[10.0, 0, 0, 0], [2.5, 2.5, 2.5, 2.5]])
        m = sparsity_measurement(x, INFORMER_MAX_MEAN).values
        assert m[0] > m[1]

    def test_exponential_mean_is_not_a_dominance_ranking(self):
        # same row sum, peaked vs flat: the exp-mean term penalises the peak
        x = np.array([[10.0, 0, 0, 0], [2.5, 2.5, 2.5, 2.5]])
        m = sparsity_measurement(x, PAPER_EQ3).values
        assert m[0] < m[1]

    def test_exp_mean_formula_direct(self):
        x = np.array([[0.3, -1.2, 2.0, 0.7, -0.1]])
        ref = math.log(sum(math.exp(v) for v in x[0])) - sum(math.exp(v) for v in x[0]) / 5
        assert sparsity_measurement(x).values[0] == pytest.approx(ref, rel=1e-13)

    def test_overflow_flagged(self):
        res = sparsity_measurement(np.array([[800.0, 0.0], [1.0, 0.0]]), PAPER_EQ3)
        assert res.saturated.tolist() == [True, False]
        assert np.all(np.isfinite(res.values))
        assert res.values[0] < res.values[1]

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-5, 5)), st.permutations(range(6)))
    def test_key_permutation_invariance(self, x, perm):
        for variant in (PAPER_EQ3, INFORMER_MAX_MEAN):
            a = sparsity_measurement(x, variant).values
            b = sparsity_measurement(x[:, list(perm)], variant).values
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


class TestTopU:
    def test_count_100(self):
        m = np.random.default_rng(0).normal(size=100)
        assert top_u_queries(m, 5.0).size == 24

    def test_stable_ties(self):
        assert top_u_queries(np.array([1.0, 1.0, 1.0]), 1.5 / math.log(3)).tolist() == [0, 1]

    def test_single_query(self):
        assert top_u_queries(np.array([0.3]), 5.0).tolist() == [0]

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-3, 3).map(lambda v: round(v, 1))))
    def test_selection_dominates(self, m):
        idx = top_u_queries(m, 5.0)
        u = n_top_queries(m.size, 5.0)
        assert idx.size == u == len(set(idx.tolist()))
        assert np.all((idx >= 0) & (idx < m.size))
        rest = np.setdiff1d(np.arange(m.size), idx)
        for i in idx:
            for j in rest:
                assert m[i] > m[j] or (m[i] == m[j] and i < j)


class TestProbSparse:
    def test_full_query_limit_equals_dense(self):
        rng = np.random.default_rng(9)
        q, k, v = (Tensor(rng.normal(size=(20, 4))) for _ in range(3))
        cfg = ProbSparseConfig(sampling_factor=100.0)
        np.testing.assert_allclose(probsparse_attention(q, k, v, cfg).data, dense_attention(q, k, v).data, atol=1e-9)

    def test_single_query_is_dense(self):
        rng = np.random.default_rng(10)
        q, k, v = Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 2)))
        np.testing.assert_allclose(probsparse_attention(q, k, v).data, dense_attention(q, k, v).data, atol=1e-12)

    @pytest.mark.parametrize("variant", [PAPER_EQ3, INFORMER_MAX_MEAN])
    def test_selected_rows_dense_rest_mean(self, variant):
        rng = np.random.default_rng(11)
        qd, kd, vd = (rng.normal(size=(64, 8)) for _ in range(3))
        cfg = ProbSparseConfig(measurement_variant=variant)
        out = probsparse_attention(Tensor(qd), Tensor(kd), Tensor(vd), cfg).data
        dense = dense_attention(Tensor(qd), Tensor(kd), Tensor(vd)).data

        keys = cfg.sampled_keys(64)
        scores = qd @ kd[keys].T / math.sqrt(8)
        chosen = top_u_queries(sparsity_measurement(scores, variant).values, 5.0)
        assert chosen.size == 21
        lazy = np.setdiff1d(np.arange(64), chosen)
        np.testing.assert_allclose(out[chosen], dense[chosen], atol=1e-12)
        np.testing.assert_allclose(out[lazy], np.broadcast_to(vd.mean(axis=0), (lazy.size, 8)), atol=1e-12)

    def test_gradients_skip_selection(self):
        rng = np.random.default_rng(12)
        q, k, v = leaf(rng, 24, 4), leaf(rng, 24, 4), leaf(rng, 24, 3)
        err, _ = gradient_error(lambda: probsparse_attention(q, k, v), [q, k, v])
        assert err < 1e-4

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        q, k, v = (Tensor(rng.normal(size=(50, 4))) for _ in range(3))
        assert probsparse_attention(q, k, v).data.tobytes() == probsparse_attention(q, k, v).data.tobytes()


class TestDotCounts:
    def test_dense(self):
        assert count_dot_products(256, 256) == 65536

    def test_dense_doubling(self):
        assert count_dot_products(512, 512) == 4 * count_dot_products(256, 256)

    @pytest.mark.parametrize("n", [1, 7, 64, 256, 1000])
    def test_probsparse_matches_instrumented_run(self, n):
        cfg = ProbSparseConfig()
        rng = np.random.default_rng(n)
        q, k, v = (Tensor(rng.normal(size=(n, 4))) for _ in range(3))
        counter = DotProductCounter()
        probsparse_attention(q, k, v, cfg, counter)
        assert counter.count == count_dot_products(n, n, cfg)

    def test_probsparse_256_value(self):
        # u = ceil(5 ln 256) = 28 and 28 sampled keys
        assert count_dot_products(256, 256, ProbSparseConfig()) == 256 * 28 + 28 * 256

    def test_growth(self):
        cfg = ProbSparseConfig()
        counts = [count_dot_products(n, n, cfg) for n in (256, 512, 1024, 2048, 4096)]
        ratios = [b / a for a, b in zip(counts, counts[1:])]
        assert max(ratios) <= 2.6
        dense = [count_dot_products(n, n) for n in (256, 512, 1024, 2048, 4096)]
        assert [b / a for a, b in zip(dense, dense[1:])] == [4.0] * 4
        big = 1 << 16
        assert count_dot_products(big, big, cfg) / count_dot_products(big, big) < 0.01

    def test_batched_counter(self):
        counter = DotProductCounter()
        dense_attention(Tensor(np.ones((2, 3, 5, 4))), Tensor(np.ones((2, 3, 6, 4))), Tensor(np.ones((2, 3, 6, 1))), counter)
        assert counter.count == 2 * 3 * 5 * 6
