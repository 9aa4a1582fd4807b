"""Attention schemes: Gaussian weight matrix, score variants, gradients."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from tgsa import tensor as ops
from tgsa.attention import (
    SIGMA_MIN,
    AttentionParams,
    AttentionScheme,
    attention_scores,
    gaussian_weight_matrix,
    gsa_attention,
    multi_head_attention,
    sigma_gradient_check,
    softplus_inverse,
    squared_distance_matrix,
)
from tgsa.errors import DomainError
from tgsa.gradcheck import check_gradients
from tgsa.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def make_params(rng, dim=8, heads=2, scheme=AttentionScheme.GAUSSIAN_WEIGHTED, **kw):
    return AttentionParams.create(dim, heads, scheme, rng, **kw)


class TestGaussianWeightMatrix:
    @pytest.mark.parametrize("length,sigma", [(1, 0.5), (4, 2.0), (9, 0.3), (16, 7.7)])
    def test_diagonal_exactly_one(self, length, sigma):
        g = gaussian_weight_matrix(length, sigma).data
        npt.assert_array_equal(np.diag(g), np.ones(length))

    def test_hand_value_sigma2_distance2(self):
        g = gaussian_weight_matrix(5, 2.0).data
        expected = math.exp(-4.0 / 4.0)
        npt.assert_allclose(g[0, 2], expected, rtol=1e-15)
        npt.assert_allclose(g[3, 1], expected, rtol=1e-15)
        assert abs(expected - 0.36787944117144233) < 1e-16

    def test_large_sigma_converges_to_all_ones(self):
        g = gaussian_weight_matrix(4, 1e6).data
        assert np.all(g >= 1.0 - 1e-9)

    def test_symmetry_range_and_monotone_decay(self, rng):
        for _ in range(20):
            t = int(rng.integers(2, 24))
            sigma = float(rng.uniform(0.5, 9.0))
            g = gaussian_weight_matrix(t, sigma).data
            npt.assert_array_equal(g, g.T)
            assert np.all(g > 0.0) and np.all(g <= 1.0)
            row = g[0]  # distances 0..t-1 in order
            assert np.all(np.diff(row) < 0.0)

    def test_rejects_nonpositive_sigma_and_length(self):
        with pytest.raises(DomainError):
            gaussian_weight_matrix(4, 0.0)
        with pytest.raises(DomainError):
            gaussian_weight_matrix(4, -1.5)
        with pytest.raises(DomainError):
            gaussian_weight_matrix(0, 1.0)

    def test_dsigma_sum_hand_derivative(self):
        # T=2, sigma=1: sum(G) = 2 + 2*exp(-1); d/dsigma = 2 * exp(-1) * 2 / sigma^3
        sigma = Tensor([1.0], requires_grad=True)
        ops.backward(ops.sum(gaussian_weight_matrix(2, sigma)))
        expected = 4.0 * math.exp(-1.0)
        npt.assert_allclose(sigma.grad, [expected], rtol=1e-12)

    def test_dsigma_entrywise_hand_formula(self):
        # dG[i,j]/dsigma = exp(-d^2/s^2) * 2 d^2 / s^3, checked per entry.
        t, s = 5, 1.7
        d2 = squared_distance_matrix(t)
        expected = np.exp(-d2 / s**2) * 2.0 * d2 / s**3
        for i in range(t):
            for j in range(t):
                sigma = Tensor([s], requires_grad=True)
                pick = np.zeros((t, t))
                pick[i, j] = 1.0
                ops.backward(ops.sum(ops.mul(gaussian_weight_matrix(t, sigma), Tensor(pick))))
                npt.assert_allclose(sigma.grad[0], expected[i, j], rtol=1e-6, atol=1e-300)

    def test_per_head_sigma_stacks(self):
        g = gaussian_weight_matrix(3, Tensor([1.0, 2.0]))
        assert g.shape == (2, 3, 3)
        npt.assert_allclose(g.data[0, 0, 1], math.exp(-1.0), rtol=1e-15)
        npt.assert_allclose(g.data[1, 0, 1], math.exp(-0.25), rtol=1e-15)


class TestAttentionScores:
    def scores(self, rng, t=6, scheme=AttentionScheme.VANILLA, sigma=None, d=4):
        q = Tensor(rng.uniform(-1, 1, (1, 1, t, d)))
        k = Tensor(rng.uniform(-1, 1, (1, 1, t, d)))
        return q, k, attention_scores(q, k, scheme, sigma)

    def test_vanilla_is_scaled_qkt(self, rng):
        q, k, s = self.scores(rng)
        expected = q.data[0, 0] @ k.data[0, 0].T / 2.0
        npt.assert_allclose(s.data[0, 0], expected, rtol=1e-12)

    def test_gaussian_large_sigma_matches_vanilla(self, rng):
        q, k, vanilla = self.scores(rng, t=8)
        gsa = attention_scores(q, k, AttentionScheme.GAUSSIAN_WEIGHTED, 1e6)
        assert np.max(np.abs(gsa.data - vanilla.data)) < 1e-9

    def test_gaussian_diagonal_equals_vanilla_exactly(self, rng):
        q, k, vanilla = self.scores(rng, t=7)
        gsa = attention_scores(q, k, AttentionScheme.GAUSSIAN_WEIGHTED, 1.3)
        npt.assert_array_equal(np.diagonal(gsa.data, axis1=-2, axis2=-1),
                               np.diagonal(vanilla.data, axis1=-2, axis2=-1))

    def test_half_weight_preserves_sign(self):
        # C[0,1] = -1.0 with g = 0.5 gives S[0,1] = -0.5: scale changes, sign does not.
        sigma = 1.0 / math.sqrt(math.log(2.0))
        q = Tensor(np.array([-1.0, 1.0]).reshape(1, 1, 2, 1))
        k = Tensor(np.ones((1, 1, 2, 1)))
        s = attention_scores(q, k, AttentionScheme.GAUSSIAN_WEIGHTED, sigma)
        npt.assert_allclose(s.data[0, 0, 0, 1], -0.5, rtol=1e-12)
        assert np.array_equal(np.sign(s.data[0, 0]), np.sign(q.data[0, 0] @ k.data[0, 0].T))

    def test_additive_bias_can_flip_sign(self):
        # C[0,1] = +0.5; bias -(0-1)^2/1 = -1 pushes it to -0.5.
        q = Tensor(np.array([0.5, 0.5]).reshape(1, 1, 2, 1))
        k = Tensor(np.ones((1, 1, 2, 1)))
        c = q.data[0, 0] @ k.data[0, 0].T
        s = attention_scores(q, k, AttentionScheme.ADDITIVE_BIAS, 1.0)
        assert c[0, 1] > 0 > s.data[0, 0, 0, 1]

    def test_sign_preservation_bulk(self, rng):
        # 1000 random score matrices: gaussian weighting never flips a sign.
        for _ in range(1000):
            t = int(rng.integers(2, 12))
            c = rng.uniform(-5, 5, (t, t))
            sigma = float(rng.uniform(1.0, 8.0))
            s = gaussian_weight_matrix(t, sigma).data * c
            assert np.array_equal(np.sign(s), np.sign(c))

    def test_sigma_required_for_weighted_schemes(self, rng):
        q = Tensor(rng.uniform(-1, 1, (1, 1, 3, 2)))
        with pytest.raises(DomainError):
            attention_scores(q, q, AttentionScheme.GAUSSIAN_WEIGHTED)


class TestFullAttention:
    def test_single_frame_weights_are_one(self, rng):
        # T=1: softmax over one symbol is [[1.0]]; output is v @ w_o for any scheme.
        p = make_params(rng, dim=4, heads=2)
        h = Tensor(rng.uniform(-1, 1, (1, 1, 4)))
        for scheme in AttentionScheme:
            out = gsa_attention(h, p, scheme)
            v = h.data[0] @ p.w_v.data
            npt.assert_allclose(out.data[0], v @ p.w_o.data, rtol=1e-12)

    def test_attention_rows_sum_to_one_all_schemes(self, rng):
        p = make_params(rng, dim=8, heads=4)
        h = Tensor(rng.uniform(-1, 1, (2, 5, 8)))
        for scheme in AttentionScheme:
            sigma = p.effective_sigma() if scheme.uses_sigma else None
            q = ops.matmul(h, p.w_q)
            k = ops.matmul(h, p.w_k)
            from tgsa.attention import split_heads
            scores = attention_scores(split_heads(q, 4), split_heads(k, 4), scheme, sigma)
            use_abs = scheme.abs_default
            w = ops.softmax_rows(ops.abs_elem(scores) if use_abs else scores)
            npt.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
            assert np.all(w.data >= 0)

    def test_hand_computed_two_frame_output(self):
        # B=1, E=1, T=2, D=2 against an independently scripted evaluation.
        wq = np.array([[0.3, -0.5], [0.8, 0.1]])
        wk = np.array([[-0.2, 0.4], [0.6, 0.9]])
        wv = np.array([[1.0, 0.2], [-0.3, 0.5]])
        wo = np.array([[0.7, -0.1], [0.4, 1.1]])
        h = np.array([[0.5, -1.0], [1.5, 0.25]])
        sigma_eff = 2.0

        q, k, v = h @ wq, h @ wk, h @ wv
        c = q @ k.T / math.sqrt(2.0)
        g = np.array([[1.0, math.exp(-1.0 / sigma_eff**2)],
                      [math.exp(-1.0 / sigma_eff**2), 1.0]])
        s = g * c
        a = np.abs(s)
        e = np.exp(a - a.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        expected = (w @ v) @ wo

        params = AttentionParams(
            w_q=Tensor(wq), w_k=Tensor(wk), w_v=Tensor(wv), w_o=Tensor(wo),
            sigma_raw=Tensor([softplus_inverse(sigma_eff - SIGMA_MIN)], requires_grad=True),
            heads=1, model_dim=2)
        out = gsa_attention(Tensor(h[None]), params, AttentionScheme.GAUSSIAN_WEIGHTED)
        npt.assert_allclose(out.data[0], expected, rtol=1e-12)

    def test_abs_softmax_weights_bitwise_invariant_under_negation(self, rng):
        # Negating C negates S exactly; |S| and hence the weights are unchanged.
        for _ in range(50):
            t = int(rng.integers(2, 10))
            c = rng.uniform(-4, 4, (t, t))
            g = gaussian_weight_matrix(t, float(rng.uniform(0.5, 6.0))).data
            w_pos = ops.softmax_rows(ops.abs_elem(Tensor(g * c))).data
            w_neg = ops.softmax_rows(ops.abs_elem(Tensor(g * (-c)))).data
            assert np.array_equal(w_pos, w_neg)

    def test_permutation_covariance_vanilla_no_abs(self, rng):
        p = make_params(rng, dim=6, heads=3, scheme=AttentionScheme.VANILLA)
        h = rng.uniform(-1, 1, (1, 7, 6))
        perm = rng.permutation(7)
        out = gsa_attention(Tensor(h), p, AttentionScheme.VANILLA, abs_before_softmax=False)
        out_perm = gsa_attention(Tensor(h[:, perm]), p, AttentionScheme.VANILLA,
                                 abs_before_softmax=False)
        npt.assert_allclose(out_perm.data, out.data[:, perm], atol=1e-12)

    def test_cross_attention_uses_kv_source(self, rng):
        p = make_params(rng, dim=4, heads=1, scheme=AttentionScheme.VANILLA)
        q_src = Tensor(rng.uniform(-1, 1, (1, 3, 4)))
        kv_a = Tensor(rng.uniform(-1, 1, (1, 3, 4)))
        kv_b = Tensor(rng.uniform(-1, 1, (1, 3, 4)))
        out_a = multi_head_attention(q_src, kv_a, p, AttentionScheme.VANILLA)
        out_b = multi_head_attention(q_src, kv_b, p, AttentionScheme.VANILLA)
        assert not np.allclose(out_a.data, out_b.data)

    def test_all_params_receive_gradient(self, rng):
        p = make_params(rng, dim=8, heads=2)
        h = Tensor(rng.uniform(-1, 1, (2, 6, 8)))
        loss = ops.sum(ops.square(gsa_attention(h, p, AttentionScheme.GAUSSIAN_WEIGHTED)))
        ops.backward(loss)
        for name, t in p.named().items():
            assert np.linalg.norm(t.grad) > 0, f"dead path: {name}"

    def test_sigma_grad_zero_when_t_is_one(self, rng):
        p = make_params(rng, dim=4, heads=2)
        h = Tensor(rng.uniform(-1, 1, (1, 1, 4)))
        loss = ops.sum(ops.square(gsa_attention(h, p, AttentionScheme.GAUSSIAN_WEIGHTED)))
        ops.backward(loss)
        npt.assert_array_equal(p.sigma_raw.grad, np.zeros(1))


class TestSigmaGradientCheck:
    def test_random_batch_passes(self, rng):
        p = make_params(rng, dim=8, heads=2, sigma_init=3.0)
        batch = Tensor(rng.uniform(-1, 1, (2, 6, 8)))
        report = sigma_gradient_check(p, batch)
        assert report.passed, str(report)
        assert report.max_rel_error < 1e-4

    def test_additive_bias_sigma_gradient(self, rng):
        p = make_params(rng, dim=4, heads=1, scheme=AttentionScheme.ADDITIVE_BIAS, sigma_init=2.0)
        batch = Tensor(rng.uniform(-1, 1, (1, 5, 4)))
        report = sigma_gradient_check(p, batch, scheme=AttentionScheme.ADDITIVE_BIAS)
        assert report.passed, str(report)

    def test_vanilla_scheme_rejected(self, rng):
        p = make_params(rng, dim=4, heads=1)
        with pytest.raises(DomainError):
            sigma_gradient_check(p, Tensor(np.zeros((1, 2, 4))), scheme=AttentionScheme.VANILLA)


class TestSchemeParsing:
    @pytest.mark.parametrize("alias,expected", [
        ("gsa", AttentionScheme.GAUSSIAN_WEIGHTED),
        ("T-GSA", AttentionScheme.GAUSSIAN_WEIGHTED),
        ("ot", AttentionScheme.VANILLA),
        ("vanilla", AttentionScheme.VANILLA),
        ("tab", AttentionScheme.ADDITIVE_BIAS),
        ("additive-bias", AttentionScheme.ADDITIVE_BIAS),
    ])
    def test_aliases(self, alias, expected):
        assert AttentionScheme.from_name(alias) is expected

    def test_unknown_rejected(self):
        with pytest.raises(DomainError):
            AttentionScheme.from_name("rotary")

    def test_vanilla_has_no_sigma(self, rng):
        p = make_params(rng, scheme=AttentionScheme.VANILLA)
        assert p.sigma_raw is None
        assert "sigma_raw" not in p.named()


def test_attention_full_gradient_check(rng):
    p = make_params(rng, dim=6, heads=2, sigma_init=2.5)
    h = Tensor(rng.uniform(-1, 1, (1, 4, 6)))

    def loss_fn():
        return ops.sum(ops.square(gsa_attention(h, p, AttentionScheme.GAUSSIAN_WEIGHTED)))

    report = check_gradients(loss_fn, p.named(), tol=1e-5, rng=rng)
    assert report.passed, str(report)
