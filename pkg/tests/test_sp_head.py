"""Unit tests for the parameter-free pooled attention and the spatial regressor."""

import numpy as np
import pytest

from spssl import autodiff as ad
from spssl.autodiff import Tensor
from spssl.encoder import TokenBundle
from spssl.geometry import SpatialTarget
from spssl.sp_head import (HIDDEN, init_sp_head_params, pooled_query_attention,
                           predict, predict_from_pooled, sp_head_param_count,
                           sp_loss)

RNG = np.random.default_rng(0)


class TestPooledAttention:
    def test_single_token_returns_that_token(self):
        q = Tensor(RNG.standard_normal((1, 8)))
        Z = Tensor(RNG.standard_normal((1, 8)))
        h = pooled_query_attention(q, Z)
        np.testing.assert_allclose(h.data, Z.data, atol=1e-12)

    def test_zero_query_gives_column_mean(self):
        # layer_norm maps the zero query to zero, so every logit ties and the
        # attention is exactly uniform
        q = Tensor(np.zeros((1, 8)))
        Z = Tensor(RNG.standard_normal((5, 8)))
        h = pooled_query_attention(q, Z)
        np.testing.assert_allclose(h.data[0], Z.data.mean(axis=0), atol=1e-12)

    def test_output_in_convex_hull_of_tokens(self):
        q = Tensor(RNG.standard_normal((1, 8)))
        Z = Tensor(RNG.standard_normal((12, 8)))
        h = pooled_query_attention(q, Z).data[0]
        assert (h >= Z.data.min(axis=0) - 1e-12).all()
        assert (h <= Z.data.max(axis=0) + 1e-12).all()

    def test_temperature_flag_divides_logits(self):
        q = Tensor(RNG.standard_normal((1, 16)))
        Z = Tensor(RNG.standard_normal((6, 16)))
        scaled = pooled_query_attention(q, Z, temperature_scaled=True).data
        # reproduce by hand: normalized query, scaled dot products, softmax
        qn = q.data - q.data.mean(axis=-1, keepdims=True)
        qn = qn / np.sqrt((qn * qn).mean(axis=-1, keepdims=True) + 1e-6)
        logits = qn @ Z.data.T / np.sqrt(16)
        e = np.exp(logits - logits.max())
        ref = (e / e.sum()) @ Z.data
        np.testing.assert_allclose(scaled, ref, atol=1e-10)
        unscaled = pooled_query_attention(q, Z).data
        assert not np.allclose(scaled, unscaled)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ad.ShapeError):
            pooled_query_attention(Tensor(np.zeros((1, 8))), Tensor(np.zeros((4, 6))))

    def test_grad_check_through_attention(self):
        Z = Tensor(RNG.standard_normal((5, 6)))
        err = ad.grad_check(
            lambda q: ad.reduce_sum(pooled_query_attention(q, Z)),
            Tensor(RNG.standard_normal((1, 6)), requires_grad=True))
        assert err < 1e-6


class TestRegressor:
    def test_param_count_matches_formula(self):
        dim = 32
        params = init_sp_head_params(dim, RNG)
        total = sum(t.size for t in params.values())
        assert total == sp_head_param_count(dim)
        assert params["sp.fc1.w"].shape == (2 * dim, HIDDEN)

    def test_fresh_head_bias_is_identity_transform(self):
        params = init_sp_head_params(16, RNG)
        np.testing.assert_array_equal(params["sp.fc2.b"].data, [0, 0, 1, 1])

    def test_predict_composes_pool_and_mlp(self):
        dim = 8
        params = init_sp_head_params(dim, RNG)
        ref = TokenBundle(Z=Tensor(RNG.standard_normal((2, 4, dim))),
                          z=Tensor(RNG.standard_normal((2, 1, dim))))
        tgt = TokenBundle(Z=Tensor(RNG.standard_normal((2, 4, dim))),
                          z=Tensor(RNG.standard_normal((2, 1, dim))))
        out = predict(ref, tgt, params)
        h_r = pooled_query_attention(ref.z, ref.Z)
        h_t = pooled_query_attention(ref.z, tgt.Z)
        ref_out = predict_from_pooled(ad.concat_last([h_r, h_t]), params)
        np.testing.assert_allclose(out.p_hat.data, ref_out.p_hat.data, atol=1e-12)
        np.testing.assert_allclose(out.s_hat.data, ref_out.s_hat.data, atol=1e-12)
        assert out.p_hat.shape == (2, 1, 2)
        assert out.s_hat.shape == (2, 1, 2)


class TestSpLoss:
    def _pred(self, p, s):
        from spssl.sp_head import SpPrediction
        return SpPrediction(p_hat=Tensor(np.asarray(p, dtype=np.float64)),
                            s_hat=Tensor(np.asarray(s, dtype=np.float64)))

    def test_zero_at_exact_prediction(self):
        target = SpatialTarget(p=(0.3, -0.7), s=(1.2, 0.8))
        loss = sp_loss(self._pred([0.3, -0.7], [1.2, 0.8]), target)
        assert float(loss.data) == 0.0

    def test_hand_value(self):
        # dp = (1, 0), ds = (0, 2): 0.1 * 1 + 0.1 * 4 = 0.5
        target = SpatialTarget(p=(0.0, 0.0), s=(1.0, 1.0))
        loss = sp_loss(self._pred([1.0, 0.0], [1.0, 3.0]), target)
        np.testing.assert_allclose(float(loss.data), 0.5, atol=1e-12)

    def test_batch_average(self):
        targets = np.array([[0, 0, 1, 1], [0, 0, 1, 1]], dtype=np.float64)
        pred = self._pred([[1, 0], [0, 0]], [[1, 1], [1, 1]])
        loss = sp_loss(pred, targets)
        np.testing.assert_allclose(float(loss.data), 0.05, atol=1e-12)

    def test_weights_scale_terms_independently(self):
        target = SpatialTarget(p=(0.0, 0.0), s=(1.0, 1.0))
        pred = self._pred([1.0, 0.0], [2.0, 1.0])
        base = float(sp_loss(pred, target, 0.1, 0.1).data)
        p_only = float(sp_loss(pred, target, 0.1, 0.0).data)
        s_only = float(sp_loss(pred, target, 0.0, 0.1).data)
        np.testing.assert_allclose(p_only + s_only, base, atol=1e-12)
        assert float(sp_loss(pred, target, 0.0, 0.0).data) == 0.0

    def test_negative_weight_rejected(self):
        target = SpatialTarget(p=(0.0, 0.0), s=(1.0, 1.0))
        with pytest.raises(ValueError):
            sp_loss(self._pred([0, 0], [1, 1]), target, -0.1, 0.1)
