"""Reference-conditioned, parameter-free cross-attention and the spatial regressor.

The normalized reference class token queries the raw patch tokens of both
views; no learned projections and (by default) no temperature scaling are
applied. The only learnables are the two MLP layers of the predictor, whose
hidden width is fixed at 384 regardless of the encoder dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spssl import autodiff as ad
from spssl.autodiff import Tensor
from spssl.encoder import TokenBundle
from spssl.geometry import SpatialTarget

HIDDEN = 384
LN_EPS = 1e-6


@dataclass(frozen=True)
class SpPrediction:
    """Raw regression outputs; no range clamping."""

    p_hat: Tensor  # (..., 2)
    s_hat: Tensor  # (..., 2)


def init_sp_head_params(dim: int, rng: np.random.Generator, dtype=np.float32) -> dict:
    """MLP params for the spatial predictor.

    The second-layer bias starts at (0, 0, 1, 1) so the untrained head
    predicts the identity transform p=(0,0), s=(1,1).
    """
    in_dim = 2 * dim
    bound1 = 1.0 / np.sqrt(in_dim)
    bound2 = 1.0 / np.sqrt(HIDDEN)
    return {
        "sp.fc1.w": Tensor(rng.uniform(-bound1, bound1, (in_dim, HIDDEN)).astype(dtype), requires_grad=True),
        "sp.fc1.b": Tensor(np.zeros(HIDDEN, dtype=dtype), requires_grad=True),
        "sp.fc2.w": Tensor(rng.uniform(-bound2, bound2, (HIDDEN, 4)).astype(dtype), requires_grad=True),
        "sp.fc2.b": Tensor(np.array([0.0, 0.0, 1.0, 1.0], dtype=dtype), requires_grad=True),
    }


def sp_head_param_count(dim: int) -> int:
    return 2 * dim * HIDDEN + HIDDEN + HIDDEN * 4 + 4


def pooled_query_attention(q: Tensor, Z: Tensor, temperature_scaled: bool = False) -> Tensor:
    """h = softmax(layer_norm(q) Z^T) Z with no learned projections.

    ``q`` is (..., 1, D) and ``Z`` is (..., L, D). The printed formula carries
    no 1/sqrt(D) temperature; ``temperature_scaled`` adds one for comparison.
    """
    if q.shape[-1] != Z.shape[-1]:
        raise ad.ShapeError(f"query dim {q.shape} does not match tokens {Z.shape}")
    logits = ad.matmul(ad.layer_norm(q, eps=LN_EPS), _transpose_last(Z))
    if temperature_scaled:
        logits = ad.scale(logits, 1.0 / np.sqrt(q.shape[-1]))
    return ad.matmul(ad.softmax_rows(logits), Z)


def _transpose_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return ad.transpose(x, axes)


def predict(ref: TokenBundle, tgt: TokenBundle, params: dict, temperature_scaled: bool = False) -> SpPrediction:
    """Regress relative position and scale of the target view.

    The reference class token queries both views' patch tokens; the pooled
    features are concatenated (reference first) and passed through the MLP.
    """
    h_r = pooled_query_attention(ref.z, ref.Z, temperature_scaled)
    h_t = pooled_query_attention(ref.z, tgt.Z, temperature_scaled)
    return predict_from_pooled(ad.concat_last([h_r, h_t]), params)


def predict_from_pooled(h: Tensor, params: dict) -> SpPrediction:
    """Run only the regressor MLP on precomputed pooled features (..., 2D).

    The pooled attention is parameter-free, so frozen-backbone evaluation
    precomputes ``h`` once and trains just this MLP.
    """
    h = ad.relu(ad.linear(h, params["sp.fc1.w"], params["sp.fc1.b"]))
    out = ad.linear(h, params["sp.fc2.w"], params["sp.fc2.b"])
    p_hat = ad.slice_axis(out, out.ndim - 1, 0, 2)
    s_hat = ad.slice_axis(out, out.ndim - 1, 2, 4)
    return SpPrediction(p_hat=p_hat, s_hat=s_hat)


def sp_loss(pred: SpPrediction, target, lambda_p: float = 0.1, lambda_s: float = 0.1) -> Tensor:
    """lambda_p * ||p_hat - p||^2 + lambda_s * ||s_hat - s||^2, batch-averaged.

    ``target`` is a SpatialTarget or an array (..., 4) of (p_x, p_y, s_x, s_y).
    """
    if lambda_p < 0 or lambda_s < 0:
        raise ValueError("loss weights must be non-negative")
    if isinstance(target, SpatialTarget):
        tgt = target.as_array()
    else:
        tgt = np.asarray(target)  # float32 stays float32 to keep training fast
    tgt = tgt.reshape(pred.p_hat.shape[:-1] + (4,))
    p_tgt = Tensor(np.ascontiguousarray(tgt[..., 0:2]))
    s_tgt = Tensor(np.ascontiguousarray(tgt[..., 2:4]))
    dp = pred.p_hat - p_tgt
    ds = pred.s_hat - s_tgt
    per_pair = ad.reduce_sum(ad.scale(dp * dp, lambda_p) + ad.scale(ds * ds, lambda_s), axis=-1)
    if per_pair.ndim == 0:
        return per_pair
    return ad.reduce_mean(ad.reshape(per_pair, (-1,)), axis=0)
