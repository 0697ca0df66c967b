"""Desk-scale self-supervised learning toolkit with a spatial-prediction pretext task."""

from spssl.autodiff import Tensor, backward, grad_check, no_grad
from spssl.geometry import (
    Box,
    SamplerConstraints,
    SpatialTarget,
    ViewPairGeometry,
    dice_overlap,
    relative_target,
    sample_view_pair,
    validate_distribution,
)
from spssl.encoder import EncoderConfig, TokenBundle, encode, init_encoder_params
from spssl.sp_head import init_sp_head_params, pooled_query_attention, predict, sp_loss

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "Box",
    "SamplerConstraints",
    "SpatialTarget",
    "ViewPairGeometry",
    "dice_overlap",
    "relative_target",
    "sample_view_pair",
    "validate_distribution",
    "EncoderConfig",
    "TokenBundle",
    "encode",
    "init_encoder_params",
    "init_sp_head_params",
    "pooled_query_attention",
    "predict",
    "sp_loss",
]

__version__ = "0.1.0"
