"""Minimal reverse-mode differentiable math engine (float64, numpy-backed)."""

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .nn import (
    BCE_EPS,
    Params,
    bce_with_logits,
    binary_cross_entropy,
    encoder,
    gru_cell,
    gumbel_sigmoid,
    init_attention,
    init_encoder,
    init_gru,
    init_layer_norm,
    init_linear,
    linear,
    multi_head_attention,
)
from .optim import AdamW, clip_grad_norm
from .rng import Rng
from .tensor import Tensor, as_tensor, is_grad_enabled, no_grad, parameter

__all__ = [
    "AdamW", "BCE_EPS", "Params", "Rng", "Tensor", "as_tensor", "bce_with_logits",
    "binary_cross_entropy", "check_gradients", "clip_grad_norm", "encoder", "gru_cell",
    "gumbel_sigmoid", "init_attention", "init_encoder", "init_gru", "init_layer_norm",
    "init_linear", "is_grad_enabled", "linear", "multi_head_attention", "no_grad",
    "numeric_grad", "ops", "parameter", "relative_error",
]
