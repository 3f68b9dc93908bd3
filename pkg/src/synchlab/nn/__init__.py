"""Numeric core: autodiff tensors, transformer blocks, Adam, gradient checks."""

from .gradcheck import finite_diff_check
from .module import (EncoderBlock, FeedForward, LayerNorm, Linear, Module,
                     MultiHeadAttention, PositionalEncoding, TransformerEncoder,
                     parameter, trunc_normal)
from .optim import Adam, AdamState, adam_update
from .tensor import (Tensor, add, as_tensor, bce_with_logits, broadcast_to, concat,
                     cross_entropy, default_dtype, exp, gather_flat, gelu, grad_enabled,
                     l2_normalize, layer_norm, log, matmul, mean, mul, no_grad, reshape,
                     set_default_dtype, sigmoid, softmax_lastdim, sum_, tanh, transpose,
                     use_dtype)

__all__ = [
    "Tensor", "add", "as_tensor", "bce_with_logits", "broadcast_to", "concat",
    "cross_entropy", "default_dtype", "exp", "gather_flat", "gelu", "grad_enabled",
    "l2_normalize", "layer_norm", "log", "matmul", "mean", "mul", "no_grad", "reshape",
    "set_default_dtype", "sigmoid", "softmax_lastdim", "sum_", "tanh", "transpose",
    "use_dtype",
    "Module", "Linear", "LayerNorm", "MultiHeadAttention", "FeedForward", "EncoderBlock",
    "TransformerEncoder", "PositionalEncoding", "parameter", "trunc_normal",
    "Adam", "AdamState", "adam_update", "finite_diff_check",
]
