"""Minimal dense-tensor math with reverse-mode autodiff and Adam."""

from .tensor import (
    Tensor,
    as_tensor,
    backward,
    check_finite,
    concat,
    exp,
    grad_enabled,
    log,
    matmul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    swapaxes,
    take,
    tanh,
    tmean,
    tsum,
)
from .nn import (
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    SigmoidMLP,
    TransformerBlock,
    scaled_dot_attention,
    uniform_init,
)
from .optim import Adam, AdamState, adam_step
from .checkpoint import load_params, restore_into, save_params

__all__ = [
    "Adam",
    "AdamState",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "MultiHeadAttention",
    "SigmoidMLP",
    "Tensor",
    "TransformerBlock",
    "adam_step",
    "as_tensor",
    "backward",
    "check_finite",
    "concat",
    "exp",
    "grad_enabled",
    "load_params",
    "log",
    "matmul",
    "no_grad",
    "power",
    "relu",
    "reshape",
    "restore_into",
    "save_params",
    "scaled_dot_attention",
    "sigmoid",
    "softmax",
    "stack",
    "swapaxes",
    "take",
    "tanh",
    "tmean",
    "tsum",
    "uniform_init",
]
