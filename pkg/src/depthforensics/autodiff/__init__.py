"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .gradcheck import gradcheck, numerical_grad
from .nn import avg_pool, conv2d, conv3d, conv_nd, gelu, layer_norm, linear, log_softmax, softmax, upsample_nearest
from .optim import AdamState, adam_step
from .tensor import (
    DEFAULT_DTYPE,
    DimensionError,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pad,
    power,
    relu,
    repeat_interleave,
    reshape,
    sigmoid,
    sqrt,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
    unbroadcast,
    var,
)

__all__ = [name for name in dir() if not name.startswith("_")]
