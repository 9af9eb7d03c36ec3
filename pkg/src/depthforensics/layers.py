"""Small building blocks shared by the transformer and attention modules."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, gelu, linear, matmul, reshape, softmax, swapaxes, transpose
from .params import Scope, glorot


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True) -> dict[str, np.ndarray]:
    out = {"weight": glorot(rng, (fan_in, fan_out), fan_in, fan_out)}
    if bias:
        out["bias"] = np.zeros(fan_out)
    return out


def init_conv(rng: np.random.Generator, c_out: int, c_in: int, kernel: tuple[int, ...], bias: bool = True) -> dict[str, np.ndarray]:
    k = int(np.prod(kernel))
    out = {"weight": glorot(rng, (c_out, c_in) + tuple(kernel), c_in * k, c_out * k)}
    if bias:
        out["bias"] = np.zeros(c_out)
    return out


def add_group(store: dict[str, np.ndarray], prefix: str, group: dict[str, np.ndarray]) -> None:
    for k, v in group.items():
        store[f"{prefix}.{k}"] = v


def init_mlp(rng: np.random.Generator, width: int, expansion: int) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    add_group(store, "fc1", init_linear(rng, width, width * expansion))
    add_group(store, "fc2", init_linear(rng, width * expansion, width))
    return store


def mlp(x: Tensor, p: Scope) -> Tensor:
    h = gelu(linear(x, p["fc1.weight"], p["fc1.bias"]))
    return linear(h, p["fc2.weight"], p["fc2.bias"])


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., T, heads*dh] -> [..., heads, T, dh]."""
    *lead, t, width = x.shape
    x = reshape(x, tuple(lead) + (t, heads, width // heads))
    return swapaxes(x, -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, T, dh] -> [..., T, heads*dh]."""
    x = swapaxes(x, -3, -2)
    *lead, t, heads, dh = x.shape
    return reshape(x, tuple(lead) + (t, heads * dh))


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the second-to-last axis.

    Returns the aggregated values and the row-normalised weights.
    """
    scores = matmul(q, swapaxes(k, -1, -2)) * scale
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def tokens_from_map(x: Tensor) -> Tensor:
    """[N, C, H, W] feature map -> [N, H*W, C] row-major tokens."""
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def map_from_tokens(x: Tensor, h: int, w: int) -> Tensor:
    n, t, c = x.shape
    return reshape(transpose(x, (0, 2, 1)), (n, c, h, w))
