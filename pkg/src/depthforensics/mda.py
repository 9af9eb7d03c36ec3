"""Multi-head depth attention.

Depth tokens act as queries and RGB tokens as keys and values, one set of
projections per head. The concatenated heads go through an output matrix
and are fused back into the RGB feature through an MLP residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor, concat, conv2d, matmul, reshape
from .layers import add_group, attention, init_conv, init_mlp, map_from_tokens, merge_heads, mlp, tokens_from_map
from .params import ConfigurationError, Scope, glorot


@dataclass(frozen=True)
class MDAConfig:
    heads: int = 8
    head_dim: int = 8
    mlp_ratio: int = 4
    scale: str = "channels"  # "channels": sqrt(C_rgb); "head": sqrt(head_dim)

    def __post_init__(self):
        if self.scale not in ("channels", "head"):
            raise ConfigurationError(f"unknown attention scale {self.scale!r}")


@dataclass
class MDAOutput:
    enhanced: Tensor  # same shape as the RGB feature
    attention: Tensor  # [N, heads, T, T]


def init_mda(cfg: MDAConfig, rgb_channels: int, query_channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """``query_channels`` is the depth feature width (or the RGB width for self-attention)."""
    l, dh, c = cfg.heads, cfg.head_dim, rgb_channels
    store = {
        "w_query": glorot(rng, (l, query_channels, dh), query_channels, dh),
        "w_key": glorot(rng, (l, c, dh), c, dh),
        "w_value": glorot(rng, (l, c, dh), c, dh),
        "w_out": glorot(rng, (l * dh, c), l * dh, c),
    }
    add_group(store, "mlp", init_mlp(rng, c, cfg.mlp_ratio))
    return store


def _check_spatial(depth_grid: Tensor, rgb: Tensor) -> None:
    if depth_grid.ndim != 4 or rgb.ndim != 4 or depth_grid.shape[0] != rgb.shape[0] or depth_grid.shape[2:] != rgb.shape[2:]:
        raise DimensionError(f"depth feature {depth_grid.shape} and RGB feature {rgb.shape} must share batch and spatial size")


def _batched(x) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    return x, False


def _scale(cfg_scale: str, rgb_channels: int, head_dim: int) -> float:
    return 1.0 / np.sqrt(rgb_channels if cfg_scale == "channels" else head_dim)


def depth_attention_head(depth_grid, rgb, w_query: Tensor, w_key: Tensor, w_value: Tensor, scale: str = "channels") -> tuple[Tensor, Tensor]:
    """One head: depth-query / RGB-key similarity, softmax, value aggregation.

    Inputs are [C, h, w] or [N, C, h, w] maps; returns the head output as a
    [N, head_dim, h, w] map (unbatched input gives [head_dim, h, w]) and the
    [N, T, T] attention matrix.
    """
    d, single = _batched(depth_grid)
    r, _ = _batched(rgb)
    _check_spatial(d, r)
    h, w = r.shape[2:]
    q = matmul(tokens_from_map(d), w_query)
    k = matmul(tokens_from_map(r), w_key)
    v = matmul(tokens_from_map(r), w_value)
    out, weights = attention(q, k, v, _scale(scale, r.shape[1], w_query.shape[-1]))
    out = map_from_tokens(out, h, w)
    if single:
        return reshape(out, out.shape[1:]), reshape(weights, weights.shape[1:])
    return out, weights


def multihead(query_grid, rgb, p: Scope, cfg: MDAConfig) -> tuple[Tensor, Tensor]:
    """Concatenated heads times the output matrix, as [N, T, C] tokens, plus attention."""
    qg, _ = _batched(query_grid)
    r, _ = _batched(rgb)
    _check_spatial(qg, r)
    n, c = r.shape[:2]
    wq, wk, wv, wo = p["w_query"], p["w_key"], p["w_value"], p["w_out"]
    if wq.shape[0] != cfg.heads or wq.shape[2] != cfg.head_dim or wq.shape[1] != qg.shape[1]:
        raise ConfigurationError(f"query projection {wq.shape} inconsistent with {cfg.heads} heads x {cfg.head_dim} and input width {qg.shape[1]}")
    if wo.shape != (cfg.heads * cfg.head_dim, c):
        raise ConfigurationError(f"output matrix {wo.shape} != ({cfg.heads * cfg.head_dim}, {c})")
    rgb_tok = tokens_from_map(r)  # [N, T, C]
    q_tok = tokens_from_map(qg)
    # [N, 1, T, C] @ [heads, C, dh] -> [N, heads, T, dh]
    q = matmul(reshape(q_tok, (n, 1) + q_tok.shape[1:]), wq)
    k = matmul(reshape(rgb_tok, (n, 1) + rgb_tok.shape[1:]), wk)
    v = matmul(reshape(rgb_tok, (n, 1) + rgb_tok.shape[1:]), wv)
    heads_out, weights = attention(q, k, v, _scale(cfg.scale, c, cfg.head_dim))
    return matmul(merge_heads(heads_out), wo), weights


def mda_forward(query_grid, rgb, p: Scope, cfg: MDAConfig) -> MDAOutput:
    """Enhance ``rgb`` [N, C, h, w] with attention driven by ``query_grid``.

    ``query_grid`` is the gridded depth feature; passing the RGB feature
    itself turns the module into plain multi-head self-attention.
    """
    r, single = _batched(rgb)
    h, w = r.shape[2:]
    multi, weights = multihead(query_grid, r, p, cfg)
    rgb_tok = tokens_from_map(r)
    enhanced = rgb_tok + mlp(multi + rgb_tok, p.scope("mlp"))
    out = map_from_tokens(enhanced, h, w)
    if single:
        out = reshape(out, out.shape[1:])
    return MDAOutput(enhanced=out, attention=weights)


def init_concat_fusion(rgb_channels: int, depth_channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return init_conv(rng, rgb_channels, rgb_channels + depth_channels, (1, 1))


def concat_fusion_baseline(depth_grid, rgb, p: Scope) -> Tensor:
    """Channel-concatenate [RGB; depth] and project back with a 1x1 convolution."""
    d, single = _batched(depth_grid)
    r, _ = _batched(rgb)
    _check_spatial(d, r)
    out = conv2d(concat([r, d], axis=1), p["weight"], p["bias"])
    return reshape(out, out.shape[1:]) if single else out
