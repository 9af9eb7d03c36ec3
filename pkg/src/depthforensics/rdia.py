"""RGB-depth inconsistency attention over a stack of per-frame features.

Inter-frame residuals in RGB and depth space each go through a small
per-frame conv stack and a spatial/temporal residual attention. The two
attentions are correlated token by token to produce one attention map that
modulates the frame features before a 3D convolutional classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    as_tensor,
    avg_pool,
    concat,
    conv2d,
    conv3d,
    linear,
    mean,
    relu,
    reshape,
    softmax,
    sum_,
    transpose,
)
from .layers import add_group, init_conv, init_linear
from .params import ConfigurationError, Scope


@dataclass(frozen=True)
class RDIAConfig:
    chi_widths: tuple[int, int] = (8, 16)  # first two preprocessing layers; the third matches the feature width
    attn_hidden: int = 16
    corr_dim: int = 16  # output width of the two 1x1x1 correlation projections
    classifier_widths: tuple[int, int] = (32, 32)
    classes: int = 2


@dataclass
class ResidualAttention:
    attention: Tensor  # same shape as the preprocessed residuals
    temporal_weights: Tensor  # softmax over time
    spatial_weights: Tensor  # softmax over (h, w)


@dataclass
class RDIAOutput:
    enhanced: Tensor  # [N, C, n, h, w]
    inconsistency: Tensor  # [N, 1, n, h, w], softmax over all n*h*w tokens
    rgb_attention: ResidualAttention
    depth_attention: ResidualAttention


def rgb_strides(frame_size: tuple[int, int], feature_size: tuple[int, int]) -> tuple[int, int, int]:
    """Strides for the three RGB preprocessing layers that land on ``feature_size``."""
    if frame_size[0] % feature_size[0] or frame_size[0] // feature_size[0] != frame_size[1] // feature_size[1]:
        raise ConfigurationError(f"frame {frame_size} is not an isotropic multiple of feature {feature_size}")
    factor = frame_size[0] // feature_size[0]
    table = {1: (1, 1, 1), 2: (2, 1, 1), 4: (2, 2, 1), 8: (2, 2, 2)}
    if factor not in table:
        raise ConfigurationError(f"RGB residual downsampling factor {factor} unsupported (1, 2, 4 or 8)")
    return table[factor]


def _init_chi(rng, c_in: int, widths: tuple[int, int], c_out: int) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    for i, (a, b) in enumerate(zip((c_in,) + widths, widths + (c_out,))):
        add_group(store, f"conv{i}", init_conv(rng, b, a, (3, 3)))
    return store


def _init_attention_branch(rng, c: int, hidden: int, kernel: tuple[int, int, int]) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    add_group(store, "conv0", init_conv(rng, hidden, c, kernel))
    add_group(store, "conv1", init_conv(rng, c, hidden, kernel))
    return store


def init_rdia(cfg: RDIAConfig, channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c = channels
    store: dict[str, np.ndarray] = {}
    add_group(store, "chi_rgb", _init_chi(rng, 3, cfg.chi_widths, c))
    add_group(store, "chi_depth", _init_chi(rng, 1, cfg.chi_widths, c))
    for space in ("rgb", "depth"):
        add_group(store, f"sa_{space}", _init_attention_branch(rng, c, cfg.attn_hidden, (1, 3, 3)))
        add_group(store, f"ta_{space}", _init_attention_branch(rng, c, cfg.attn_hidden, (3, 1, 1)))
    add_group(store, "phi", init_conv(rng, cfg.corr_dim, c, (1, 1, 1)))
    add_group(store, "psi", init_conv(rng, cfg.corr_dim, c, (1, 1, 1)))
    add_group(store, "upsilon", init_conv(rng, c, c, (1, 1, 1)))
    store.update(init_classifier(cfg, c, rng))
    return store


def init_classifier(cfg: RDIAConfig, channels: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    c1, c2 = cfg.classifier_widths
    add_group(store, "cls.conv0", init_conv(rng, c1, channels, (3, 3, 3)))
    add_group(store, "cls.conv1", init_conv(rng, c2, c1, (3, 3, 3)))
    add_group(store, "cls.fc", init_linear(rng, c2, cfg.classes))
    return store


def _batched5(x) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise DimensionError(f"expected a [N, C, n, h, w] stack, got {x.shape}")
    return x, False


def frame_residuals(seq) -> Tensor:
    """Consecutive differences along time: [.., C, n, h, w] -> [.., C, n-1, h, w]."""
    x = as_tensor(seq)
    t_axis = x.ndim - 3
    if x.shape[t_axis] < 2:
        raise DimensionError(f"need at least two frames, got {x.shape[t_axis]}")
    later = [slice(None)] * x.ndim
    earlier = [slice(None)] * x.ndim
    later[t_axis] = slice(1, None)
    earlier[t_axis] = slice(0, -1)
    return x[tuple(later)] - x[tuple(earlier)]


def residual_preprocess(residuals, p: Scope, strides: tuple[int, int, int] = (1, 1, 1)) -> Tensor:
    """Shared three-layer 2D conv stack applied to every temporal slice."""
    r, single = _batched5(residuals)
    n, c, t, h, w = r.shape
    x = reshape(transpose(r, (0, 2, 1, 3, 4)), (n * t, c, h, w))
    for i, s in enumerate(strides):
        x = relu(conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=s, padding=1))
    c2, h2, w2 = x.shape[1:]
    out = transpose(reshape(x, (n, t, c2, h2, w2)), (0, 2, 1, 3, 4))
    return reshape(out, out.shape[1:]) if single else out


def _branch(x: Tensor, p: Scope, padding: tuple[int, int, int]) -> Tensor:
    x = relu(conv3d(x, p["conv0.weight"], p["conv0.bias"], padding=padding))
    return conv3d(x, p["conv1.weight"], p["conv1.bias"], padding=padding)


def residual_attention(rf, sa: Scope, ta: Scope) -> ResidualAttention:
    """``rf * softmax_space(SA(rf) * softmax_time(TA(rf)))``."""
    x, single = _batched5(rf)
    n, c, t, h, w = x.shape
    temporal = softmax(_branch(x, ta, (1, 0, 0)), axis=2)
    spatial_logits = _branch(x, sa, (0, 1, 1)) * temporal
    spatial = reshape(softmax(reshape(spatial_logits, (n, c, t, h * w)), axis=-1), (n, c, t, h, w))
    att = x * spatial
    if single:
        return ResidualAttention(reshape(att, att.shape[1:]), reshape(temporal, temporal.shape[1:]), reshape(spatial, spatial.shape[1:]))
    return ResidualAttention(att, temporal, spatial)


def _align(att: Tensor, frames: int) -> Tensor:
    """Prepend a unit slice so residual slice i modulates frame i+1."""
    n, c, t, h, w = att.shape
    if t != frames - 1:
        raise DimensionError(f"attention has {t} slices for {frames} frames")
    ones = Tensor(np.ones((n, c, 1, h, w), dtype=att.dtype))
    return concat([ones, att], axis=2)


def rgb_depth_inconsistency(att_rgb, att_depth, features, phi: Scope, psi: Scope) -> Tensor:
    """Token-wise correlation of the two modulated stacks, softmaxed over all tokens."""
    a_rgb, single = _batched5(att_rgb)
    a_d, _ = _batched5(att_depth)
    f, _ = _batched5(features)
    n, c, t, h, w = f.shape
    if a_rgb.shape[:2] != (n, c) or a_rgb.shape[3:] != (h, w) or a_d.shape != a_rgb.shape:
        raise DimensionError(f"attention stacks {a_rgb.shape}/{a_d.shape} do not align with features {f.shape}")
    left = conv3d(_align(a_rgb, t) * f, phi["weight"], phi["bias"])
    right = conv3d(_align(a_d, t) * f, psi["weight"], psi["bias"])
    scores = sum_(left * right, axis=1)  # [N, n, h, w]
    weights = reshape(softmax(reshape(scores, (n, t * h * w)), axis=-1), (n, 1, t, h, w))
    return reshape(weights, weights.shape[1:]) if single else weights


def rdia_enhance(att_rd, features, upsilon: Scope) -> Tensor:
    a, single = _batched5(att_rd)
    f, _ = _batched5(features)
    out = a * conv3d(f, upsilon["weight"], upsilon["bias"]) + f
    return reshape(out, out.shape[1:]) if single else out


def classify_sequence(features, p: Scope) -> Tensor:
    """Two (3x3x3 conv, ReLU, 2x spatial pool) stages, global pool, linear."""
    x, single = _batched5(features)
    for i in range(2):
        x = relu(conv3d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], padding=1))
        x = avg_pool(x, (1, 2, 2)) if min(x.shape[3:]) >= 2 else x
    logits = linear(mean(x, axis=(2, 3, 4)), p["fc.weight"], p["fc.bias"])
    return reshape(logits, logits.shape[1:]) if single else logits


def rdia_forward(rgb_frames, depth_maps, features, p: Scope, strides: tuple[int, int, int]) -> RDIAOutput:
    """Full enhancement for [N, 3, n, H, W] frames, [N, 1, n, h, w] depth and [N, C, n, h, w] features."""
    f, _ = _batched5(features)
    r_rgb = residual_preprocess(frame_residuals(rgb_frames), p.scope("chi_rgb"), strides)
    r_d = residual_preprocess(frame_residuals(depth_maps), p.scope("chi_depth"))
    if r_rgb.shape[3:] != f.shape[3:] or r_d.shape[3:] != f.shape[3:]:
        raise DimensionError(f"residual maps {r_rgb.shape}/{r_d.shape} do not match features {f.shape}")
    att_rgb = residual_attention(r_rgb, p.scope("sa_rgb"), p.scope("ta_rgb"))
    att_d = residual_attention(r_d, p.scope("sa_depth"), p.scope("ta_depth"))
    att_rd = rgb_depth_inconsistency(att_rgb.attention, att_d.attention, f, p.scope("phi"), p.scope("psi"))
    enhanced = rdia_enhance(att_rd, f, p.scope("upsilon"))
    return RDIAOutput(enhanced, att_rd, att_rgb, att_d)
