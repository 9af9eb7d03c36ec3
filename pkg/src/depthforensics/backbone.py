"""Small convolutional RGB backbone with a mid-network feature hook."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor, conv2d, layer_norm, linear, mean, relu, reshape, transpose
from .layers import add_group, init_conv, init_linear
from .params import ConfigurationError, Scope


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple[int, ...] = (8, 16, 16, 32, 32, 32)
    strides: tuple[int, ...] = (1, 2, 2, 1, 2, 1)
    hook: int = 3  # stages run before the feature is handed to the attention module
    image_size: tuple[int, int] = (56, 56)
    classes: int = 2

    def __post_init__(self):
        if len(self.widths) != len(self.strides):
            raise ConfigurationError("backbone widths and strides differ in length")
        if not 1 <= self.hook < len(self.widths):
            raise ConfigurationError(f"hook {self.hook} outside stages 1..{len(self.widths) - 1}")

    @property
    def hook_channels(self) -> int:
        return self.widths[self.hook - 1]

    @property
    def hook_stride(self) -> int:
        return int(np.prod(self.strides[: self.hook]))

    @property
    def hook_size(self) -> tuple[int, int]:
        h, w = self.image_size
        for s in self.strides[: self.hook]:
            h, w = (h - 1) // s + 1, (w - 1) // s + 1
        return h, w


@dataclass
class BackboneFeatures:
    rgb_feature: Tensor  # [N, C, h, w] at the hook
    logits: Tensor | None = None


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    c_in = 3
    for i, c in enumerate(cfg.widths):
        add_group(store, f"stages.{i}.conv", init_conv(rng, c, c_in, (3, 3)))
        store[f"stages.{i}.norm.gain"] = np.ones(c)
        store[f"stages.{i}.norm.bias"] = np.zeros(c)
        c_in = c
    add_group(store, "fc", init_linear(rng, c_in, cfg.classes))
    return store


def _stage(x: Tensor, p: Scope, stride: int) -> Tensor:
    x = conv2d(x, p["conv.weight"], p["conv.bias"], stride=stride, padding=1)
    # channel layer norm per pixel
    x = transpose(x, (0, 2, 3, 1))
    x = layer_norm(x, p["norm.gain"], p["norm.bias"])
    return relu(transpose(x, (0, 3, 1, 2)))


def backbone_stem(frames, p: Scope, cfg: BackboneConfig) -> Tensor:
    x = as_tensor(frames)
    if x.ndim == 3:
        x = reshape(x, (1,) + x.shape)
    if tuple(x.shape[1:]) != (3,) + tuple(cfg.image_size):
        raise DimensionError(f"backbone expects [N, 3, {cfg.image_size[0]}, {cfg.image_size[1]}], got {x.shape}")
    for i in range(cfg.hook):
        x = _stage(x, p.scope(f"stages.{i}"), cfg.strides[i])
    return x


def backbone_head(feature, p: Scope, cfg: BackboneConfig) -> Tensor:
    """Remaining stages, global average pool and the 2-way linear classifier."""
    x = as_tensor(feature)
    expected = (cfg.hook_channels,) + cfg.hook_size
    if tuple(x.shape[1:]) != expected:
        raise DimensionError(f"backbone head expects [N, {expected}], got {x.shape}")
    for i in range(cfg.hook, len(cfg.widths)):
        x = _stage(x, p.scope(f"stages.{i}"), cfg.strides[i])
    pooled = mean(x, axis=(2, 3))
    return linear(pooled, p["fc.weight"], p["fc.bias"])


def backbone_forward(frames, p: Scope, cfg: BackboneConfig) -> BackboneFeatures:
    feat = backbone_stem(frames, p, cfg)
    return BackboneFeatures(rgb_feature=feat, logits=backbone_head(feat, p, cfg))
