"""Face Depth Map Transformer: per-patch depth regression with a ViT encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, add, as_tensor, layer_norm, linear, reshape, sigmoid, transpose, upsample_nearest
from .layers import add_group, attention, init_linear, init_mlp, merge_heads, mlp, split_heads
from .params import ConfigurationError, Scope


@dataclass(frozen=True)
class FDMTConfig:
    grid: tuple[int, int] = (14, 14)
    embed_dim: int = 128
    depth: int = 12  # number of transformer blocks
    heads: int = 8
    mlp_ratio: int = 4
    image_size: tuple[int, int] = (224, 224)

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigurationError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigurationError("FDMT needs at least one block")
        h, w = self.image_size
        if h % self.grid[0] or w % self.grid[1]:
            raise ConfigurationError(f"image {self.image_size} not divisible by patch grid {self.grid}")

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def patch_dim(self) -> int:
        return 3 * (self.image_size[0] // self.grid[0]) * (self.image_size[1] // self.grid[1])


@dataclass
class FDMTOutput:
    depth_pred: Tensor  # [N, P] in [0, 1]
    depth_feature: Tensor  # [N, P, E]
    attention: list[Tensor]


def patchify(frames, grid: tuple[int, int]) -> Tensor:
    """Split [N, 3, H, W] (or [3, H, W]) frames into row-major patch vectors.

    Each patch is flattened channel-major: all of channel 0, then 1, then 2.
    """
    x = as_tensor(frames)
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    n, c, h, w = x.shape
    rows, cols = grid
    if h % rows or w % cols:
        raise DimensionError(f"frame {h}x{w} not divisible by patch grid {rows}x{cols}")
    ph, pw = h // rows, w // cols
    x = reshape(x, (n, c, rows, ph, cols, pw))
    x = transpose(x, (0, 2, 4, 1, 3, 5))
    out = reshape(x, (n, rows * cols, c * ph * pw))
    return reshape(out, out.shape[1:]) if single else out


def unpatchify(patches, grid: tuple[int, int], channels: int = 3) -> Tensor:
    x = as_tensor(patches)
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    n, p, d = x.shape
    rows, cols = grid
    if p != rows * cols:
        raise DimensionError(f"{p} patches do not fill a {rows}x{cols} grid")
    side = d // channels
    ph = int(round(np.sqrt(side)))
    if ph * ph * channels != d:
        raise DimensionError(f"patch length {d} is not channels x square patch")
    x = reshape(x, (n, rows, cols, channels, ph, ph))
    x = transpose(x, (0, 3, 1, 4, 2, 5))
    out = reshape(x, (n, channels, rows * ph, cols * ph))
    return reshape(out, out.shape[1:]) if single else out


def init_fdmt(cfg: FDMTConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    e = cfg.embed_dim
    store: dict[str, np.ndarray] = {}
    add_group(store, "embed", init_linear(rng, cfg.patch_dim, e))
    store["pos"] = rng.normal(0.0, 0.02, size=(cfg.num_patches, e))
    for b in range(cfg.depth):
        pre = f"blocks.{b}"
        store[f"{pre}.norm1.gain"] = np.ones(e)
        store[f"{pre}.norm1.bias"] = np.zeros(e)
        add_group(store, f"{pre}.qkv", init_linear(rng, e, 3 * e))
        add_group(store, f"{pre}.proj", init_linear(rng, e, e))
        store[f"{pre}.norm2.gain"] = np.ones(e)
        store[f"{pre}.norm2.bias"] = np.zeros(e)
        add_group(store, f"{pre}.mlp", init_mlp(rng, e, cfg.mlp_ratio))
    add_group(store, "head", init_linear(rng, e, 1))
    return store


def transformer_block(x: Tensor, p: Scope, heads: int) -> tuple[Tensor, Tensor]:
    """Pre-norm block: attention residual, then MLP residual."""
    e = x.shape[-1]
    h = layer_norm(x, p["norm1.gain"], p["norm1.bias"])
    qkv = linear(h, p["qkv.weight"], p["qkv.bias"])
    q, k, v = qkv[..., :e], qkv[..., e : 2 * e], qkv[..., 2 * e :]
    dh = e // heads
    out, weights = attention(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads), 1.0 / np.sqrt(dh))
    x = x + linear(merge_heads(out), p["proj.weight"], p["proj.bias"])
    x = x + mlp(layer_norm(x, p["norm2.gain"], p["norm2.bias"]), p.scope("mlp"))
    return x, weights


def fdmt_forward(frames, p: Scope, cfg: FDMTConfig) -> FDMTOutput:
    """Predict per-patch depth for [N, 3, H, W] frames scaled to roughly [-0.5, 0.5]."""
    x = as_tensor(frames)
    if x.ndim == 3:
        x = reshape(x, (1,) + x.shape)
    if tuple(x.shape[-2:]) != tuple(cfg.image_size) or x.shape[1] != 3:
        raise DimensionError(f"FDMT expects [N, 3, {cfg.image_size[0]}, {cfg.image_size[1]}] frames, got {x.shape}")
    if p["embed.weight"].shape != (cfg.patch_dim, cfg.embed_dim):
        raise ConfigurationError(
            f"FDMT embedding {p['embed.weight'].shape} does not match config ({cfg.patch_dim}, {cfg.embed_dim})"
        )
    tokens = linear(patchify(x, cfg.grid), p["embed.weight"], p["embed.bias"])
    tokens = add(tokens, p["pos"])
    maps = []
    for b in range(cfg.depth):
        tokens, weights = transformer_block(tokens, p.scope(f"blocks.{b}"), cfg.heads)
        maps.append(weights)
    logits = linear(tokens, p["head.weight"], p["head.bias"])
    depth = sigmoid(reshape(logits, logits.shape[:-1]))
    return FDMTOutput(depth_pred=depth, depth_feature=tokens, attention=maps)


def depth_feature_to_grid(feature, grid: tuple[int, int], size: tuple[int, int] | None = None) -> Tensor:
    """[N, P, C] (or [P, C]) tokens -> [N, C, rows, cols] map, resampled to ``size``."""
    x = as_tensor(feature)
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    n, p, c = x.shape
    rows, cols = grid
    if p != rows * cols:
        raise DimensionError(f"{p} tokens do not fill a {rows}x{cols} grid")
    out = reshape(transpose(x, (0, 2, 1)), (n, c, rows, cols))
    if size is not None and tuple(size) != (rows, cols):
        out = upsample_nearest(out, tuple(size))
    return reshape(out, out.shape[1:]) if single else out
