"""End-to-end detector: depth transformer, backbone, depth attention, RDIA and heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, reshape, softmax, transpose, upsample_nearest
from .backbone import backbone_head, backbone_stem, init_backbone
from .config import RunConfig
from .fdmt import depth_feature_to_grid, fdmt_forward, init_fdmt
from .losses import cross_entropy, patch_mse, ssim_loss
from .mda import concat_fusion_baseline, init_concat_fusion, init_mda, mda_forward
from .params import Params, component_rng
from .rdia import classify_sequence, init_classifier, init_rdia, rdia_forward, rgb_strides


def parameter_groups(mode: str) -> tuple[str, ...]:
    """Parameter groups each mode builds; shared groups initialise identically across modes."""
    groups = ["fdmt", "backbone"]
    groups.append({"concat-fusion": "fusion", "msa-only": "msa"}.get(mode, "mda"))
    if mode != "image":
        if mode != "3dcnn-only":
            groups.append("rdia")
        groups.append("cls3d")
    return tuple(groups)


def init_params(cfg: RunConfig, seed: int | None = None, dtype=np.float32) -> Params:
    seed = cfg.seed if seed is None else seed
    params = Params(dtype)
    c = cfg.backbone.hook_channels
    builders = {
        "fdmt": lambda rng: init_fdmt(cfg.fdmt, rng),
        "backbone": lambda rng: init_backbone(cfg.backbone, rng),
        "mda": lambda rng: init_mda(cfg.mda, c, cfg.fdmt_embed, rng),
        "msa": lambda rng: init_mda(cfg.mda, c, c, rng),
        "fusion": lambda rng: init_concat_fusion(c, cfg.fdmt_embed, rng),
        "rdia": lambda rng: init_rdia(cfg.rdia, c, rng),
        "cls3d": lambda rng: {k.removeprefix("cls."): v for k, v in init_classifier(cfg.rdia, c, rng).items()},
    }
    for group in parameter_groups(cfg.mode):
        for name, arr in builders[group](component_rng(seed, group)).items():
            params[f"{group}.{name}"] = arr
    return params


@dataclass
class ForwardOutput:
    logits: Tensor  # [B, 2] (video) or [B*n, 2] (image)
    scores: np.ndarray  # [B] probability of "fake"
    depth_pred: Tensor  # [B*n, P]
    enhanced: Tensor  # per-frame enhanced features [B*n, C, h, w]


@dataclass
class LossTerms:
    l_c: Tensor
    l_ssim: Tensor
    l_pmse: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_c", "l_ssim", "l_pmse", "total")}


def prepare_frames(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """8-bit [B, n, 3, H, W] frames -> centred floats in [-0.5, 0.5]."""
    dtype = np.dtype(dtype).type
    return (np.asarray(frames, dtype=dtype) / dtype(255.0)) - dtype(0.5)


def forward(params: Params, cfg: RunConfig, frames: np.ndarray) -> ForwardOutput:
    """Run the detector on a batch of [B, n, 3, H, W] 8-bit frame stacks."""
    x = prepare_frames(frames, params.dtype)
    b, n = x.shape[:2]
    flat = Tensor(x.reshape((b * n,) + x.shape[2:]))
    fd = fdmt_forward(flat, params.scope("fdmt"), cfg.fdmt)
    bb = cfg.backbone
    rgb = backbone_stem(flat, params.scope("backbone"), bb)
    h, w = bb.hook_size
    depth_grid = depth_feature_to_grid(fd.depth_feature, cfg.fdmt.grid, (h, w))
    if cfg.mode == "concat-fusion":
        enhanced = concat_fusion_baseline(depth_grid, rgb, params.scope("fusion"))
    elif cfg.mode == "msa-only":
        enhanced = mda_forward(rgb, rgb, params.scope("msa"), cfg.mda).enhanced
    else:
        enhanced = mda_forward(depth_grid, rgb, params.scope("mda"), cfg.mda).enhanced

    if cfg.mode == "image":
        logits = backbone_head(enhanced, params.scope("backbone"), bb)
        probs = softmax(logits, axis=-1).data[:, 1].reshape(b, n)
        return ForwardOutput(logits, probs.mean(axis=1), fd.depth_pred, enhanced)

    c = enhanced.shape[1]
    stack = transpose(reshape(enhanced, (b, n, c, h, w)), (0, 2, 1, 3, 4))
    if cfg.mode != "3dcnn-only":
        rows, cols = cfg.fdmt.grid
        dmap = upsample_nearest(reshape(fd.depth_pred, (b * n, 1, rows, cols)), (h, w))
        dmap = transpose(reshape(dmap, (b, n, 1, h, w)), (0, 2, 1, 3, 4))
        rgb_stack = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1, 3, 4)))
        strides = rgb_strides((cfg.image_size, cfg.image_size), (h, w))
        stack = rdia_forward(rgb_stack, dmap, stack, params.scope("rdia"), strides).enhanced
    logits = classify_sequence(stack, params.scope("cls3d"))
    probs = softmax(logits, axis=-1).data[:, 1]
    return ForwardOutput(logits, probs.copy(), fd.depth_pred, enhanced)


def losses(out: ForwardOutput, cfg: RunConfig, labels: np.ndarray, targets: np.ndarray) -> LossTerms:
    """Classification loss plus depth SSIM and patch MSE against [B, n, P] targets."""
    labels = np.asarray(labels, dtype=np.int64)
    b, n = targets.shape[:2]
    frame_labels = np.repeat(labels, n) if cfg.mode == "image" else labels
    l_c = cross_entropy(out.logits, frame_labels)
    tgt = Tensor(np.asarray(targets, dtype=out.depth_pred.dtype).reshape(b * n, -1))
    l_ssim = ssim_loss(out.depth_pred, tgt)
    l_pmse = patch_mse(out.depth_pred, tgt, reduction=cfg.pmse_reduction)
    total = l_c + cfg.alpha * l_ssim + cfg.beta * l_pmse
    return LossTerms(l_c, l_ssim, l_pmse, total)

