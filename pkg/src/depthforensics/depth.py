"""Ground-truth depth construction and patch-level supervision targets.

Raw depth maps hold integers in [0, 255] (0 = background, larger = closer).
The ground truth sends manipulated pixels to 0, background to ``offset``
and real-face pixels into ``(offset, 255]``.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DimensionError

DEFAULT_OFFSET = 50
DEFAULT_THRESHOLD = 15


def _as_hwc(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        return img[..., None]
    if img.ndim == 3 and img.shape[0] in (1, 3) and img.shape[-1] not in (1, 3):
        return np.moveaxis(img, 0, -1)
    return img


def compute_fake_mask(frame: np.ndarray, original: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Binary mask of pixels whose largest per-channel change exceeds ``threshold``.

    Accepts [H, W], [H, W, C] or [C, H, W] images in [0, 255].
    """
    a, b = _as_hwc(frame), _as_hwc(original)
    if a.shape != b.shape:
        raise DimensionError(f"frame {np.shape(frame)} and original {np.shape(original)} differ in size")
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64)).max(axis=-1)
    return (diff > threshold).astype(np.uint8)


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    """Round an analytic depth surface to 8-bit integer levels."""
    return np.clip(np.rint(depth), 0, 255).astype(np.float64)


def ground_truth_depth(depth: np.ndarray, mask: np.ndarray, offset: int = DEFAULT_OFFSET) -> np.ndarray:
    """Offset-and-clamp the raw depth, zeroing the manipulated region."""
    d = np.asarray(depth, dtype=np.float64)
    m = np.asarray(mask)
    if d.shape != m.shape:
        raise DimensionError(f"depth {d.shape} and mask {m.shape} differ in size")
    return np.where(m != 0, 0.0, np.minimum(d + offset, 255.0))


def patch_average(g: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Mean of each grid cell, row-major, divided by 255.

    ``g`` may carry leading batch axes; the last two are (H, W).
    """
    g = np.asarray(g, dtype=np.float64)
    rows, cols = grid
    h, w = g.shape[-2:]
    if h % rows or w % cols:
        raise DimensionError(
            f"map of size {h}x{w} is not divisible by the {rows}x{cols} patch grid; resize it first"
        )
    ph, pw = h // rows, w // cols
    blocks = g.reshape(g.shape[:-2] + (rows, ph, cols, pw))
    means = blocks.mean(axis=(-3, -1))
    return means.reshape(g.shape[:-2] + (rows * cols,)) / 255.0


def patch_targets(depth: np.ndarray, mask: np.ndarray, grid: tuple[int, int], offset: int = DEFAULT_OFFSET) -> np.ndarray:
    """Raw depth + mask straight to normalised per-patch targets."""
    return patch_average(ground_truth_depth(depth, mask, offset), grid)
