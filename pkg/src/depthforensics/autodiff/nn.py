"""Neural-network kernels built on :mod:`depthforensics.autodiff.tensor`."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

from .tensor import DimensionError, Tensor, add, as_tensor, matmul, mean, repeat_interleave, reshape

__all__ = [
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "linear",
    "conv2d",
    "conv3d",
    "conv_nd",
    "avg_pool",
    "upsample_nearest",
]


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; the shift keeps exp() finite for any input."""
    ax = axis % x.ndim
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = axis % x.ndim
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=ax, keepdims=True),)

    return Tensor._make(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise over ``axis``; ``gain``/``bias`` broadcast against that axis."""
    ax = axis % x.ndim
    n = x.shape[ax]
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gx = g
        return (
            inv / n * (n * gx - gx.sum(axis=ax, keepdims=True) - xhat * (gx * xhat).sum(axis=ax, keepdims=True)),
        )

    normed = Tensor._make(xhat.astype(x.dtype, copy=False), (x,), backward, "layer_norm")
    if gain is None and bias is None:
        return normed
    shape = [1] * x.ndim
    shape[ax] = n
    out = normed
    if gain is not None:
        out = out * reshape(gain, tuple(shape))
    if bias is not None:
        out = out + reshape(bias, tuple(shape))
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = (x.data * cdf).astype(x.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor._make(out, (x,), backward, "gelu")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as [in, out]."""
    out = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    if bias is not None:
        out = add(out, bias)
    return out


def conv_nd(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """N-d cross-correlation over the trailing spatial axes.

    ``x`` is [N, C_in, *S] (or unbatched [C_in, *S]); ``weight`` is
    [C_out, C_in, *K]. ``padding`` zero-pads symmetrically; pass
    ``"same"`` for odd kernels at stride 1.
    """
    x = as_tensor(x)
    nsp = weight.ndim - 2
    unbatched = x.ndim == nsp + 1
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != nsp + 2:
        raise DimensionError(f"conv: input {x.shape} does not match kernel {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv: input channels {x.shape[1]} != kernel channels {weight.shape[1]} (input {x.shape}, kernel {weight.shape})")
    ksize = weight.shape[2:]
    strides = _tuple(stride, nsp)
    if padding == "same":
        if any(k % 2 == 0 for k in ksize):
            raise DimensionError(f"'same' padding needs odd kernel sizes, got {ksize}")
        pads = tuple(k // 2 for k in ksize)
    else:
        pads = _tuple(padding, nsp)
    spatial = x.shape[2:]
    padded = tuple(s + 2 * p for s, p in zip(spatial, pads))
    if any(k > s for k, s in zip(ksize, padded)):
        raise DimensionError(f"conv: kernel {ksize} larger than padded input {padded}")
    out_sp = tuple((s - k) // st + 1 for s, k, st in zip(padded, ksize, strides))

    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in pads)) if any(pads) else x.data
    w = weight.data
    n = x.shape[0]
    offsets = list(itertools.product(*(range(k) for k in ksize)))

    def window(arr, off):
        return arr[(slice(None), slice(None)) + tuple(slice(o, o + st * (m - 1) + 1, st) for o, st, m in zip(off, strides, out_sp))]

    acc = np.zeros((weight.shape[0], n) + out_sp, dtype=np.result_type(x.data, w))
    for off in offsets:
        acc += np.tensordot(w[(slice(None), slice(None)) + off], window(xp, off), axes=([1], [1]))
    out = np.moveaxis(acc, 0, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nsp)
    out = np.ascontiguousarray(out)

    sum_axes = tuple(range(1, nsp + 2))

    def backward(g):
        gt = np.moveaxis(g, 1, 0)  # [O, N, *S_out]
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w) if weight.requires_grad else None
        for off in offsets:
            if gw is not None:
                gw[(slice(None), slice(None)) + off] = np.tensordot(gt, window(xp, off), axes=(sum_axes, (0,) + tuple(range(2, nsp + 2))))
            if gxp is not None:
                contrib = np.tensordot(w[(slice(None), slice(None)) + off], gt, axes=([0], [0]))
                window(gxp, off)[...] += np.moveaxis(contrib, 0, 1)
        gx = None
        if gxp is not None:
            gx = gxp[(slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(pads, spatial))]
            gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, nsp + 2))))
        return tuple(grads)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    result = Tensor._make(out, parents, backward, f"conv{nsp}d")
    if unbatched:
        result = reshape(result, result.shape[1:])
    return result


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    if weight.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [C_out, C_in, kh, kw], got {weight.shape}")
    return conv_nd(x, weight, bias, stride, padding)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    if weight.ndim != 5:
        raise DimensionError(f"conv3d kernel must be [C_out, C_in, kt, kh, kw], got {weight.shape}")
    return conv_nd(x, weight, bias, stride, padding)


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise DimensionError(f"expected {n} values, got {v}")
    return v


def avg_pool(x: Tensor, factors: tuple[int, ...]) -> Tensor:
    """Non-overlapping average pooling over the trailing ``len(factors)`` axes.

    Trailing remainders that do not fill a window are dropped.
    """
    nsp = len(factors)
    lead = x.shape[: x.ndim - nsp]
    sp = x.shape[x.ndim - nsp:]
    kept = tuple((s // f) * f for s, f in zip(sp, factors))
    if any(k == 0 for k in kept):
        raise DimensionError(f"avg_pool: window {factors} larger than input {sp}")
    if kept != sp:
        x = x[(Ellipsis,) + tuple(slice(0, k) for k in kept)]
    split = lead + tuple(itertools.chain.from_iterable((k // f, f) for k, f in zip(kept, factors)))
    inner = tuple(len(lead) + 2 * i + 1 for i in range(nsp))
    return mean(reshape(x, split), axis=inner)


def upsample_nearest(x: Tensor, size: tuple[int, ...]) -> Tensor:
    """Nearest-neighbour resize of the trailing axes to ``size`` (integer ratios only)."""
    nsp = len(size)
    out = x
    for i, target in enumerate(size):
        ax = x.ndim - nsp + i
        cur = x.shape[ax]
        if target == cur:
            continue
        if target > cur and target % cur == 0:
            out = repeat_interleave(out, target // cur, axis=ax)
        elif target < cur and cur % target == 0:
            f = cur // target
            index = [slice(None)] * x.ndim
            index[ax] = slice(f // 2, None, f)
            out = out[tuple(index)]
        else:
            raise DimensionError(f"upsample_nearest: {cur} -> {target} is not an integer ratio")
    return out

