from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, flat: int, eps: float) -> float:
    """Central difference of ``fn`` w.r.t. one flattened element of ``inputs[index]``."""
    buf = inputs[index].data.reshape(-1)
    orig = buf[flat]
    buf[flat] = orig + eps
    plus = float(fn(*inputs).data)
    buf[flat] = orig - eps
    minus = float(fn(*inputs).data)
    buf[flat] = orig
    return (plus - minus) / (2.0 * eps)


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_checks: int | None = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients with central differences.

    Returns the largest per-element ``|a - n| / max(1, |a|, |n|)`` over the
    checked elements. Only inputs with ``requires_grad`` are checked. When
    ``max_checks`` is given, at most that many elements per input are sampled
    (seeded) instead of sweeping every element.
    """
    for t in inputs:
        if t.requires_grad and t.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 inputs, got {t.dtype}")
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        a_flat = np.zeros(t.size) if analytic[i] is None else analytic[i].reshape(-1)
        idx = np.arange(t.size)
        if max_checks is not None and t.size > max_checks:
            idx = np.sort(rng.choice(t.size, size=max_checks, replace=False))
        for flat in idx:
            n = numerical_grad(fn, inputs, i, int(flat), eps)
            a = float(a_flat[flat])
            err = abs(a - n) / max(1.0, abs(a), abs(n))
            worst = max(worst, err)
    return worst
