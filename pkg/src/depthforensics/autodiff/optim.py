from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
) -> AdamState:
    """One Adam update with decoupled weight decay, applied in place.

    ``params`` maps names to the arrays being optimised. Parameters whose
    gradient is ``None`` still receive weight decay but keep their moments.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise DimensionError(f"adam state for {name!r} has shape {m.shape}, parameter has {p.shape}")
        if weight_decay:
            p -= (lr * weight_decay) * p
        if g is not None:
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    return state
