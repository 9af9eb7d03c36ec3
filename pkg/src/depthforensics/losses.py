"""Training losses and detection metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, as_tensor, log_softmax, mean, reshape, sum_

SSIM_C1 = 1e-4
SSIM_C2 = 1e-4


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.7  # structural-similarity term
    beta: float = 0.7  # patch MSE term

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative, got alpha={self.alpha}, beta={self.beta}")


def ssim(a, b, c1: float = SSIM_C1, c2: float = SSIM_C2) -> Tensor:
    """Whole-map SSIM averaged over the batch.

    ``a`` and ``b`` are [N, ...] batches of maps; every map contributes one
    set of global moments. The expression is written symmetrically so that
    swapping the arguments gives a bitwise-identical result.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = reshape(a, (1, -1)), reshape(b, (1, -1))
    n = a.shape[0]
    a, b = reshape(a, (n, -1)), reshape(b, (n, -1))
    mu_a = mean(a, axis=1, keepdims=True)
    mu_b = mean(b, axis=1, keepdims=True)
    da, db = a - mu_a, b - mu_b
    var_a = mean(da * da, axis=1)
    var_b = mean(db * db, axis=1)
    cov = mean(da * db, axis=1)
    mu_a, mu_b = reshape(mu_a, (n,)), reshape(mu_b, (n,))
    num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return mean(num / den)


def ssim_loss(a, b, c1: float = SSIM_C1, c2: float = SSIM_C2) -> Tensor:
    return 1.0 - ssim(a, b, c1, c2)


def patch_mse(pred, target, reduction: str = "sum") -> Tensor:
    """Squared patch error summed over patches and samples.

    ``reduction="batch_mean"`` divides the sum by the number of samples;
    ``"mean"`` averages over every element.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"patch_mse inputs differ in shape: {pred.shape} vs {target.shape}")
    diff = pred - target
    total = sum_(diff * diff)
    if reduction == "sum":
        return total
    if reduction == "batch_mean":
        return total * (1.0 / (pred.shape[0] if pred.ndim > 1 else 1))
    if reduction == "mean":
        return total * (1.0 / pred.size)
    raise ValueError(f"unknown reduction {reduction!r}")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [N, K] (or [K])."""
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    if logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"{logits.shape[0]} logits rows for {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(labels.shape[0]), labels]
    return -mean(picked)


def total_loss(l_c, l_ssim, l_pmse, weights: LossWeights = LossWeights()):
    """Classification loss plus the weighted depth terms (scalars or tensors)."""
    return l_c + weights.alpha * l_ssim + weights.beta * l_pmse


# -- metrics ----------------------------------------------------------------------


class MetricError(ValueError):
    pass


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.size == 0:
        raise MetricError("empty score list")
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores for {y.size} labels")
    return s, y


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and sorted_vals[stop + 1] == sorted_vals[start]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def auc(scores, labels) -> float:
    """ROC AUC from the Mann-Whitney rank statistic (ties count one half)."""
    s, y = _check_scores(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when only one class is present")
    rank_sum = average_ranks(s)[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def acc(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct when ``score >= threshold`` predicts class 1."""
    s, y = _check_scores(scores, labels)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def roc_curve(scores, labels) -> RocCurve:
    """ROC points from (0, 0) to (1, 1), one per distinct score threshold."""
    s, y = _check_scores(scores, labels)
    n_pos, n_neg = int((y == 1).sum()), int((y != 1).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC is undefined when only one class is present")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y == 1)[last]
    fps = (last + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=np.r_[np.inf, s[last]])
