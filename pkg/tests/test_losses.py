import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthforensics.autodiff import DimensionError, Tensor, gradcheck
from depthforensics.losses import (
    LossWeights,
    MetricError,
    acc,
    auc,
    average_ranks,
    cross_entropy,
    patch_mse,
    roc_curve,
    ssim,
    ssim_loss,
    total_loss,
)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def pmse_oracle(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        for p in range(a.shape[1]):
            total += (a[i, p] - b[i, p]) ** 2
    return total


# -- SSIM ----------------------------------------------------------------------------


def test_ssim_identical_is_one(rng):
    a = rng.random((4, 196))
    assert float(ssim(Tensor(a), Tensor(a)).data) == 1.0
    assert float(ssim_loss(Tensor(a), Tensor(a)).data) == 0.0


def test_ssim_constant_maps_closed_form():
    c1 = c2 = 1e-4
    value = float(ssim(Tensor(np.zeros((1, 16))), Tensor(np.ones((1, 16))), c1, c2).data)
    expected = (2 * 0 * 1 + c1) * (2 * 0 + c2) / ((0 + 1 + c1) * (0 + 0 + c2))
    assert value == pytest.approx(expected, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, 20)), rng.random((3, 20)) * rng.random()
    ab, ba = ssim(Tensor(a), Tensor(b)).data, ssim(Tensor(b), Tensor(a)).data
    assert ab.tobytes() == ba.tobytes()
    assert -1.0 <= float(ab) <= 1.0
    assert 0.0 <= float(ssim_loss(Tensor(a), Tensor(b)).data) <= 2.0


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ssim(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_ssim_loss_gradcheck(rng):
    a = Tensor(rng.random((3, 12)), requires_grad=True)
    b = Tensor(rng.random((3, 12)), requires_grad=True)
    assert gradcheck(lambda x, y: ssim_loss(x, y), [a, b]) < 1e-5


# -- patch MSE -----------------------------------------------------------------------


def test_patch_mse_examples(rng):
    a = rng.random((3, 8))
    assert float(patch_mse(Tensor(a), Tensor(a)).data) == 0.0
    assert float(patch_mse(Tensor([[0.0, 1.0]]), Tensor([[1.0, 1.0]])).data) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_patch_mse_double_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((4, 196)), rng.random((4, 196))
    assert float(patch_mse(Tensor(a), Tensor(b)).data) == pytest.approx(pmse_oracle(a, b), rel=1e-12)
    assert float(patch_mse(Tensor(a), Tensor(b), "batch_mean").data) == pytest.approx(pmse_oracle(a, b) / 4, rel=1e-12)
    assert float(patch_mse(Tensor(a), Tensor(b), "mean").data) == pytest.approx(pmse_oracle(a, b) / a.size, rel=1e-12)


def test_patch_mse_scaling(rng):
    a, b = rng.random((2, 5)), rng.random((2, 5))
    base = float(patch_mse(Tensor(a), Tensor(b)).data)
    assert float(patch_mse(Tensor(3 * a), Tensor(3 * b)).data) == pytest.approx(9 * base, rel=1e-12)


def test_patch_mse_errors():
    with pytest.raises(DimensionError):
        patch_mse(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))
    with pytest.raises(ValueError):
        patch_mse(Tensor(np.zeros(2)), Tensor(np.zeros(2)), "median")


# -- cross-entropy and total ---------------------------------------------------------


def test_cross_entropy_examples():
    assert float(cross_entropy(Tensor([0.0, 0.0]), 0).data) == pytest.approx(np.log(2), rel=1e-15)
    v = float(cross_entropy(Tensor([1e6, -1e6]), 0).data)
    assert np.isfinite(v) and v == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        cross_entropy(Tensor([[0.0, 1.0]]), [2])


def test_cross_entropy_gradcheck(rng):
    z = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
    assert gradcheck(lambda x: cross_entropy(x, [0, 1, 1, 0, 1, 0]), [z]) < 1e-6


def test_total_loss_arithmetic():
    assert total_loss(1.0, 2.0, 3.0, LossWeights(0.7, 0.7)) == pytest.approx(4.5, abs=1e-12)
    assert total_loss(1.25, 2.0, 3.0, LossWeights(0.0, 0.0)) == 1.25
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.7)


def test_total_loss_gradient_is_weighted_sum(rng):
    pred = rng.random((2, 9))
    target = rng.random((2, 9))
    logits = rng.standard_normal((2, 2))
    w = LossWeights(0.3, 1.7)

    def grads(fn):
        p, z = Tensor(pred, requires_grad=True), Tensor(logits, requires_grad=True)
        fn(p, z).backward()
        return (np.zeros_like(pred) if p.grad is None else p.grad), (np.zeros_like(logits) if z.grad is None else z.grad)

    def parts(p, z):
        return cross_entropy(z, [0, 1]), ssim_loss(p, Tensor(target)), patch_mse(p, Tensor(target))

    total = grads(lambda p, z: total_loss(*parts(p, z), w))
    g_c = grads(lambda p, z: parts(p, z)[0])
    g_s = grads(lambda p, z: parts(p, z)[1])
    g_m = grads(lambda p, z: parts(p, z)[2])
    for k in range(2):
        np.testing.assert_allclose(total[k], g_c[k] + w.alpha * g_s[k] + w.beta * g_m[k], rtol=1e-12, atol=1e-15)


# -- metrics -------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_auc_matches_pair_counting(seed):
    rng = np.random.default_rng(seed)
    labels = np.r_[np.zeros(10), np.ones(10)].astype(int)
    scores = np.round(rng.random(20), 1)  # coarse rounding forces ties
    assert auc(scores, labels) == pairwise_auc(scores, labels)


def test_auc_extremes():
    labels = [0, 0, 1, 1]
    assert auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
    assert auc([0.5] * 4, labels) == 0.5
    assert auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        auc([], [])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 15)
    labels[:2] = [0, 1]
    s = rng.random(15)
    assert auc(s, labels) == auc(np.exp(3 * s) - 7, labels)


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks(np.array([3.0, 1.0, 3.0, 2.0])), [3.5, 1.0, 3.5, 2.0])


def test_acc_threshold():
    assert acc([0.5, 0.49, 0.9, 0.1], [1, 0, 1, 1]) == 0.75


def test_roc_curve_endpoints_and_area(rng):
    labels = rng.integers(0, 2, 30)
    scores = np.round(rng.random(30), 1)
    curve = roc_curve(scores, labels)
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0) and (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert np.trapezoid(curve.tpr, curve.fpr) == pytest.approx(auc(scores, labels), abs=1e-12)
