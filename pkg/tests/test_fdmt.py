import numpy as np
import pytest

from depthforensics.autodiff import DimensionError, Tensor, gradcheck, mean, sum_
from depthforensics.fdmt import FDMTConfig, depth_feature_to_grid, fdmt_forward, init_fdmt, patchify, unpatchify
from depthforensics.params import ConfigurationError

from conftest import make_params

TOY = FDMTConfig(grid=(2, 2), embed_dim=8, depth=1, heads=2, mlp_ratio=2, image_size=(8, 8))


def test_patchify_full_size():
    x = Tensor(np.zeros((3, 224, 224)))
    assert patchify(x, (14, 14)).shape == (196, 768)


def test_patchify_order_and_layout():
    img = np.arange(3 * 4 * 4, dtype=float).reshape(3, 4, 4)
    p = patchify(Tensor(img), (2, 2)).data
    # patch 1 is top-right; channel-major within the patch
    np.testing.assert_array_equal(p[1], np.concatenate([img[c, :2, 2:].ravel() for c in range(3)]))
    np.testing.assert_array_equal(p[2], np.concatenate([img[c, 2:, :2].ravel() for c in range(3)]))


def test_patchify_constant_and_roundtrip(rng):
    p = patchify(Tensor(np.full((3, 8, 8), 4.0)), (2, 2)).data
    assert (p == p[0]).all()
    img = rng.standard_normal((2, 3, 12, 12)).astype(np.float32)
    back = unpatchify(patchify(Tensor(img), (3, 3)), (3, 3)).data
    assert back.tobytes() == img.tobytes()


def test_patchify_rejects_indivisible():
    with pytest.raises(DimensionError):
        patchify(Tensor(np.zeros((3, 10, 10))), (3, 3))


def test_default_config_shapes(rng):
    cfg = FDMTConfig(embed_dim=16, depth=1, heads=2)
    p = make_params(init_fdmt(cfg, rng), np.float32)
    out = fdmt_forward(Tensor(rng.uniform(-0.5, 0.5, (1, 3, 224, 224)).astype(np.float32)), p, cfg)
    assert out.depth_pred.shape == (1, 196)
    assert out.depth_feature.shape == (1, 196, 16)


def test_zero_head_gives_half(rng):
    p = make_params(init_fdmt(TOY, rng))
    p["head.weight"].data[...] = 0.0
    p["head.bias"].data[...] = 0.0
    out = fdmt_forward(Tensor(rng.standard_normal((2, 3, 8, 8))), p, TOY)
    np.testing.assert_array_equal(out.depth_pred.data, 0.5)


def test_depth_in_unit_interval_and_attention_rows(rng):
    p = make_params(init_fdmt(TOY, rng))
    for _ in range(5):
        out = fdmt_forward(Tensor(rng.standard_normal((2, 3, 8, 8)) * 5), p, TOY)
        assert np.all((out.depth_pred.data >= 0) & (out.depth_pred.data <= 1))
        for a in out.attention:
            np.testing.assert_allclose(a.data.sum(-1), 1.0, atol=1e-6)


def test_config_mismatch(rng):
    p = make_params(init_fdmt(TOY, rng))
    other = FDMTConfig(grid=(2, 2), embed_dim=8, depth=1, heads=2, image_size=(12, 12))
    with pytest.raises(ConfigurationError):
        fdmt_forward(Tensor(np.zeros((1, 3, 12, 12))), p, other)
    with pytest.raises(ConfigurationError):
        FDMTConfig(embed_dim=10, heads=4)


def test_permutation_equivariance_without_positions(rng):
    cfg = FDMTConfig(grid=(2, 2), embed_dim=8, depth=2, heads=2, image_size=(8, 8))
    p = make_params(init_fdmt(cfg, rng))
    p["pos"].data[...] = 0.0
    img = rng.standard_normal((1, 3, 8, 8))
    perm = np.array([2, 0, 3, 1])
    patches = patchify(Tensor(img), cfg.grid).data
    shuffled = unpatchify(Tensor(patches[:, perm]), cfg.grid).data
    a = fdmt_forward(Tensor(img), p, cfg).depth_feature.data
    b = fdmt_forward(Tensor(shuffled), p, cfg).depth_feature.data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_gradcheck_mean_depth(rng):
    p = make_params(init_fdmt(TOY, rng))
    x = Tensor(rng.standard_normal((2, 3, 8, 8)) * 0.5)
    inputs = [p["blocks.0.qkv.weight"], p["embed.weight"], p["head.weight"], p["pos"]]
    err = gradcheck(lambda *_: mean(fdmt_forward(x, p, TOY).depth_pred), inputs, max_checks=30)
    assert err < 1e-5


def test_gradient_reaches_every_parameter(rng):
    p = make_params(init_fdmt(TOY, rng))
    out = fdmt_forward(Tensor(rng.standard_normal((2, 3, 8, 8))), p, TOY)
    (sum_(out.depth_pred) + mean(out.depth_feature)).backward()
    assert all(t.grad is not None and np.abs(t.grad).sum() > 0 for t in p.values())


def test_feature_to_grid():
    feat = Tensor(np.arange(8.0).reshape(4, 2))
    g = depth_feature_to_grid(feat, (2, 2)).data
    np.testing.assert_array_equal(g[:, 1, 1], [6.0, 7.0])
    x = np.random.default_rng(0).standard_normal((3, 196, 5)).astype(np.float32)
    g = depth_feature_to_grid(Tensor(x), (14, 14), (14, 14)).data
    assert g.shape == (3, 5, 14, 14)
    assert g.reshape(3, 5, 196).transpose(0, 2, 1).tobytes() == x.tobytes()
    up = depth_feature_to_grid(Tensor(x), (14, 14), (28, 28)).data
    np.testing.assert_array_equal(up[:, :, ::2, ::2], g)
    with pytest.raises(DimensionError):
        depth_feature_to_grid(Tensor(np.zeros((5, 2))), (2, 2))


def test_fdmt_alone_learns_patch_targets():
    from depthforensics.autodiff import AdamState, adam_step
    from depthforensics.depth import patch_targets
    from depthforensics.losses import patch_mse
    from depthforensics.model import prepare_frames
    from depthforensics.params import component_rng
    from depthforensics.synthetic import ManifestItem, generate_item

    cfg = FDMTConfig(grid=(14, 14), embed_dim=16, depth=1, heads=2, mlp_ratio=2, image_size=(56, 56))
    p = make_params(init_fdmt(cfg, component_rng(0, "fdmt")), np.float32)
    seqs = [generate_item(ManifestItem(str(s), s, s % 2, "train"), frames=2) for s in range(6)]
    frames = np.concatenate([np.moveaxis(s.frames, 0, 1) for s in seqs]).astype(np.uint8)
    x = Tensor(prepare_frames(frames))
    target = Tensor(np.concatenate([patch_targets(s.depth, s.masks, (14, 14)) for s in seqs]).astype(np.float32))
    state, losses = AdamState(), []
    for _ in range(60):
        p.zero_grad()
        loss = patch_mse(fdmt_forward(x, p, cfg).depth_pred, target, "batch_mean")
        loss.backward()
        losses.append(float(loss.data))
        adam_step(p.arrays(), p.grads(), state, lr=3e-3)
    assert losses[-1] <= 0.5 * losses[0]
