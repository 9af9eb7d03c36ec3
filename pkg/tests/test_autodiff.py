import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthforensics.autodiff import (
    AdamState,
    DimensionError,
    Tensor,
    adam_step,
    avg_pool,
    concat,
    exp,
    log,
    conv2d,
    conv3d,
    gelu,
    gradcheck,
    layer_norm,
    log_softmax,
    matmul,
    mean,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sum_,
    tanh,
    transpose,
    upsample_nearest,
    var,
)
from depthforensics.autodiff import fdtn


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# -- forward examples ------------------------------------------------------------------


def test_matmul_examples():
    m = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(m)).data, m)
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_softmax_examples():
    np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    x = np.array([1.0, 2.0, 3.0])
    ref = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(Tensor(x)).data, ref, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e4))
def test_softmax_normalises_any_scale(seed, scale):
    x = np.random.default_rng(seed).standard_normal((3, 5)) * scale
    for axis in (0, 1):
        s = softmax(Tensor(x.astype(np.float32)), axis=axis).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)


def test_conv2d_examples():
    x = np.random.default_rng(0).standard_normal((1, 5, 5))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)
    const = Tensor(np.full((1, 6, 6), 2.5))
    out = conv2d(const, Tensor(np.ones((1, 1, 3, 3))), padding="same")
    assert out.shape == (1, 6, 6)
    np.testing.assert_allclose(out.data[:, 1:-1, 1:-1], 22.5)


def test_conv2d_kernel_too_large():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv3d_examples():
    x = np.random.default_rng(0).standard_normal((2, 4, 3, 3))
    ident = np.zeros((2, 2, 1, 1, 1))
    ident[0, 0] = ident[1, 1] = 1.0
    np.testing.assert_array_equal(conv3d(Tensor(x), Tensor(ident)).data, x)
    const = Tensor(np.full((1, 5, 2, 2), 1.5))
    out = conv3d(const, Tensor(np.ones((1, 1, 3, 1, 1))), padding=(1, 0, 0))
    np.testing.assert_allclose(out.data[:, 1:-1], 4.5)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 6, 5))
    k = rng.standard_normal((4, 3, 3, 2))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 2]
                    ref[n, o, i, j] = (patch * k[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_small_elementwise_examples():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    np.testing.assert_array_equal(concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0).data, [1, 2, 3])
    ln = layer_norm(Tensor(np.full(6, 3.0)), Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_array_equal(ln.data, np.zeros(6))


def test_reshape_transpose_roundtrip_bitwise(rng):
    x = rng.standard_normal((2, 3, 4)).astype(np.float32)
    t = transpose(transpose(Tensor(x), (2, 0, 1)), (1, 2, 0))
    assert t.data.tobytes() == x.tobytes()
    assert reshape(reshape(Tensor(x), (6, 4)), (2, 3, 4)).data.tobytes() == x.tobytes()


# -- backward ------------------------------------------------------------------------


def test_backward_examples():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    y = Tensor([1.0, 2.0], requires_grad=True)
    sum_(y * y).backward()
    np.testing.assert_array_equal(y.grad, [2.0, 4.0])


def test_backward_non_scalar_is_usage_error():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(RuntimeError):
        (x * 2.0).backward()


def test_backward_populates_every_reachable_leaf(rng):
    a, b, c = leaf(rng, 3), leaf(rng, 3), leaf(rng, 3)
    sum_(a * b + relu(c) * 0.0).backward()
    assert all(t.grad is not None and t.grad.shape == t.shape for t in (a, b, c))


def test_shared_subgraph_visited_once(rng):
    x = leaf(rng, 4)
    h = x * 3.0
    sum_(h + h).backward()
    np.testing.assert_allclose(x.grad, 6.0)


def test_no_grad_builds_no_graph(rng):
    x = leaf(rng, 3)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_backward_deterministic(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    grads = []
    for _ in range(2):
        xt, kt = Tensor(x.copy(), requires_grad=True), Tensor(k.copy(), requires_grad=True)
        sum_(gelu(conv2d(xt, kt, padding=1)) ** 2).backward()
        grads.append((xt.grad.tobytes(), kt.grad.tobytes()))
    assert grads[0] == grads[1]


GRAD_CASES = {
    "matmul": lambda r: ((lambda a, b: sum_(matmul(a, b) ** 2)), [leaf(r, 4, 5), leaf(r, 5, 3)]),
    "batched_matmul": lambda r: ((lambda a, b: sum_(matmul(a, b) * 0.3)), [leaf(r, 2, 3, 4), leaf(r, 4, 2)]),
    "conv2d": lambda r: ((lambda x, k, b: sum_(conv2d(x, k, b, padding=1) ** 2)), [leaf(r, 2, 8, 8), leaf(r, 4, 2, 3, 3), leaf(r, 4)]),
    "conv2d_stride": lambda r: ((lambda x, k: sum_(conv2d(x, k, stride=2, padding=1) ** 2)), [leaf(r, 2, 2, 7, 7), leaf(r, 3, 2, 3, 3)]),
    "conv3d": lambda r: (
        (lambda x, k, b: sum_(conv3d(x, k, b, padding=(1, 0, 1)) ** 2)),
        [leaf(r, 2, 4, 5, 5), leaf(r, 3, 2, 3, 1, 3), leaf(r, 3)],
    ),
    "layer_norm": lambda r: (
        (lambda x, g, b: sum_(layer_norm(x, g, b) * Tensor(np.arange(12.0).reshape(3, 4)))),
        [leaf(r, 3, 4), leaf(r, 4), leaf(r, 4)],
    ),
    "softmax": lambda r: ((lambda x: sum_(softmax(x, axis=1) * Tensor(np.arange(15.0).reshape(3, 5)))), [leaf(r, 3, 5)]),
    "log_softmax": lambda r: ((lambda x: sum_(log_softmax(x, axis=0) * Tensor(np.arange(15.0).reshape(3, 5)))), [leaf(r, 3, 5)]),
    "gelu": lambda r: ((lambda x: sum_(gelu(x) ** 2)), [leaf(r, 10)]),
    "mean_var": lambda r: ((lambda x: sum_(mean(x, axis=0) * var(x, axis=0))), [leaf(r, 5, 3)]),
    "pool_upsample": lambda r: (
        (lambda x: sum_(upsample_nearest(avg_pool(x, (2, 2)), (6, 6)) ** 2)),
        [leaf(r, 1, 2, 6, 6)],
    ),
    "stack_getitem": lambda r: ((lambda a, b: sum_(stack([a, b], axis=1)[:, 1, ::2] ** 3)), [leaf(r, 3, 4), leaf(r, 3, 4)]),
    "sigmoid_tanh_exp_log": lambda r: (
        (lambda x: sum_(sigmoid(x) * tanh(x) + log(exp(x) + 1.0))),
        [leaf(r, 6)],
    ),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_primitive_gradients_match_finite_differences(name):
    fn, inputs = GRAD_CASES[name](np.random.default_rng(11))
    assert gradcheck(fn, inputs) < 1e-5


def test_gradcheck_linear_is_exact(rng):
    w = rng.standard_normal(6)
    assert gradcheck(lambda x: sum_(x * Tensor(w)), [leaf(rng, 6)]) < 1e-9


def test_gradcheck_softmax_cross_entropy(rng):
    labels = np.array([0, 2, 1])

    def fn(z):
        return -mean(log_softmax(z, axis=1)[np.arange(3), labels])

    assert gradcheck(fn, [leaf(rng, 3, 4)]) < 1e-6


def test_gradcheck_detects_wrong_backward(rng):
    def doubled(x):
        def backward(g):
            return (2.0 * g,)

        return Tensor._make(x.data * 1.0, (x,), backward, "bad")

    assert gradcheck(lambda x: sum_(doubled(x) ** 2), [leaf(rng, 4)]) > 1e-2


def test_gradcheck_rejects_float32():
    with pytest.raises(TypeError):
        gradcheck(lambda x: sum_(x), [Tensor(np.ones(3, dtype=np.float32), requires_grad=True)])


# -- optimiser ------------------------------------------------------------------------


def test_adam_zero_gradient_no_decay_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    p = {"w": np.array([0.5])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=1e-3, weight_decay=0.0)
    np.testing.assert_allclose(p["w"] - 0.5, -1e-3 / (1.0 + 1e-8), rtol=1e-12)


def test_adam_shape_mismatch():
    state = AdamState()
    adam_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, state)
    with pytest.raises(DimensionError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(3)}, state)


def test_adam_quadratic_bowl_decreases():
    target = np.array([1.0, -2.0, 0.5])
    p = {"w": np.zeros(3)}
    state = AdamState()
    loss = []
    for _ in range(100):
        w = Tensor(p["w"], requires_grad=True)
        l = sum_((w - Tensor(target)) ** 2)
        l.backward()
        loss.append(float(l.data))
        adam_step(p, {"w": w.grad}, state, lr=0.01, weight_decay=0.0)
    assert all(b < a for a, b in zip(loss[2:], loss[3:]))


# -- tensor files ---------------------------------------------------------------------


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_fdtn_roundtrip(tmp_path, dtype):
    arr = np.random.default_rng(3).standard_normal((2, 3, 4)).astype(dtype)
    fdtn.save(tmp_path / "a.fdtn", arr)
    back = fdtn.load(tmp_path / "a.fdtn")
    assert back.dtype == dtype and back.tobytes() == arr.tobytes()


def test_fdtn_layout():
    blob = fdtn.encode(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[:4] == b"FDTN" and blob[4] == 1 and blob[5] == 0
    assert struct.unpack("<I", blob[6:10]) == (2,)
    assert struct.unpack("<QQ", blob[10:26]) == (1, 2)
    assert np.frombuffer(blob[26:], "<f4").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("corrupt", [lambda b: b"XXXX" + b[4:], lambda b: b[:4] + b"\x02" + b[5:], lambda b: b[:5] + b"\x09" + b[6:]])
def test_fdtn_rejects_bad_header(corrupt):
    blob = fdtn.encode(np.zeros(3))
    with pytest.raises(fdtn.FormatError):
        fdtn.decode(corrupt(blob))
