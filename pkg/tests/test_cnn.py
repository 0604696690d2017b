import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotstart.cnn import (
    Arch,
    CnnModel,
    Conv1dLayer,
    DenseLayer,
    Target,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    elu,
    elu_grad,
    flatten,
    load_weights,
    model_backward,
    model_forward,
    param_count,
    save_weights,
    unflatten,
    xavier_bound,
    xavier_init,
)
from hotstart.errors import ShapeMismatch


def _rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def _fd(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# -- ELU -------------------------------------------------------------------------


def test_elu_values():
    assert elu(0.0) == 0.0 and elu_grad(0.0) == 1.0
    assert elu(1.0) == 1.0 and elu_grad(1.0) == 1.0
    assert elu(-1.0) == pytest.approx(-0.6321206, abs=1e-7)
    assert elu_grad(-1.0) == pytest.approx(0.3678794, abs=1e-7)
    assert elu(-1.0, alpha=2.0) == pytest.approx(2 * (math.exp(-1) - 1))


@given(st.floats(1e-12, 1e-3))
def test_elu_continuity(eps):
    assert abs(elu(eps) - elu(-eps)) < 3 * eps
    assert abs(elu_grad(eps) - elu_grad(-eps)) < 2 * eps


# -- convolution -------------------------------------------------------------------


def _conv(kernel, bias=0.0):
    w = np.asarray(kernel, dtype=float).reshape(len(kernel), 1, 1)
    return Conv1dLayer(w, np.array([bias]))


def test_conv_zero_kernel_gives_bias():
    out = conv1d_forward(_conv([0, 0, 0], bias=2.5), np.random.default_rng(0).normal(size=(5, 1, 3)))
    assert np.all(out == 2.5)


def test_conv_delta_kernel_is_identity():
    x = np.random.default_rng(1).normal(size=(5, 1, 2))
    assert np.array_equal(conv1d_forward(_conv([0, 1, 0]), x), x)


def test_conv_box_kernel_by_hand():
    x = np.arange(1.0, 6.0).reshape(5, 1, 1)
    assert conv1d_forward(_conv([1, 1, 1]), x).ravel().tolist() == [3, 6, 9, 12, 9]


def test_conv_is_cross_correlation():
    x = np.arange(1.0, 6.0).reshape(5, 1, 1)
    # out[h] = x[h-1]*w0 + x[h]*w1 + x[h+1]*w2
    assert conv1d_forward(_conv([1, 0, 0]), x).ravel().tolist() == [0, 1, 2, 3, 4]


def test_conv_backward_zero_and_adjoint():
    layer = _conv([0, 1, 0])
    x = np.random.default_rng(2).normal(size=(5, 1, 1))
    gx, gw, gb = conv1d_backward(layer, x, np.zeros((5, 1, 1)))
    assert not gx.any() and not gw.any() and not gb.any()
    g = np.zeros((5, 1, 1))
    g[2] = 1.7
    gx, _, _ = conv1d_backward(layer, x, g)
    assert np.array_equal(gx, g)


@pytest.mark.parametrize("k", [3, 5, 7])
def test_conv_gradients_fd(k):
    rng = np.random.default_rng(k)
    layer = Conv1dLayer(rng.normal(size=(k, 3, 2)), rng.normal(size=2))
    x = rng.normal(size=(4, 3, 2))
    g = rng.normal(size=(4, 2, 2))
    f = lambda: float(np.sum(conv1d_forward(layer, x) * g))
    gx, gw, gb = conv1d_backward(layer, x, g)
    assert _rel_err(gx, _fd(f, x)) < 1e-6
    assert _rel_err(gw, _fd(f, layer.weights)) < 1e-6
    assert _rel_err(gb, _fd(f, layer.bias)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 12), k=st.sampled_from([1, 3, 5, 7]), b=st.integers(1, 4))
def test_conv_preserves_height(h, k, b):
    layer = Conv1dLayer.zeros(k, 4, 8)
    assert conv1d_forward(layer, np.ones((h, 4, b))).shape == (h, 8, b)


def test_even_kernel_rejected():
    with pytest.raises(ShapeMismatch):
        Conv1dLayer.zeros(2, 1, 1)


# -- dense -------------------------------------------------------------------------


def test_dense_zero_weights_gives_bias():
    layer = DenseLayer(np.zeros((16, 2)), np.array([0.5, -1.0]))
    out = dense_forward(layer, np.random.default_rng(0).normal(size=(16, 3)))
    assert np.all(out == np.array([[0.5], [-1.0]]))


def test_dense_gradients_fd():
    rng = np.random.default_rng(4)
    layer = DenseLayer(rng.normal(size=(16, 2)), rng.normal(size=2))
    x = rng.normal(size=(16, 3))
    g = rng.normal(size=(2, 3))
    f = lambda: float(np.sum(dense_forward(layer, x) * g))
    gx, gw, gb = dense_backward(layer, x, g)
    assert _rel_err(gx, _fd(f, x)) < 1e-6
    assert _rel_err(gw, _fd(f, layer.weights)) < 1e-6
    assert _rel_err(gb, _fd(f, layer.bias)) < 1e-6


def test_flatten_order_and_inverse():
    fmap = np.random.default_rng(0).normal(size=(5, 8, 3))
    flat = flatten(fmap)
    assert flat[2 * 8 + 6, 1] == fmap[2, 6, 1]
    assert np.array_equal(unflatten(flat, 8), fmap)


# -- model -------------------------------------------------------------------------


def _toy(arch=Arch.SMALL, l=6, seed=0, target=Target.V):
    model = xavier_init(CnnModel.build(arch, l, target), seed)
    rng = np.random.default_rng(seed + 100)
    for p in model.params():
        p += 0.1 * rng.normal(size=p.shape)  # non-zero biases exercise every path
    return model


@pytest.mark.parametrize("arch", list(Arch))
def test_model_gradients_fd(arch):
    model = _toy(arch)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4, 3))
    y = rng.normal(size=(6, 3))
    f = lambda: float(np.sum((model_forward(model, x) - y) ** 2))
    grads = model_backward(model, x, 2 * (model_forward(model, x) - y))
    for p, g in zip(model.params(), grads):
        assert _rel_err(g, _fd(f, p)) < 1e-5


def test_batch_gradient_is_sum_of_samples():
    model = _toy()
    rng = np.random.default_rng(2)
    x, g = rng.normal(size=(6, 4, 3)), rng.normal(size=(6, 3))
    whole = model_backward(model, x, g)
    parts = [model_backward(model, x[:, :, [j]], g[:, [j]]) for j in range(3)]
    for k, w in enumerate(whole):
        np.testing.assert_allclose(w, sum(p[k] for p in parts), rtol=1e-12, atol=1e-14)


def test_zero_model_zero_output_and_gradients():
    model = CnnModel.build(Arch.SMALL, 6)
    assert not model_forward(model, np.zeros((6, 4, 2))).any()
    grads = model_backward(model, np.ones((6, 4, 2)), np.zeros((6, 2)))
    assert not any(g.any() for g in grads)


def test_identical_samples_identical_outputs():
    model = _toy()
    x = np.repeat(np.random.default_rng(3).normal(size=(6, 4, 1)), 4, axis=2)
    out = model_forward(model, x)
    assert all(np.array_equal(out[:, 0], out[:, j]) for j in range(4))


def test_forward_deterministic():
    model = _toy()
    x = np.random.default_rng(4).normal(size=(6, 4, 5))
    assert model_forward(model, x).tobytes() == model_forward(model, x).tobytes()


def test_shape_checks():
    model = _toy()
    with pytest.raises(ShapeMismatch):
        model_forward(model, np.zeros((5, 4, 1)))
    with pytest.raises(ShapeMismatch):
        model_forward(model, np.zeros((6, 3, 1)))
    with pytest.raises(ValueError):
        CnnModel.build("tiny", 6)


def test_param_counts_by_hand():
    small = (3 * 4 * 8 + 8) + 2 * (3 * 8 * 8 + 8) + (944 * 118 + 118)
    deep = (7 * 4 * 8 + 8) + 4 * (3 * 8 * 8 + 8) + (8 * 2869 * 2869 + 2869)
    assert small == 112_014 and deep == 65_853_189
    assert param_count(CnnModel.build(Arch.SMALL, 118)) == small
    assert param_count(CnnModel.build(Arch.DEEP, 2869)) == deep


def test_xavier_bounds_and_determinism():
    assert xavier_bound(944, 118) == pytest.approx(0.07517, abs=1e-5)
    assert xavier_bound(944, 118) == pytest.approx(0.0751646, abs=1e-7)
    a = xavier_init(CnnModel.build(Arch.SMALL, 118), 3)
    b = xavier_init(CnnModel.build(Arch.SMALL, 118), 3)
    c = xavier_init(CnnModel.build(Arch.SMALL, 118, Target.THETA), 3)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))
    assert not np.array_equal(a.dense.weights, c.dense.weights)
    for conv in a.convs:
        k, cin, cout = conv.weights.shape
        assert np.abs(conv.weights).max() < xavier_bound(k * cin, k * cout)
        assert not conv.bias.any()
    assert np.abs(a.dense.weights).max() < xavier_bound(944, 118)


def test_weights_round_trip(tmp_path):
    model = _toy(Arch.DEEP, l=9, target=Target.THETA)
    save_weights(model, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    assert (back.arch, back.l, back.target, back.seed) == (Arch.DEEP, 9, Target.THETA, 0)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(model.params(), back.params()))
    save_weights(back, tmp_path / "w2.bin")
    assert (tmp_path / "w.bin").read_bytes() == (tmp_path / "w2.bin").read_bytes()
