import numpy as np
import pytest

from pifnet import layers as L
from pifnet.errors import ConfigError, ShapeError
from pifnet.tensor import Rng, Tensor, backward, tsum

from oracles import GRADCHECKS, naive_conv3d


@pytest.mark.parametrize("seed", range(6))
def test_conv3d_matches_naive_loops(seed):
    rng = np.random.default_rng(seed)
    c, f, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = rng.normal(size=(2, c, 6, 5, 7))
    w, b = rng.normal(size=(f, c, k, k, k)), rng.normal(size=f)
    np.testing.assert_allclose(L.conv3d_array(x, w, b, stride, padding), naive_conv3d(x, w, b, stride, padding),
                               rtol=0, atol=1e-12)


def test_conv3d_identity_kernel():
    x = np.arange(64.0).reshape(1, 1, 4, 4, 4)
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(L.conv3d_array(x, w, None, 1, 1), x)


@pytest.mark.parametrize("name", sorted(GRADCHECKS))
def test_layer_gradients_match_finite_differences(name):
    assert max(GRADCHECKS[name](seed) for seed in range(3)) < 1e-4


def test_conv3d_spec_errors():
    with pytest.raises(ShapeError):
        L.Conv3dSpec(1, 1, 5).output_extent(4)
    with pytest.raises(ConfigError):
        L.Conv3dSpec(1, 1, 0)
    assert L.Conv3dSpec(1, 1, 3, padding=1).output_extent(10) == 10
    assert L.Conv3dSpec(1, 1, 3, stride=2).output_extent(9) == 4


def test_maxpool_values_and_first_index_ties():
    x = np.zeros((1, 1, 2, 2, 2))
    x[0, 0, 1, 0, 1] = 3.0
    out, arg = L.maxpool3d(Tensor(x), L.PoolSpec(2, 2))
    assert out.data.item() == 3.0 and arg.item() == 1 * 4 + 0 * 2 + 1
    _, arg = L.maxpool3d(Tensor(np.ones((1, 1, 2, 2, 2))), L.PoolSpec(2, 2))
    assert arg.item() == 0


def test_maxpool_routes_gradient_to_winner():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 6, 6, 6)), requires_grad=True)
    out, arg = L.maxpool3d(x, L.PoolSpec(3, 3))
    backward(tsum(out * 2.0))
    assert out.shape == (2, 3, 2, 2, 2)
    assert x.grad.sum() == pytest.approx(2.0 * out.size)
    assert np.count_nonzero(x.grad) == out.size
    flat = x.data.reshape(2, 3, -1)
    np.testing.assert_array_equal(np.take_along_axis(flat, arg.reshape(2, 3, -1), axis=2).reshape(out.shape), out.data)


def test_elu_and_sigmoid_values():
    x = Tensor(np.array([-1000.0, -1.0, 0.0, 2.0, 1000.0]))
    np.testing.assert_allclose(L.elu(x).data, [-1.0, np.expm1(-1.0), 0.0, 2.0, 1000.0])
    s = L.sigmoid(x).data
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[2] == 0.5 and s[-1] == 1.0


def test_dropout_modes():
    x = Tensor(np.ones((200, 50)))
    assert L.dropout(x, 0.3, training=False) is x
    out = L.dropout(x, 0.3, Rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.7}
    assert abs((out == 0).mean() - 0.3) < 0.02
    np.testing.assert_array_equal(L.dropout(x, 0.3, Rng(4)).data, L.dropout(x, 0.3, Rng(4)).data)
    with pytest.raises(ConfigError):
        L.dropout(x, 1.0, Rng(0))


def test_linear_shape_error():
    with pytest.raises(ShapeError):
        L.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_he_init_variance():
    w = L.he_init((64, 8, 3, 3, 3), Rng(1)).data
    assert w.std() == pytest.approx(np.sqrt(2 / 216), rel=0.03)
    assert abs(w.mean()) < 0.01


def test_bce_known_value_and_clamp():
    loss = L.bce_loss(Tensor(np.array([0.8, 0.4])), [1, 0])
    assert loss.item() == pytest.approx(-(np.log(0.8) + np.log(0.6)) / 2)
    p = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    loss = L.bce_loss(p, [1, 0])
    assert np.isfinite(loss.item()) and loss.item() == pytest.approx(-np.log(1e-12))
    backward(loss)
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])
    with pytest.raises(ConfigError):
        L.bce_loss(Tensor(np.array([0.5])), [2])


def test_adam_first_step_by_hand():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = L.Adam([p], lr=0.1, weight_decay=0.5)
    p.grad = np.array([0.5, -4.0])
    opt.step()
    # bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * 0.95 - 0.1 * np.sign([0.5, -4.0]), atol=1e-7)


def test_adam_requires_gradients_and_lr_zero_is_null():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = L.Adam([p], lr=0.0, weight_decay=0.1)
    with pytest.raises(ConfigError):
        opt.step()
    p.grad = np.array([3.0])
    opt.step()
    assert p.data.item() == 1.0
