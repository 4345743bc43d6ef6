import numpy as np
import pytest

from hyperenergy import autodiff as ad
from hyperenergy.autodiff import Tensor
from hyperenergy.hypernet import HyperNetParams, hypernet_forward, hypernet_init, linear
from hyperenergy.integration import build_layout, extract_all, extract_layer_params


# --- hypernetwork -------------------------------------------------------------

def test_paper_scale_shapes_and_xavier_bounds():
    hn = hypernet_init([128, 128], 64, 200_192, "relu", seed=0)
    assert [W.shape for W, _ in hn.layers] == [(128, 64), (128, 128), (200_192, 128)]
    for W, b in hn.layers:
        bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        assert np.abs(W.data).max() <= bound
        assert np.all(b.data == 0)
        assert W.requires_grad and b.requires_grad
    assert hn.output_dim == 200_192 and hn.input_dim == 64


def test_init_determinism_and_errors():
    a, b = hypernet_init([8, 8], 4, 10, seed=3), hypernet_init([8, 8], 4, 10, seed=3)
    for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(Wa.data, Wb.data) and np.array_equal(ba.data, bb.data)
    with pytest.raises(ValueError):
        hypernet_init([], 4, 10)
    with pytest.raises(ValueError):
        hypernet_init([8], 4, 10, activation="gelu")


def test_zero_weights_give_final_bias_rows():
    hn = hypernet_init([5, 5], 3, 7, seed=0)
    b3 = np.arange(7.0)
    for W, b in hn.layers:
        W.data[:] = 0
    hn.layers[-1][1].data[:] = b3
    theta = hypernet_forward(Tensor(np.random.default_rng(0).normal(size=(4, 3))), hn)
    np.testing.assert_array_equal(theta.data, np.tile(b3, (4, 1)))


def test_identity_hidden_layer_passes_nonnegative_input():
    W1, b1 = Tensor(np.eye(3)), Tensor(np.zeros(3))
    W2, b2 = Tensor(np.array([[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]])), Tensor(np.array([0.5, -0.5]))
    hn = HyperNetParams([(W1, b1), (W2, b2)], "relu")
    x = np.abs(np.random.default_rng(1).normal(size=(5, 3)))
    np.testing.assert_allclose(hypernet_forward(Tensor(x), hn).data, x @ W2.data.T + b2.data, rtol=1e-15)


def test_last_layer_is_linear_in_its_parameters():
    hn = hypernet_init([6], 4, 5, "swish", seed=2)
    x = Tensor(np.random.default_rng(2).normal(size=(3, 4)))
    base = hypernet_forward(x, hn).data
    W, b = hn.layers[-1]
    W.data *= 2.5
    b.data[:] = 0.0
    np.testing.assert_allclose(hypernet_forward(x, hn).data, 2.5 * base, rtol=1e-13)


@pytest.mark.parametrize("act", ["relu", "swish"])
def test_hypernet_gradients_fd(act):
    hn = hypernet_init([6, 5], 4, 9, act, seed=4)
    for _, b in hn.layers:
        b.data[:] = np.random.default_rng(9).normal(size=b.shape) * 0.1
    x = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
    params = [t for pair in hn.layers for t in pair]
    assert ad.finite_diff_check(lambda: ad.sum(hypernet_forward(x, hn)), params) < 1e-4


def test_hypernet_width_mismatch():
    hn = hypernet_init([6], 4, 5, seed=0)
    with pytest.raises(ad.ShapeError):
        hypernet_forward(Tensor(np.zeros((2, 3))), hn)
    with pytest.raises(ad.ShapeError):
        HyperNetParams([(Tensor(np.zeros((3, 2))), Tensor(np.zeros(3))),
                        (Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))])


def test_linear_matches_numpy():
    rng = np.random.default_rng(5)
    x, W, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)
    np.testing.assert_allclose(linear(Tensor(x), Tensor(W), Tensor(b)).data, x @ W.T + b, rtol=1e-14)


# --- parameter integration ----------------------------------------------------

def test_paper_layout():
    lay = build_layout(128, 5, 2)
    l0, l1 = lay.layers
    assert l0.weight_shape == (512, 133) and l0.bias_shape == (512,)
    assert l1.weight_shape == (512, 256) and l1.bias_shape == (512,)
    assert (l0.weight_offset, l0.weight_end, l0.bias_offset, l0.bias_end) == (0, 68_096, 68_096, 68_608)
    assert (l1.weight_offset, l1.weight_end, l1.bias_offset, l1.bias_end) == (68_608, 199_680, 199_680, 200_192)
    assert lay.total_params == 200_192


def test_minimal_layout_and_errors():
    lay = build_layout(1, 1, 1)
    assert lay.layers[0].weight_shape == (4, 2) and lay.total_params == 12
    for bad in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        with pytest.raises(ValueError):
            build_layout(*bad)


@pytest.mark.parametrize("u,k,L", [(1, 1, 1), (3, 2, 2), (4, 5, 3), (16, 5, 2)])
def test_offsets_tile_exactly(u, k, L):
    lay = build_layout(u, k, L)
    pos = 0
    total = 0
    for i, sl in enumerate(lay.layers):
        d_in = k if i == 0 else u
        assert sl.weight_offset == pos and sl.bias_offset == sl.weight_end and sl.bias_end - sl.bias_offset == 4 * u
        assert sl.weight_end - sl.weight_offset == 4 * u * (d_in + u)
        pos = sl.bias_end
        total += 4 * u * (d_in + u) + 4 * u
    assert pos == lay.total_params == total


def test_arange_theta_offsets():
    lay = build_layout(128, 5, 2)
    theta = Tensor(np.arange(lay.total_params, dtype=float))
    W0, B0 = extract_layer_params(theta, lay, 0)
    assert W0.data[0, 0] == 0 and B0.data[0] == 68_096
    W1, B1 = extract_layer_params(theta, lay, 1)
    assert W1.data[0, 0] == 68_608 and B1.data[-1] == 200_191


def test_round_trip_and_batched_theta():
    lay = build_layout(3, 2, 2)
    rng = np.random.default_rng(6)
    theta = Tensor(rng.normal(size=lay.total_params))
    flat = np.concatenate([np.concatenate([W.data.ravel(), b.data]) for W, b in extract_all(theta, lay)])
    np.testing.assert_array_equal(flat, theta.data)
    batch = Tensor(rng.normal(size=(4, lay.total_params)))
    W, b = extract_layer_params(batch, lay, 1)
    assert W.shape == (4, 12, 6) and b.shape == (4, 12)
    np.testing.assert_array_equal(W.data[2], batch.data[2, lay.layers[1].weight_offset:lay.layers[1].weight_end]
                                  .reshape(12, 6))


def test_weight_slice_gradient_scatter_pattern():
    lay = build_layout(128, 5, 2)
    theta = Tensor(np.zeros(lay.total_params), requires_grad=True)
    W1, _ = extract_layer_params(theta, lay, 1)
    ad.backward(ad.sum(W1))
    expected = np.zeros(lay.total_params)
    expected[68_608:199_680] = 1.0
    np.testing.assert_array_equal(theta.grad, expected)


def test_extract_errors():
    lay = build_layout(2, 2, 2)
    with pytest.raises(IndexError):
        extract_layer_params(Tensor(np.zeros(lay.total_params)), lay, 2)
    with pytest.raises(ad.ShapeError):
        extract_layer_params(Tensor(np.zeros(lay.total_params + 1)), lay, 0)
