import math

import numpy as np
import pytest

from hyperenergy import autodiff as ad
from hyperenergy.autodiff import Tensor
from hyperenergy.primary import (LstmState, OutputHeadParams, build_hyperenergy, load_params, lstm_forward,
                                 lstm_layer, lstm_layer_reference, output_head, params_digest, read_checkpoint,
                                 save_checkpoint)


def numpy_lstm(x, layers):
    """Independent single-sample-loop oracle: x [B, n, k], layers of (W [4u, d+u], b [4u])."""
    seq = x
    for W, b in layers:
        u = W.shape[0] // 4
        B, n, _ = seq.shape
        out = np.zeros((B, n, u))
        for bi in range(B):
            h, c = np.zeros(u), np.zeros(u)
            for t in range(n):
                z = W @ np.concatenate([seq[bi, t], h]) + b
                i = 1 / (1 + np.exp(-z[:u]))
                f = 1 / (1 + np.exp(-z[u:2 * u]))
                g = np.tanh(z[2 * u:3 * u])
                o = 1 / (1 + np.exp(-z[3 * u:]))
                c = f * c + i * g
                h = o * np.tanh(c)
                out[bi, t] = h
        seq = out
    return seq[:, -1], c


def rand_layers(rng, u, k, L, scale=0.5):
    layers = []
    for layer in range(L):
        d = k if layer == 0 else u
        layers.append((rng.normal(size=(4 * u, d + u)) * scale, rng.normal(size=4 * u) * scale))
    return layers


# --- LSTM ---------------------------------------------------------------------

def test_zero_parameters_give_zero_state():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 5, 2)))
    st = lstm_forward(x, [(Tensor(np.zeros((8, 4))), Tensor(np.zeros(8)))])
    assert np.all(st.h.data == 0) and np.all(st.c.data == 0)


def test_scalar_trace():
    # i = f = o = sigmoid(0), g = tanh(1) via the cell-candidate bias
    W = Tensor(np.zeros((4, 2)))
    b = Tensor(np.array([0.0, 0.0, 1.0, 0.0]))
    st = lstm_forward(Tensor([[[0.37]]]), [(W, b)])
    c_expected = 0.5 * math.tanh(1.0)
    h_expected = 0.5 * math.tanh(c_expected)
    assert st.c.data[0, 0] == pytest.approx(c_expected, abs=1e-15)
    assert st.h.data[0, 0] == pytest.approx(h_expected, abs=1e-15)
    assert st.c.data[0, 0] == pytest.approx(0.3808, abs=5e-5)
    assert st.h.data[0, 0] == pytest.approx(0.18168, abs=5e-5)


@pytest.mark.parametrize("per_sample", [False, True])
def test_lstm_matches_numpy_oracle(per_sample):
    rng = np.random.default_rng(1)
    B, n, k, u = 3, 6, 2, 3
    x = rng.normal(size=(B, n, k))
    if per_sample:
        per = [rand_layers(np.random.default_rng(10 + i), u, k, 2) for i in range(B)]
        params = [(Tensor(np.stack([p[L][0] for p in per])), Tensor(np.stack([p[L][1] for p in per])))
                  for L in range(2)]
        expected = np.concatenate([numpy_lstm(x[i:i + 1], per[i])[0] for i in range(B)])
    else:
        layers = rand_layers(rng, u, k, 2)
        params = [(Tensor(W), Tensor(b)) for W, b in layers]
        expected = numpy_lstm(x, layers)[0]
    for fn in (lstm_layer, lstm_layer_reference):
        st = lstm_forward(Tensor(x), params, layer_fn=fn)
        np.testing.assert_allclose(st.h.data, expected, rtol=1e-12, atol=1e-14)
        assert np.all(np.abs(st.h.data) <= 1)


def test_fused_and_composed_gradients_agree():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 5, 3)))
    layers = rand_layers(rng, 2, 3, 2)
    grads = []
    for fn in (lstm_layer, lstm_layer_reference):
        params = [(Tensor(W.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)) for W, b in layers]
        st = lstm_forward(x, params, layer_fn=fn)
        ad.backward(ad.add(ad.sum(st.h), ad.scalar_mul(ad.sum(st.c), 0.3)))
        grads.append([t.grad for pair in params for t in pair])
    for g1, g2 in zip(*grads):
        np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("fn", [lstm_layer, lstm_layer_reference])
def test_lstm_weight_gradients_fd(fn):
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 4, 2)))
    params = [(Tensor(W, requires_grad=True), Tensor(b, requires_grad=True)) for W, b in rand_layers(rng, 2, 2, 2)]
    flat = [t for pair in params for t in pair]
    err = ad.finite_diff_check(lambda: ad.sum(lstm_forward(x, params, layer_fn=fn).h), flat)
    assert err < 1e-4


def test_per_sample_weight_gradients_fd():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 3, 2)))
    W = Tensor(rng.normal(size=(2, 8, 4)) * 0.5, requires_grad=True)
    b = Tensor(rng.normal(size=(2, 8)) * 0.5, requires_grad=True)
    assert ad.finite_diff_check(lambda: ad.sum(lstm_forward(x, [(W, b)]).h), [W, b]) < 1e-4


def test_lstm_shape_errors():
    x = Tensor(np.zeros((2, 3, 2)))
    with pytest.raises(ad.ShapeError):
        lstm_forward(x, [(Tensor(np.zeros((8, 5))), Tensor(np.zeros(8)))])
    with pytest.raises(ad.ShapeError):
        lstm_forward(x, [(Tensor(np.zeros((8, 4))), Tensor(np.zeros(7)))])
    with pytest.raises(ad.ShapeError):
        lstm_forward(x, [(Tensor(np.zeros((3, 8, 4))), Tensor(np.zeros((3, 8))))])
    with pytest.raises(ad.ShapeError):
        lstm_forward(Tensor(np.zeros((2, 3))), [])


# --- output head --------------------------------------------------------------

def test_head_zero_weight_and_identity():
    h = Tensor(np.random.default_rng(5).normal(size=(3, 4)))
    v = np.arange(4.0)
    out = output_head(LstmState(h, h), OutputHeadParams(Tensor(np.zeros((4, 4))), Tensor(v)))
    np.testing.assert_array_equal(out.data, np.tile(v, (3, 1)))
    out = output_head(LstmState(h, h), OutputHeadParams(Tensor(np.eye(4)), Tensor(v)))
    np.testing.assert_allclose(out.data, h.data + v, rtol=1e-15)
    with pytest.raises(ad.ShapeError):
        output_head(LstmState(h, h), OutputHeadParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2))))


def test_head_gradients_fd():
    rng = np.random.default_rng(6)
    h = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    head = OutputHeadParams(Tensor(rng.normal(size=(5, 4)), requires_grad=True),
                            Tensor(rng.normal(size=5), requires_grad=True))
    w = Tensor(rng.normal(size=(3, 5)))
    f = lambda: ad.sum(ad.mul(output_head(LstmState(h, h), head), w))  # noqa: E731
    assert ad.finite_diff_check(f, [h, head.W_out, head.b_out]) < 1e-6


# --- composed model -----------------------------------------------------------

def toy(**kw):
    args = dict(num_features=3, window=6, horizon=2, hidden_units=2, hypernet_hidden=(8, 8), num_points=4,
                degree=2, gamma=0.5, seed=0)
    args.update(kw)
    return build_hyperenergy(**args)


def test_untrained_outputs_finite_and_identical_rows():
    m = toy()
    x = np.random.default_rng(7).uniform(size=(3, 6, 3))
    x[2] = x[0]
    out = m.forward(Tensor(x)).data
    assert out.shape == (3, 2) and np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[0], out[2])
    np.testing.assert_array_equal(out, m.forward(Tensor(x)).data)


def test_trainable_leaves_exclude_lstm_shapes():
    m = toy(hidden_units=3)
    names = set(m.trainable())
    assert names == {"kernel.reference_points", "kernel.alpha", "kernel.c", "kernel.lambda_logit",
                     "hypernet.0.weight", "hypernet.0.bias", "hypernet.1.weight", "hypernet.1.bias",
                     "hypernet.2.weight", "hypernet.2.bias", "head.weight", "head.bias"}
    lstm_shapes = {(12, 6), (12, 3 + 3), (12,)}
    for sl in m.layout.layers:
        lstm_shapes |= {sl.weight_shape, sl.bias_shape}
    assert not any(t.shape in lstm_shapes for t in m.trainable().values())


def test_full_pipeline_gradients_fd():
    m = toy()
    rng = np.random.default_rng(8)
    x = Tensor(rng.uniform(size=(3, 6, 3)))
    y = rng.uniform(size=(3, 2))
    # break the zero-bias symmetry so every path carries gradient
    for name, t in m.trainable().items():
        if name.endswith("bias"):
            t.data = rng.normal(size=t.shape) * 0.1
    m.kernel.lambda_logit.data = np.asarray(0.3)

    def f():
        return ad.mean(ad.pow_int(ad.sub(m.forward(x), Tensor(y)), 2))
    names = sorted(m.trainable())
    assert ad.finite_diff_check(f, [m.trainable()[n] for n in names]) < 1e-4


def test_model_validation():
    m = toy()
    with pytest.raises(ad.ShapeError):
        m.forward(Tensor(np.zeros((2, 5, 3))))
    nk = toy(kernel_mode=None)
    assert nk.hypernet.input_dim == 18 and nk.kernel is None
    assert toy().hypernet.input_dim == 4


def test_batch_mean_theta_mode_shares_parameters():
    m = toy(theta_mode="batch_mean")
    x = np.random.default_rng(9).uniform(size=(4, 6, 3))
    out = m.forward(Tensor(x)).data
    theta = m.generate_theta(Tensor(x)).data.mean(axis=0)
    from hyperenergy.integration import extract_all
    layers = [(W.data, b.data) for W, b in extract_all(Tensor(theta), m.layout)]
    h = numpy_lstm(x, layers)[0]
    np.testing.assert_allclose(out, h @ m.head.W_out.data.T + m.head.b_out.data, rtol=1e-11)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = toy(seed=3)
    extra = {"note": np.arange(3.0)}
    path = save_checkpoint(tmp_path / "m.npz", m, extra, {"config_hash": "abc"})
    meta, params, extras = read_checkpoint(path)
    assert meta["config_hash"] == "abc" and meta["model"]["kernel"]["num_points"] == 4
    assert meta["model"]["layout"]["total_params"] == m.layout.total_params
    other = toy(seed=99)
    load_params(other, params)
    assert params_digest(other) == params_digest(m)
    np.testing.assert_array_equal(extras["note"], extra["note"])
    # same model, same bytes
    again = save_checkpoint(tmp_path / "m2.npz", m, extra, {"config_hash": "abc"})
    assert path.read_bytes() == again.read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "missing.npz")
    m = toy()
    _, params, _ = read_checkpoint(save_checkpoint(tmp_path / "a.npz", m))
    with pytest.raises(ad.ShapeError):
        load_params(toy(hidden_units=3), params)
    params.pop("head.bias")
    with pytest.raises(KeyError):
        load_params(m, params)
