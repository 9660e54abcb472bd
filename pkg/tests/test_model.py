import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from elai.errors import BadConfig, DimensionMismatch, TraceMismatch
from elai.model import (
    AttentionLayer,
    ConvLayer,
    ModelConfig,
    OutputHead,
    RecurrentLayer,
    attention_forward,
    backward,
    backward_batch,
    conv_forward,
    forward,
    forward_batch,
    head_forward,
    init_model,
    model_size_bytes,
    param_count,
    predict_proba,
    recurrent_forward,
    sample_loss,
)

MODES = ("simple", "gated")


def test_init_is_deterministic_with_zero_biases():
    cfg = ModelConfig(8, 4, 3, "gated", 5, seed=11)
    a, b = init_model(cfg), init_model(cfg)
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()
        if name.split(".")[1] in ("b", "b_o"):
            assert np.all(a.params[name] == 0.0)
    limit = math.sqrt(6.0 / (3 + 4))
    assert np.all(np.abs(a.params["conv.W"]) <= limit)


def test_bad_config():
    with pytest.raises(BadConfig):
        ModelConfig(input_dim=3, conv_kernel=4)
    with pytest.raises(BadConfig):
        ModelConfig(hidden_dim=0)
    with pytest.raises(BadConfig):
        ModelConfig(recurrent_mode="bidirectional")


# --- conv --------------------------------------------------------------------

def test_conv_examples():
    layer = ConvLayer(np.array([[1.0, 0.0, -1.0]]), np.zeros(1))
    assert conv_forward(layer, [1, 2, 3, 4]).tolist() == [[0.0], [0.0]]
    ident = ConvLayer(np.array([[1.0]]), np.zeros(1))
    z = np.array([-1.0, 2.0, -3.0])
    assert conv_forward(ident, z)[:, 0].tolist() == [0.0, 2.0, 0.0]
    layer = ConvLayer(np.array([[2.0, 2.0]]), np.array([1.0]))
    assert conv_forward(layer, [0, 1, 0]).tolist() == [[3.0], [3.0]]
    with pytest.raises(DimensionMismatch):
        conv_forward(ConvLayer(np.ones((1, 4)), np.zeros(1)), [1.0, 2.0])


def _conv_naive(W, b, z):
    F, kc = W.shape
    T = len(z) - kc + 1
    out = np.zeros((T, F))
    for t in range(T):
        for f in range(F):
            acc = 0.0
            for m in range(kc):
                acc += W[f, m] * z[t + m]
            out[t, f] = max(acc + b[f], 0.0)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_conv_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    k, F, kc = rng.integers(3, 10), rng.integers(1, 5), rng.integers(1, 3)
    W, b, z = rng.standard_normal((F, kc)), rng.standard_normal(F), rng.standard_normal(k)
    assert np.allclose(conv_forward(ConvLayer(W, b), z), _conv_naive(W, b, z), rtol=0, atol=1e-12)


# --- recurrence --------------------------------------------------------------

def _simple(Wx, Wh, b):
    return RecurrentLayer("simple", {"h": Wx}, {"h": Wh}, {"h": b})


def test_simple_recurrence_decoupled():
    H = 3
    seq = np.random.default_rng(0).standard_normal((4, H))
    h = recurrent_forward(_simple(np.eye(H), np.zeros((H, H)), np.zeros(H)), seq)
    assert np.array_equal(h, np.tanh(seq))


def test_simple_recurrence_scalar_oracle():
    layer = _simple(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))
    h = recurrent_forward(layer, np.array([[1.0], [0.0]]))[:, 0]
    assert h[0] == pytest.approx(0.7615941559557649, abs=1e-15)
    assert h[1] == pytest.approx(0.6420149920119997, abs=1e-15)
    assert h[1] == pytest.approx(math.tanh(math.tanh(1.0)), abs=1e-15)


@pytest.mark.parametrize("mode", MODES)
def test_zero_input_gives_zero_states(mode):
    model = init_model(ModelConfig(5, 3, 2, mode, 4, seed=1))
    h = recurrent_forward(model.recurrent, np.zeros((4, 3)))
    assert np.all(h == 0.0)


def test_gated_recurrence_matches_scalar_lstm():
    rng = np.random.default_rng(2)
    w = {g: rng.standard_normal(3) for g in "ifog"}  # (W_x, W_h, b) per gate
    layer = RecurrentLayer(
        "gated",
        {g: np.array([[w[g][0]]]) for g in "ifog"},
        {g: np.array([[w[g][1]]]) for g in "ifog"},
        {g: np.array([w[g][2]]) for g in "ifog"},
    )
    xs = [0.3, -1.2, 0.7]
    sig = lambda v: 1 / (1 + math.exp(-v))
    h = c = 0.0
    expected = []
    for x in xs:
        a = {g: w[g][0] * x + w[g][1] * h + w[g][2] for g in "ifog"}
        c = sig(a["f"]) * c + sig(a["i"]) * math.tanh(a["g"])
        h = sig(a["o"]) * math.tanh(c)
        expected.append(h)
    got = recurrent_forward(layer, np.array(xs)[:, None])[:, 0]
    assert np.allclose(got, expected, atol=1e-14)


# --- attention / head --------------------------------------------------------

def test_attention_examples():
    layer = AttentionLayer(np.array([0.5, -1.0]))
    h = np.tile([[0.2, 0.7]], (4, 1))
    alpha, c = attention_forward(layer, h)
    assert np.allclose(alpha, 0.25, atol=1e-15)
    assert np.allclose(c, h[0], atol=1e-15)

    alpha, c = attention_forward(layer, np.array([[1.0, 2.0]]))
    assert alpha.tolist() == [1.0] and c.tolist() == [1.0, 2.0]

    # scores (ln 3, 0)
    layer = AttentionLayer(np.array([1.0, 0.0]))
    h = np.array([[math.log(3.0), 5.0], [0.0, -1.0]])
    alpha, c = attention_forward(layer, h)
    assert np.allclose(alpha, [0.75, 0.25], atol=1e-15)
    assert np.allclose(c, 0.75 * h[0] + 0.25 * h[1], atol=1e-15)


def test_head_examples():
    head = OutputHead(np.zeros((2, 3)), np.zeros(2))
    assert head_forward(head, np.ones(3))[1] == 0.5
    head = OutputHead(np.zeros((2, 3)), np.array([0.0, math.log(9.0)]))
    assert head_forward(head, np.ones(3))[1] == pytest.approx(0.9, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    l0=st.floats(-30, 30), l1=st.floats(-30, 30), shift=st.floats(-500, 500)
)
def test_head_shift_invariance(l0, l1, shift):
    y0 = head_forward(OutputHead(np.zeros((2, 1)), np.array([l0, l1])), [0.0])[1]
    y1 = head_forward(OutputHead(np.zeros((2, 1)), np.array([l0 + shift, l1 + shift])), [0.0])[1]
    assert abs(y0 - y1) < 1e-12
    # 1 - y_hat underflows below float64 resolution once l1 - l0 > ~36.7
    if l1 - l0 < 36.0:
        assert 0.0 < y0 < 1.0
    else:
        assert 0.0 <= y0 <= 1.0


# --- full forward ------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_fresh_model_zero_input_is_half(mode):
    model = init_model(ModelConfig(6, 3, 3, mode, 4, seed=5))
    assert forward(model, np.zeros(6)).y_hat == 0.5


@pytest.mark.parametrize("mode", MODES)
def test_forward_trace_invariants(mode):
    model = random_model(mode, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.normal(0, 3, 6)
        tr = forward(model, z)
        assert abs(tr.alpha.sum() - 1.0) < 1e-12 and np.all(tr.alpha >= 0)
        assert 0.0 < tr.y_hat < 1.0
        e = np.exp(tr.logits - tr.logits.max())
        assert tr.y_hat == pytest.approx(e[1] / e.sum(), abs=1e-15)
        again = forward(model, z)
        assert again.y_hat == tr.y_hat and np.array_equal(again.hidden, tr.hidden)


def test_forward_composes_layer_ops():
    model = random_model("simple", seed=4)
    z = np.random.default_rng(1).standard_normal(6)
    act = conv_forward(model.conv, z)
    h = recurrent_forward(model.recurrent, act)
    alpha, c = attention_forward(model.attention, h)
    _, y_hat = head_forward(model.head, c)
    tr = forward(model, z)
    assert np.allclose(tr.alpha, alpha, atol=1e-14)
    assert tr.y_hat == pytest.approx(y_hat, abs=1e-14)


def test_predict_proba_matches_forward():
    model = random_model("gated", seed=8)
    Z = np.random.default_rng(2).standard_normal((7, 6))
    batch = predict_proba(model, Z)
    single = [forward(model, z).y_hat for z in Z]
    assert np.allclose(batch, single, atol=1e-14)
    with pytest.raises(DimensionMismatch):
        predict_proba(model, np.zeros((2, 5)))


# --- backward ----------------------------------------------------------------

def fd_check(model, z, y, h=1e-5, floor=1e-6):
    """Max relative error of backward() against central differences."""
    grads = backward(model, forward(model, z), y)
    worst = 0.0
    for name, a in model.params.items():
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            lp = sample_loss(model, z, y)
            a[idx] = old - h
            lm = sample_loss(model, z, y)
            a[idx] = old
            num = (lp - lm) / (2 * h)
            ana = grads[name][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(mode, seed):
    model = random_model(mode, seed=seed)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(6)
    assert fd_check(model, z, seed % 2) < 1e-4


def test_backward_grad_shapes_and_head_stationarity():
    model = random_model("gated", seed=1)
    model.params["head.b_o"][:] = [0.0, 1000.0]  # y_hat == 1.0 exactly
    tr = forward(model, np.ones(6))
    assert tr.y_hat == 1.0
    g = backward(model, tr, 1)
    assert set(g) == set(model.params)
    assert all(g[n].shape == model.params[n].shape for n in g)
    assert np.all(g["head.b_o"] == 0.0)


def test_dead_relu_filter_has_zero_gradient():
    model = random_model("simple", seed=2)
    model.params["conv.b"][0] = -1e3  # filter 0 never fires
    z = np.random.default_rng(0).standard_normal(6)
    g = backward(model, forward(model, z), 1)
    assert np.all(g["conv.W"][0] == 0.0) and g["conv.b"][0] == 0.0
    assert np.any(g["conv.W"][1:] != 0.0)


def test_batch_gradient_is_mean_of_sample_gradients():
    model = random_model("gated", seed=6)
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((4, 6))
    y = np.array([0, 1, 1, 0])
    batch = backward_batch(model, forward_batch(model, Z), y)
    per = [backward(model, forward(model, z), t) for z, t in zip(Z, y)]
    for name in batch:
        assert np.allclose(batch[name], np.mean([p[name] for p in per], axis=0), atol=1e-14)


def test_backward_rejects_foreign_trace():
    a = random_model("gated", seed=1)
    b = random_model("simple", seed=1)
    with pytest.raises(TraceMismatch):
        backward(b, forward(a, np.zeros(6)), 1)


# --- size --------------------------------------------------------------------

def test_param_count_worked_example():
    model = init_model(ModelConfig(8, 4, 3, "simple", 5))
    conv = 4 * 3 + 4
    rec = 5 * 4 + 5 * 5 + 5
    att = 5
    head = 2 * 5 + 2
    assert (conv, rec, att, head) == (16, 50, 5, 12)
    assert param_count(model) == 83


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("H", [1, 3, 8])
def test_param_count_monotone_and_size_bound(mode, H):
    small = init_model(ModelConfig(6, 2, 2, mode, H))
    big = init_model(ModelConfig(6, 2, 2, mode, 2 * H))
    assert param_count(big) > param_count(small)
    assert model_size_bytes(small) >= 8 * param_count(small)
