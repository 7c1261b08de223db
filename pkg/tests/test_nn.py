"""
Tests for the numpy neural substrate: layers, recurrences, Adam, gradient checking
"""

import math

import numpy as np
import pytest

from errors import BatchTooSmall
from src.nn import (
    Adam,
    AdamState,
    BatchNorm1d,
    BiLSTM,
    Dropout,
    LeakyReLU,
    Linear,
    LSTM,
    Parameter,
    Sequential,
    adam_step,
    frozen_statistics,
    grad_check,
    numeric_gradient,
)


def weighted_sum_loss(module, x_param, weights):
    """Scalar loss sum(out * weights); backward also fills the input's gradient"""
    def f():
        out = module.forward(x_param.value)
        x_param.grad += module.backward(weights)
        return float(np.sum(out * weights))
    return f


def check_module(module, x, rng, floor=1e-8):
    x_param = Parameter(x)
    weights = rng.normal(size=module.forward(x).shape)
    return grad_check(weighted_sum_loss(module, x_param, weights), module.parameters() + [x_param], floor=floor)


def lstm_loop(lstm, seq):
    """Scalar reimplementation of the LSTM recurrence for one sequence"""
    H = lstm.hidden_size
    Wx, Wh, b = lstm.w_input.value, lstm.w_hidden.value, lstm.bias.value
    h = [0.0] * H
    c = [0.0] * H
    sigmoid = lambda z: 1.0 / (1.0 + math.exp(-z))
    for step in seq:
        z = [
            sum(step[d] * Wx[d][k] for d in range(len(step))) + sum(h[j] * Wh[j][k] for j in range(H)) + b[k]
            for k in range(4 * H)
        ]
        new_h = [0.0] * H
        for u in range(H):
            i, f = sigmoid(z[u]), sigmoid(z[H + u])
            g, o = math.tanh(z[2 * H + u]), sigmoid(z[3 * H + u])
            c[u] = f * c[u] + i * g
            new_h[u] = o * math.tanh(c[u])
        h = new_h
    return np.array(h)


# ==================== Activations & Dropout ====================

def test_leaky_relu_values_and_gradient():
    """Test: leaky-ReLU(-2) with slope 0.2 is -0.4; gradient uses the slope"""
    act = LeakyReLU(0.2)
    out = act.forward(np.array([[-2.0, 3.0]]))
    np.testing.assert_allclose(out, [[-0.4, 3.0]])
    np.testing.assert_allclose(act.backward(np.ones((1, 2))), [[0.2, 1.0]])


def test_dropout_rate_zero_and_eval_are_identity(rng):
    """Test: rate 0 or eval mode passes inputs through unchanged"""
    x = rng.normal(size=(8, 5))
    np.testing.assert_array_equal(Dropout(0.0, rng).forward(x), x)
    layer = Dropout(0.5, rng).eval()
    np.testing.assert_array_equal(layer.forward(x), x)
    np.testing.assert_array_equal(layer.backward(x), x)


def test_dropout_inverted_scaling(rng):
    """Test: kept units scale by 1/(1-rate); the mean is preserved"""
    layer = Dropout(0.2, np.random.default_rng(0))
    out = layer.forward(np.ones((200, 50)))
    kept = out[out != 0.0]
    np.testing.assert_allclose(kept, 1.25)
    assert out.mean() == pytest.approx(1.0, abs=0.03)
    with pytest.raises(ValueError):
        Dropout(1.0, rng)


# ==================== Batch Normalization ====================

def test_batchnorm_normalizes_batch(rng):
    """Test: feature with mean 3 and variance 4 normalizes to mean 0, variance ~1"""
    x = rng.normal(size=(1000, 1))
    x = 3.0 + 2.0 * (x - x.mean()) / x.std()
    out = BatchNorm1d(1).forward(x)
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    assert out.var() == pytest.approx(1.0, abs=1e-5)


def test_batchnorm_running_stats(rng):
    """Test: running stats move by momentum 0.1 using the unbiased variance"""
    x = rng.normal(size=(6, 3))
    bn = BatchNorm1d(3)
    bn.forward(x)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_frozen_statistics(rng):
    """Test: inside the context training mode still normalizes per batch but running stats stay put"""
    model = Sequential(Linear(3, 4, rng), BatchNorm1d(4), LeakyReLU())
    x = rng.normal(2.0, 3.0, size=(8, 3))
    with frozen_statistics(model):
        frozen = model.forward(x)
    np.testing.assert_array_equal(model.layers[1].running_mean, np.zeros(4))
    np.testing.assert_array_equal(model.layers[1].running_var, np.ones(4))
    assert model.layers[1].track_running_stats

    np.testing.assert_array_equal(model.forward(x), frozen)
    assert not np.array_equal(model.layers[1].running_mean, np.zeros(4))


def test_batchnorm_eval_is_batch_size_independent(rng):
    """Test: eval mode gives each sample the same output alone or in a batch"""
    bn = BatchNorm1d(4)
    for _ in range(5):
        bn.forward(rng.normal(2.0, 3.0, size=(16, 4)))
    bn.eval()
    x = rng.normal(size=(7, 4))
    batch = bn.forward(x)
    single = np.vstack([bn.forward(x[k:k + 1]) for k in range(7)])
    np.testing.assert_array_equal(batch, single)


def test_batchnorm_needs_two_samples_in_training():
    """Test: a batch of one raises BatchTooSmall in training, works in eval"""
    bn = BatchNorm1d(3)
    with pytest.raises(BatchTooSmall):
        bn.forward(np.ones((1, 3)))
    bn.eval()
    assert bn.forward(np.ones((1, 3))).shape == (1, 3)


# ==================== Gradient Checks ====================

def test_grad_check_square():
    """Test: f(w) = w^2 at 3 has analytic and numeric gradient 6"""
    w = Parameter([3.0])

    def f():
        w.grad += 2.0 * w.value
        return float(w.value[0] ** 2)

    assert grad_check(f, [w]) < 1e-8
    np.testing.assert_allclose(w.grad, [6.0])
    np.testing.assert_allclose(numeric_gradient(f, w), [6.0], atol=1e-8)


def test_linear_gradients(rng):
    """Test: Linear weight, bias and input gradients match central differences"""
    assert check_module(Linear(5, 4, rng), rng.normal(size=(6, 5)), rng) < 1e-4


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(rng, training):
    """Test: BatchNorm1d gradients in both modes"""
    bn = BatchNorm1d(3)
    bn.gamma.value = rng.normal(size=3)
    bn.beta.value = rng.normal(size=3)
    bn.running_mean = rng.normal(size=3)
    bn.running_var = rng.uniform(0.5, 2.0, 3)
    bn.train(training)
    assert check_module(bn, rng.normal(size=(5, 3)), rng) < 1e-4


def test_leaky_relu_gradients(rng):
    x = rng.normal(size=(4, 6))
    x[np.abs(x) < 0.01] = 0.5
    assert check_module(LeakyReLU(0.2), x, rng) < 1e-4


def test_lstm_gradients(rng):
    """Test: BPTT through 10 steps matches central differences"""
    lstm = LSTM(3, 4, rng)
    assert check_module(lstm, rng.normal(size=(2, 10, 3)), rng, floor=1e-6) < 1e-4


def test_bilstm_gradients(rng):
    bilstm = BiLSTM(3, 6, rng)
    assert check_module(bilstm, rng.normal(size=(2, 10, 3)), rng, floor=1e-6) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_mlp_mse_gradients(seed):
    """Test: random 2-layer MLP with MSE loss checks below 1e-4"""
    rng = np.random.default_rng(seed)
    mlp = Sequential(Linear(4, 6, rng), BatchNorm1d(6), LeakyReLU(0.2), Linear(6, 2, rng)).eval()
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 2))

    def f():
        out = mlp.forward(x)
        mlp.backward(2.0 * (out - target) / out.size)
        return float(np.mean((out - target) ** 2))

    assert grad_check(f, mlp.parameters()) < 1e-4


# ==================== Recurrences ====================

def test_bilstm_zero_weights_zero_output(rng):
    """Test: all-zero weights and input produce an all-zero embedding"""
    bilstm = BiLSTM(6, 8, rng)
    for p in bilstm.parameters():
        p.value[...] = 0.0
    np.testing.assert_array_equal(bilstm.forward(np.zeros((3, 10, 6))), np.zeros((3, 8)))


def test_bilstm_reversal_swaps_halves(rng):
    """Test: with shared direction weights, reversing time swaps the output halves"""
    bilstm = BiLSTM(3, 8, rng)
    for own, other in zip(bilstm.backward_lstm.parameters(), bilstm.forward_lstm.parameters()):
        own.value = other.value.copy()
    x = rng.normal(size=(2, 10, 3))
    out = bilstm.forward(x)
    flipped = bilstm.forward(x[:, ::-1])
    np.testing.assert_allclose(flipped[:, :4], out[:, 4:], atol=1e-14)
    np.testing.assert_allclose(flipped[:, 4:], out[:, :4], atol=1e-14)


def test_bilstm_matches_loop_oracle(rng):
    """Test: vectorized BiLSTM equals a scalar step-by-step evaluation"""
    bilstm = BiLSTM(4, 6, rng)
    x = rng.normal(size=(3, 10, 4))
    out = bilstm.forward(x)
    for b in range(3):
        expected = np.concatenate([
            lstm_loop(bilstm.forward_lstm, x[b].tolist()),
            lstm_loop(bilstm.backward_lstm, x[b, ::-1].tolist()),
        ])
        np.testing.assert_allclose(out[b], expected, atol=1e-12)


def test_lstm_initialization(rng):
    """Test: orthogonal recurrent blocks and forget-gate bias 1"""
    lstm = LSTM(5, 4, rng)
    for k in range(4):
        block = lstm.w_hidden.value[:, 4 * k:4 * (k + 1)]
        np.testing.assert_allclose(block.T @ block, np.eye(4), atol=1e-12)
    np.testing.assert_array_equal(lstm.bias.value[4:8], 1.0)
    assert np.all(np.abs(lstm.w_input.value) <= 0.5)
    with pytest.raises(ValueError):
        BiLSTM(3, 5, rng)


# ==================== Adam ====================

def test_adam_zero_gradient_leaves_params():
    w = np.array([1.0, -2.0])
    adam_step([w], [np.zeros(2)], AdamState.zeros_like([w]), lr=0.1)
    np.testing.assert_array_equal(w, [1.0, -2.0])


def test_adam_first_step_is_signed_lr(rng):
    """Test: the first update is -sign(g)·lr up to epsilon"""
    w = rng.normal(size=10)
    g = rng.normal(size=10)
    before = w.copy()
    adam_step([w], [g], AdamState.zeros_like([w]), lr=0.01)
    np.testing.assert_allclose(w - before, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_quadratic_bowl():
    """Test: 500 steps at lr 0.01 on ||w||^2 reach ||w|| < 1e-3"""
    w = Parameter([1.0, -0.5, 0.25])
    opt = Adam([w], lr=0.01)
    for _ in range(500):
        opt.zero_grad()
        w.grad += 2.0 * w.value
        opt.step()
    assert np.linalg.norm(w.value) < 1e-3


def test_adam_state_round_trip(rng):
    params = [Parameter(rng.normal(size=(2, 3))), Parameter(rng.normal(size=4))]
    opt = Adam(params)
    for p in params:
        p.grad = rng.normal(size=p.shape)
    opt.step()
    other = Adam(params)
    other.load_state_dict(opt.state_dict())
    assert other.state.t == 1
    for a, b in zip(opt.state.m + opt.state.v, other.state.m + other.state.v):
        np.testing.assert_array_equal(a, b)


# ==================== Modules ====================

def test_named_parameters_and_state_dict(rng):
    """Test: nested names, train/eval propagation and state round trip"""
    model = Sequential(Linear(3, 4, rng), BatchNorm1d(4), LeakyReLU(), Linear(4, 1, rng))
    names = list(model.named_parameters())
    assert names == ["layers.0.weight", "layers.0.bias", "layers.1.gamma", "layers.1.beta",
                     "layers.3.weight", "layers.3.bias"]
    assert list(model.named_buffers()) == ["layers.1.running_mean", "layers.1.running_var"]

    model.eval()
    assert not model.layers[1].training
    model.train()
    model.forward(rng.normal(size=(8, 3)))

    clone = Sequential(Linear(3, 4, rng), BatchNorm1d(4), LeakyReLU(), Linear(4, 1, rng))
    clone.load_state_dict(model.state_dict())
    assert clone.state_dict() == model.state_dict()
    with pytest.raises(ValueError):
        Sequential(Linear(3, 5, rng)).load_state_dict({"parameters": {
            "layers.0.weight": np.zeros((3, 4)).tolist(), "layers.0.bias": [0.0] * 4}, "buffers": {}})
