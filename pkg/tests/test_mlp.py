import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import blob_data, random_network
from relutopo.data_io import ImageSet
from relutopo.errors import (
    BadClassIndex,
    DimensionMismatch,
    EmptyDataset,
    NonFiniteInput,
)
from relutopo.mlp import (
    MlpNetwork,
    TrainConfig,
    activation_pattern,
    evaluate,
    forward,
    forward_batch,
    gradient_parts,
    prob_gradient,
    prob_gradient_batch,
    train,
)


def loop_forward(net, x):
    """Scalar-loop reference forward pass: returns (preact, probs)."""
    d_in, d_h = net.w1.shape
    d_out = net.w2.shape[1]
    pre = []
    for j in range(d_h):
        s = net.b1[j]
        for i in range(d_in):
            s += net.w1[i, j] * x[i]
        pre.append(s)
    hid = [max(0.0, p) for p in pre]
    logits = []
    for k in range(d_out):
        s = net.b2[k]
        for j in range(d_h):
            s += net.w2[j, k] * hid[j]
        logits.append(s)
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    tot = sum(e)
    return pre, [v / tot for v in e]


def central_diff(net, x, k, coords, h=1e-4):
    out = []
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out.append((forward(net, xp).probs[k] - forward(net, xm).probs[k]) / (2 * h))
    return np.array(out)


# --- forward -------------------------------------------------------------------

def test_zero_network_uniform():
    probs = forward(MlpNetwork.zeros(4, 3, 5), np.ones(4)).probs
    assert np.allclose(probs, 0.2, atol=1e-15)


def test_saturated_softmax():
    net = MlpNetwork(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 4)), np.array([100.0, 0, 0, 0]))
    probs = forward(net, np.ones(3)).probs
    assert abs(probs[0] - 1) <= 1e-12 and np.all(probs[1:] <= 1e-12)


def test_forward_matches_scalar_loop():
    net = random_network(seed=4)
    x = np.random.default_rng(5).random(784)
    pre, probs = loop_forward(net, x)
    trace = forward(net, x)
    assert np.max(np.abs(trace.probs - probs)) <= 1e-12
    assert np.max(np.abs(trace.preact1 - pre)) <= 1e-10


def test_forward_trace_fields():
    net = random_network(seed=1)
    trace = forward(net, np.random.default_rng(2).random(784))
    assert np.all(trace.hidden >= 0)
    assert np.array_equal(trace.hidden, np.maximum(trace.preact1, 0))
    assert abs(trace.probs.sum() - 1) <= 1e-12


def test_batch_agrees_with_single():
    net = random_network(d_in=6, d_hidden=5, d_out=3, seed=7)
    x = np.random.default_rng(0).random((4, 6))
    batch = forward_batch(net, x)
    for n in range(4):
        assert np.allclose(forward(net, x[n]).probs, batch.probs[n], rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 30.0))
def test_softmax_normalized(seed, scale):
    net = random_network(d_in=5, d_hidden=7, d_out=4, seed=seed, scale=scale)
    x = np.random.default_rng(seed + 1).standard_normal(5) * scale
    probs = forward(net, x).probs
    assert abs(probs.sum() - 1) <= 1e-12
    assert np.all(probs >= 0) and np.all(probs <= 1)


def test_input_validation():
    net = MlpNetwork.zeros(3, 2, 2)
    with pytest.raises(DimensionMismatch):
        forward(net, np.ones(4))
    with pytest.raises(NonFiniteInput):
        forward(net, np.array([1.0, np.nan, 0.0]))


def test_network_invariants():
    with pytest.raises(DimensionMismatch):
        MlpNetwork(np.zeros((2, 3)), np.zeros(2), np.zeros((3, 1)), np.zeros(1))
    with pytest.raises(NonFiniteInput):
        MlpNetwork(np.full((1, 1), np.inf), np.zeros(1), np.zeros((1, 1)), np.zeros(1))


def test_network_is_immutable():
    net = MlpNetwork.initialize(3, 2, 2)
    with pytest.raises(ValueError):
        net.w1[0, 0] = 5.0


def test_glorot_bounds():
    net = MlpNetwork.initialize(784, 256, 10, seed=3)
    assert np.max(np.abs(net.w1)) <= math.sqrt(6 / (784 + 256))
    assert np.max(np.abs(net.w2)) <= math.sqrt(6 / (256 + 10))
    assert not net.b1.any() and not net.b2.any()
    assert MlpNetwork.initialize(784, 256, 10, seed=3) == net


# --- activation pattern -----------------------------------------------------------

def test_all_negative_pattern():
    net = MlpNetwork(np.zeros((2, 3)), -np.ones(3), np.zeros((3, 2)), np.zeros(2))
    assert not activation_pattern(net, np.zeros(2)).delta.any()


def test_zero_preactivation_is_inactive():
    net = MlpNetwork(np.array([[1.0, 1.0]]), np.array([0.0, 1.0]), np.zeros((2, 2)), np.zeros(2))
    assert activation_pattern(net, np.zeros(1)).delta.tolist() == [False, True]


def test_pattern_matches_scalar_preactivations():
    net = random_network(seed=9)
    x = np.random.default_rng(1).random(784)
    pre, _ = loop_forward(net, x)
    assert activation_pattern(net, x).delta.tolist() == [p > 0 for p in pre]


def test_piecewise_affine_logits():
    net = random_network(d_in=4, d_hidden=6, d_out=3, seed=12)
    rng = np.random.default_rng(3)
    x1 = rng.random(4)
    x2 = x1 + 1e-6 * rng.standard_normal(4)
    d1, d2 = activation_pattern(net, x1).delta, activation_pattern(net, x2).delta
    assert np.array_equal(d1, d2)
    lin = (net.w1 * d1) @ net.w2
    diff = forward(net, x2).logits - forward(net, x1).logits
    assert np.allclose(diff, (x2 - x1) @ lin, atol=1e-9)


# --- gradient ---------------------------------------------------------------------

def test_gradient_zero_in_inactive_region():
    net = MlpNetwork(np.ones((3, 4)), -10 * np.ones(4), np.ones((4, 2)), np.zeros(2))
    assert not prob_gradient(net, np.zeros(3), 1).any()


def test_gradient_hand_example():
    net = MlpNetwork(np.array([[1.0]]), np.array([0.0]), np.array([[1.0, -1.0]]), np.zeros(2))
    g0 = math.e / (math.e + math.exp(-1))
    expect = g0 * (1 - (g0 - (1 - g0)))
    got = prob_gradient(net, np.array([1.0]), 0)
    assert abs(got[0] - expect) <= 1e-15
    assert abs(got[0] - 0.209987) <= 1e-6
    assert abs(got[0] - central_diff(net, np.array([1.0]), 0, [0])[0]) <= 1e-8


def test_gradient_matches_chain_rule_sum():
    net = random_network(d_in=6, d_hidden=5, d_out=4, seed=2)
    x = np.random.default_rng(8).random(6)
    for k in range(4):
        trace = forward(net, x)
        g = trace.probs
        total = np.zeros(6)
        for j in range(5):
            if trace.preact1[j] > 0:
                dg_df = g[k] * (net.w2[j, k] - net.w2[j] @ g)
                total += dg_df * net.w1[:, j]
        assert np.allclose(prob_gradient(net, x, k), total, atol=1e-15)


def test_gradient_parts():
    net = random_network(d_in=6, d_hidden=5, d_out=4, seed=2)
    x = np.random.default_rng(8).random(6)
    parts = gradient_parts(net, x, 2)
    delta = activation_pattern(net, x).delta
    assert not parts.w1_masked[:, ~delta].any()
    assert np.array_equal(parts.phi_k, net.w2[:, 2])
    h = parts.prob_k * (parts.phi_k - parts.gamma)
    assert np.allclose(parts.w1_masked @ h, prob_gradient(net, x, 2), atol=1e-15)


def test_gradient_bad_class():
    net = MlpNetwork.zeros(2, 2, 3)
    with pytest.raises(BadClassIndex):
        prob_gradient(net, np.zeros(2), 3)
    with pytest.raises(BadClassIndex):
        prob_gradient(net, np.zeros(2), -1)


def test_gradient_random_network_finite_differences():
    net = random_network(d_in=20, d_hidden=16, d_out=5, seed=5, scale=2.0)
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 20:
        x = rng.random(20)
        if np.min(np.abs(forward(net, x).preact1)) <= 1e-3:
            continue
        for k in range(5):
            fd = central_diff(net, x, k, range(20))
            an = prob_gradient(net, x, k)
            assert np.max(np.abs(fd - an)) <= 1e-4 * max(np.max(np.abs(an)), 1e-8)
        assert np.max(np.abs(prob_gradient_batch(net, x[None, :].repeat(5, 0), np.arange(5)).sum(0))) <= 1e-10
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradients_sum_to_zero(seed):
    net = random_network(d_in=8, d_hidden=6, d_out=4, seed=seed, scale=3.0)
    x = np.random.default_rng(seed).random(8)
    total = sum(prob_gradient(net, x, k) for k in range(4))
    assert np.max(np.abs(total)) <= 1e-10


# --- training / evaluation -------------------------------------------------------

def test_evaluate_constant_predictor():
    net = MlpNetwork(np.zeros((2, 1)), np.zeros(1), np.zeros((1, 3)), np.array([5.0, 0, 0]))
    result = evaluate(net, ImageSet(np.zeros((4, 2)), np.zeros(4, dtype=int)))
    assert result.accuracy == 1.0
    assert result.confusion[0, 0] == 4


def test_evaluate_tie_breaks_low():
    net = MlpNetwork.zeros(2, 1, 10)
    assert evaluate(net, ImageSet(np.zeros((5, 2)), np.full(5, 3))).accuracy == 0.0


def test_evaluate_empty():
    with pytest.raises(EmptyDataset):
        evaluate(MlpNetwork.zeros(2, 1, 2), ImageSet(np.zeros((0, 2)), np.zeros(0, dtype=int)))


def test_train_empty():
    with pytest.raises(EmptyDataset):
        train(ImageSet(np.zeros((0, 2)), np.zeros(0, dtype=int)), None, d_hidden=2, d_out=2)


def test_train_dimension_mismatch():
    data = ImageSet(np.zeros((3, 2)), np.array([0, 1, 5]))
    with pytest.raises(DimensionMismatch):
        train(data, None, d_hidden=2, d_out=2)


def linear_separability_margin(data):
    """Least-squares linear classifier as an independent separability oracle."""
    x = np.column_stack([data.images, np.ones(len(data.labels))])
    y = np.where(data.labels == 1, 1.0, -1.0)
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    return np.min(y * (x @ w))


def test_train_separable_blobs():
    data = blob_data([(-3.0, -3.0), (3.0, 3.0)], 0.5, 200, seed=11)
    assert linear_separability_margin(data) > 0
    net, log = train(data, data, TrainConfig(epochs=50, lr=0.1, batch=16, seed=1), d_hidden=8, d_out=2)
    assert log[-1]["train_acc"] == 1.0
    assert [e["epoch"] for e in log] == list(range(51))


def test_train_deterministic():
    data = blob_data([(-1.0, 0.0), (1.0, 0.0), (0.0, 1.5)], 0.6, 120, seed=2)
    cfg = TrainConfig(epochs=3, lr=0.1, batch=8, seed=4)
    a, log_a = train(data, data, cfg, d_hidden=5, d_out=3)
    b, log_b = train(data, data, cfg, d_hidden=5, d_out=3)
    assert a == b and log_a == log_b
    c, _ = train(data, data, TrainConfig(epochs=3, lr=0.1, batch=8, seed=5), d_hidden=5, d_out=3)
    assert c != a


def test_train_divergence_reported():
    data = blob_data([(-1.0, 0.0), (1.0, 0.0)], 0.5, 50)
    with pytest.raises(NonFiniteInput):
        train(data, None, TrainConfig(epochs=5, lr=1e200), d_hidden=4, d_out=2)


# --- MNIST -----------------------------------------------------------------------

@pytest.mark.mnist
def test_untrained_is_chance(mnist):
    train_set, test_set = mnist
    _, log = train(train_set.subset(slice(0, 100)), test_set, TrainConfig(epochs=0))
    assert abs(log[0]["val_acc"] - 0.10) <= 0.05


@pytest.mark.mnist
def test_trained_accuracy_matches_hand_count(trained_network, mnist):
    test = mnist[1].subset(slice(0, 100))
    correct = 0
    for x, y in zip(test.images, test.labels):
        _, probs = loop_forward(trained_network, x)
        correct += int(max(range(10), key=lambda k: (probs[k], -k)) == y)
    assert evaluate(trained_network, test).accuracy == correct / 100
