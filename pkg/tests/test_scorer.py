import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vadmil.errors import CheckpointError, DimensionMismatch, TraceMismatch
from vadmil.scorer import (
    HIDDEN,
    Mode,
    ScoringNetwork,
    backward,
    decode_checkpoint,
    encode_checkpoint,
    forward,
    glorot_bound,
    init_network,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
    zero_network,
)

from .oracles import fd_gradients, relative_error, smooth_random_case


def test_init_is_deterministic():
    a, b = init_network(16, 0.6, seed=5), init_network(16, 0.6, seed=5)
    for k, v in a.parameters().items():
        assert np.array_equal(v, b.parameters()[k])
    c = init_network(16, 0.6, seed=6)
    assert not np.array_equal(a.W1, c.W1)


def test_init_biases_zero_and_shapes():
    net = init_network(10)
    assert net.W1.shape == (512, 10) and net.W2.shape == (32, 512) and net.W3.shape == (1, 32)
    for b in (net.b1, net.b2, net.b3):
        assert np.all(b == 0.0)


def test_glorot_bound_reference_width():
    net = init_network(2048, seed=1)
    bound = glorot_bound(2048, 512)
    assert bound == pytest.approx(math.sqrt(6 / 2560))
    assert bound == pytest.approx(0.0484, abs=5e-5)
    assert np.abs(net.W1).max() <= bound
    # a uniform draw of 1M weights reaches close to the edge
    assert np.abs(net.W1).max() > 0.99 * bound


def test_zero_network_scores_half():
    net = zero_network(7)
    x = np.random.default_rng(0).normal(size=(32, 7))
    score, _ = forward(net, x, Mode.EVAL)
    assert np.all(score == 0.5)
    score, _ = forward(net, x, Mode.TRAIN, np.random.default_rng(1))
    assert np.all(score == 0.5)


def test_hand_computed_forward():
    net = ScoringNetwork(
        W1=np.array([[1.0, -1.0], [0.5, 2.0]]), b1=np.array([0.0, -1.0]),
        W2=np.array([[1.0, 1.0], [-1.0, 0.5]]), b2=np.array([0.5, 0.0]),
        W3=np.array([[0.25, -1.0]]), b3=np.array([0.1]),
        dropout_rate=0.0,
    )
    # z1 = [-1, 3.5] -> a1 = [0, 3.5]; z2 = [4, 1.75]; z3 = 1 - 1.75 + 0.1 = -0.65
    score, trace = forward(net, np.array([1.0, 2.0]))
    np.testing.assert_allclose(trace.z1, [[-1.0, 3.5]])
    np.testing.assert_allclose(trace.z2, [[4.0, 1.75]])
    assert score == pytest.approx(1.0 / (1.0 + math.exp(0.65)), rel=1e-15)


def test_eval_is_pure():
    net = init_network(12, seed=3)
    x = np.random.default_rng(2).normal(size=(32, 12))
    s1, _ = forward(net, x)
    s2, _ = forward(net, x)
    assert s1.tobytes() == s2.tobytes()


def test_bag_batch_matches_single_bags_in_eval():
    net = init_network(6, seed=0)
    x = np.random.default_rng(1).normal(size=(3, 32, 6))
    batched, _ = forward(net, x)
    for i in range(3):
        np.testing.assert_allclose(batched[i], forward(net, x[i])[0], rtol=1e-13)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        forward(init_network(4), np.zeros(5))


def test_train_mode_needs_rng():
    with pytest.raises(ValueError):
        forward(init_network(4), np.zeros(4), Mode.TRAIN)


def test_dropout_masks_shared_within_bag():
    net = init_network(5, dropout_rate=0.5, seed=0)
    _, trace = forward(net, np.ones((4, 32, 5)), Mode.TRAIN, np.random.default_rng(0))
    assert trace.m1.shape == (4, 1, 512) and trace.m2.shape == (4, 1, 32)
    assert set(np.unique(trace.m1)) <= {0.0, 2.0}


def test_dropout_expectation_matches_eval():
    net = init_network(6, dropout_rate=0.6, seed=4, hidden=(8, 4))
    net.b1[:] = 0.3  # keep every unit active so the comparison is informative
    x = np.random.default_rng(0).normal(size=6)
    _, eval_trace = forward(net, x[None, :])
    draws = np.broadcast_to(x, (100_000, 1, 6))
    _, trace = forward(net, draws, Mode.TRAIN, np.random.default_rng(9))
    mean_h1 = trace.h1.mean(axis=0)
    expected = eval_trace.h1[0]
    assert np.linalg.norm(mean_h1 - expected) / np.linalg.norm(expected) < 1e-2


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.floats(1e-3, 5))
def test_sigmoid_monotone_and_open(z, dz):
    lo, hi = sigmoid(np.array([z, z + dz]))
    assert 0.0 < lo < hi < 1.0


def test_sigmoid_extremes_stay_open():
    s = sigmoid(np.array([-1000.0, 1000.0]))
    assert 0.0 < s[0] and s[1] < 1.0


def test_zero_upstream_gradient():
    net = init_network(4, seed=1, dropout_rate=0.3)
    _, trace = forward(net, np.ones((32, 4)), Mode.TRAIN, np.random.default_rng(0))
    grads = backward(net, trace, np.zeros(32))
    assert all(np.all(g == 0.0) for g in grads.values())


def test_gradient_is_additive_over_segments():
    net = init_network(4, seed=2, dropout_rate=0.0, hidden=(6, 5))
    x = np.random.default_rng(3).normal(size=(2, 4))
    _, both = forward(net, x)
    total = backward(net, both, np.ones(2))
    parts = [backward(net, forward(net, x[i])[1], np.float64(1.0)) for i in range(2)]
    for k in total:
        np.testing.assert_allclose(total[k], parts[0][k] + parts[1][k], rtol=1e-12, atol=1e-15)


def test_trace_mismatch():
    net = init_network(4, seed=0)
    _, trace = forward(net, np.ones((32, 4)))
    with pytest.raises(TraceMismatch):
        backward(net, trace, np.ones(31))
    other = init_network(4, seed=0, hidden=(16, 8))
    with pytest.raises(TraceMismatch):
        backward(other, trace, np.ones(32))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("mode", [Mode.EVAL, Mode.TRAIN])
def test_backward_matches_finite_differences(seed, mode):
    net, x, weights, mask_seed = smooth_random_case(seed, dim=4, mode=mode)
    _, trace = forward(net, x, mode, np.random.default_rng(mask_seed))
    analytic = backward(net, trace, weights)
    numeric = fd_gradients(net, x, weights, mode, mask_seed, h=1e-5)
    for k in analytic:
        assert relative_error(analytic[k], numeric[k], floor=1e-6) < 1e-4, k


class TestCheckpoint:
    def test_layout(self, tmp_path):
        net = init_network(3, dropout_rate=0.25, seed=0)
        raw = encode_checkpoint(net)
        assert raw[:4] == b"VMC1"
        assert struct.unpack("<If", raw[4:12]) == (3, 0.25)
        h1, h2 = HIDDEN
        assert len(raw) == 12 + 4 * (h1 * 3 + h1 + h2 * h1 + h2 + h2 + 1)
        np.testing.assert_array_equal(np.frombuffer(raw[12:24], "<f4"), net.W1[0, :3].astype(np.float32))

    def test_round_trip(self, tmp_path):
        net = init_network(9, dropout_rate=0.6, seed=2)
        path = tmp_path / "m.vmc"
        save_checkpoint(net, path)
        back = load_checkpoint(path)
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(back.parameters()[k], v.astype(np.float32).astype(np.float64))
        assert encode_checkpoint(back) == path.read_bytes()

    def test_rejects_corrupt(self):
        raw = encode_checkpoint(init_network(3))
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"XXXX" + raw[4:])
        with pytest.raises(CheckpointError):
            decode_checkpoint(raw[:-4])

    def test_rejects_custom_hidden(self):
        with pytest.raises(CheckpointError):
            encode_checkpoint(init_network(3, hidden=(4, 2)))
