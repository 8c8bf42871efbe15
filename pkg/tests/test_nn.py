import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfdetect import nn
from nfdetect.errors import BadRate, EmptySequence, InputTooShort, ShapeMismatch
from nfdetect.gradcheck import numerical_gradient, relative_error


def naive_conv1d(x, W, b, padding):
    """Direct loop over y_i = sum_j x_{i+j} . w_j + b on a zero-padded input."""
    L, c_in = x.shape
    k, _, c_out = W.shape
    if padding == "same":
        left = (k - 1) // 2
        right = k - 1 - left
    else:
        left = right = 0
    xp = [[0.0] * c_in for _ in range(left)] + x.tolist() + [[0.0] * c_in for _ in range(right)]
    L_out = len(xp) - k + 1
    y = np.zeros((L_out, c_out))
    for i in range(L_out):
        for o in range(c_out):
            acc = 0.0
            for j in range(k):
                for c in range(c_in):
                    acc += xp[i + j][c] * W[j, c, o]
            y[i, o] = acc + b[o]
    return y


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def naive_lstm_run(X, Wx, Wh, b, order):
    """Scalar-loop LSTM over the rows of X in the given order."""
    H = Wh.shape[0]
    D = X.shape[1]
    h = [0.0] * H
    c = [0.0] * H
    for t in order:
        z = [b[j] + sum(X[t, d] * Wx[d, j] for d in range(D)) + sum(h[r] * Wh[r, j] for r in range(H))
             for j in range(4 * H)]
        new_c, new_h = [], []
        for u in range(H):
            i, f, o, g = _sig(z[u]), _sig(z[H + u]), _sig(z[2 * H + u]), math.tanh(z[3 * H + u])
            cu = f * c[u] + i * g
            new_c.append(cu)
            new_h.append(o * math.tanh(cu))
        h, c = new_h, new_c
    return np.array(h)


def _rand_cell(rng, D, H, scale=1.0):
    return nn.LSTMCellParams(
        rng.normal(0, scale, (D, 4 * H)), rng.normal(0, scale, (H, 4 * H)), rng.normal(0, scale, 4 * H)
    )


class TestConv1d:
    def test_worked_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        p = nn.Conv1DParams(np.array([1.0, 0.0, -1.0]).reshape(3, 1, 1), np.zeros(1), "same")
        y, _ = nn.conv1d_forward(x, p)
        expected = naive_conv1d(x, p.W, p.b, "same")
        assert expected[:, 0].tolist() == [-2.0, -2.0, -2.0, 3.0]
        np.testing.assert_array_equal(y, expected)

    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(6, 1))
        p = nn.Conv1DParams(np.ones((1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(nn.conv1d_forward(x, p)[0], x)

    def test_bias_only(self):
        x = np.random.default_rng(1).normal(size=(5, 3))
        p = nn.Conv1DParams(np.zeros((3, 3, 2)), np.full(2, 5.0))
        assert np.all(nn.conv1d_forward(x, p)[0] == 5.0)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 5))
        L = int(rng.integers(k, 9))
        c_in, c_out = (int(v) for v in rng.integers(1, 4, size=2))
        padding = ["same", "valid"][seed % 2]
        x = rng.normal(size=(L, c_in))
        p = nn.Conv1DParams(rng.normal(size=(k, c_in, c_out)), rng.normal(size=c_out), padding)
        np.testing.assert_allclose(nn.conv1d_forward(x, p)[0], naive_conv1d(x, p.W, p.b, padding), atol=1e-12)

    def test_even_kernel_pads_right(self):
        x = np.array([[1.0], [2.0], [3.0]])
        p = nn.Conv1DParams(np.array([1.0, 10.0]).reshape(2, 1, 1), np.zeros(1))
        # left pad 0, right pad 1: [1+20, 2+30, 3+0]
        assert nn.conv1d_forward(x, p)[0][:, 0].tolist() == [21.0, 32.0, 3.0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 6))
    def test_same_padding_preserves_length(self, L, k):
        p = nn.Conv1DParams(np.ones((k, 2, 3)), np.zeros(3))
        assert nn.conv1d_forward(np.ones((L, 2)), p)[0].shape == (L, 3)

    def test_valid_length_and_errors(self):
        p = nn.Conv1DParams(np.ones((3, 1, 1)), np.zeros(1), "valid")
        assert nn.conv1d_forward(np.ones((5, 1)), p)[0].shape == (3, 1)
        with pytest.raises(InputTooShort):
            nn.conv1d_forward(np.ones((2, 1)), p)
        with pytest.raises(ShapeMismatch):
            nn.conv1d_forward(np.ones((5, 2)), p)


class TestMaxPool:
    def test_example_and_routing(self):
        x = np.array([3, 1, 4, 1, 5, 9], float)[:, None]
        y, cache = nn.maxpool1d_forward(x)
        assert y[:, 0].tolist() == [3, 4, 9]
        dx = nn.maxpool1d_backward(np.ones((3, 1)), cache)
        assert dx[:, 0].tolist() == [1, 0, 1, 0, 0, 1]

    def test_remainder_dropped(self):
        y, cache = nn.maxpool1d_forward(np.array([3, 1, 4, 1, 5], float)[:, None])
        assert y[:, 0].tolist() == [3, 4]
        assert nn.maxpool1d_backward(np.ones((2, 1)), cache)[:, 0].tolist() == [1, 0, 1, 0, 0]

    def test_tie_goes_to_earliest(self):
        y, cache = nn.maxpool1d_forward(np.array([[2.0], [2.0]]))
        assert y.tolist() == [[2.0]]
        assert nn.maxpool1d_backward(np.ones((1, 1)), cache).tolist() == [[1.0], [0.0]]

    def test_too_short(self):
        with pytest.raises(InputTooShort):
            nn.maxpool1d_forward(np.ones((1, 2)))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 30))
    def test_length(self, L):
        assert nn.maxpool1d_forward(np.ones((L, 2)))[0].shape == (L // 2, 2)


class TestDropout:
    def test_zero_rate(self):
        x = np.arange(6.0)
        y, _ = nn.dropout_forward(x, 0.0, True, np.random.default_rng(0))
        np.testing.assert_array_equal(y, x)

    @pytest.mark.parametrize("rate", [0.0, 0.3, 0.9])
    def test_eval_is_identity(self, rate):
        x = np.arange(6.0)
        np.testing.assert_array_equal(nn.dropout_forward(x, rate, False)[0], x)

    def test_seeded_masks_repeat(self):
        x = np.ones((4, 5))
        _, m1 = nn.dropout_forward(x, 0.5, True, np.random.default_rng(9))
        _, m2 = nn.dropout_forward(x, 0.5, True, np.random.default_rng(9))
        np.testing.assert_array_equal(m1, m2)
        assert set(np.unique(m1)) <= {0.0, 2.0}

    @pytest.mark.parametrize("rate", [1.0, -0.1, 1.5])
    def test_bad_rate(self, rate):
        with pytest.raises(BadRate):
            nn.dropout_forward(np.ones(3), rate, True, np.random.default_rng(0))

    def test_backward_uses_mask(self):
        x = np.ones(10)
        _, mask = nn.dropout_forward(x, 0.4, True, np.random.default_rng(2))
        np.testing.assert_array_equal(nn.dropout_backward(np.full(10, 3.0), mask), 3.0 * mask)

    def test_expectation_preserved(self):
        rng = np.random.default_rng(5)
        x = np.array([0.5, 1.0, 2.0])
        draws = np.stack([nn.dropout_forward(x, 0.3, True, rng)[0] for _ in range(20_000)])
        np.testing.assert_allclose(draws.mean(axis=0), x, rtol=0.02)


class TestLSTMCell:
    def test_zero_fixed_point(self):
        p = nn.LSTMCellParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        h, c, _ = nn.lstm_cell_forward(np.array([1.0, -2.0, 3.0]), np.zeros(2), np.zeros(2), p)
        assert h.tolist() == [0.0, 0.0] and c.tolist() == [0.0, 0.0]

    def test_hand_evaluated_step(self):
        p = nn.LSTMCellParams(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros(4))
        h, c, _ = nn.lstm_cell_forward(np.array([0.7]), np.zeros(1), np.array([1.0]), p)
        # gates all 0.5, candidate 0: c = 0.5 * 1, h = 0.5 * tanh(0.5)
        assert c[0] == 0.5
        assert h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
        assert h[0] == pytest.approx(0.23106, abs=1e-5)

    def test_shapes(self):
        p = _rand_cell(np.random.default_rng(0), 3, 4)
        h, c, _ = nn.lstm_cell_forward(np.ones(3), np.zeros(4), np.zeros(4), p)
        assert h.shape == c.shape == (4,)

    def test_shape_mismatch(self):
        p = _rand_cell(np.random.default_rng(0), 3, 4)
        with pytest.raises(ShapeMismatch):
            nn.lstm_cell_forward(np.ones(2), np.zeros(4), np.zeros(4), p)

    def test_forget_bias_init(self):
        p = nn.init_lstm_cell(np.random.default_rng(0), 3, 2)
        assert p.b.tolist() == [0, 0, 1, 1, 0, 0, 0, 0]


class TestBiLSTM:
    def test_single_step(self):
        rng = np.random.default_rng(3)
        p = nn.BiLSTMParams(_rand_cell(rng, 2, 3), _rand_cell(rng, 2, 3))
        X = rng.normal(size=(1, 2))
        hc, _ = nn.bilstm_forward(X, p)
        hf, _, _ = nn.lstm_cell_forward(X[0], np.zeros(3), np.zeros(3), p.fwd)
        hb, _, _ = nn.lstm_cell_forward(X[0], np.zeros(3), np.zeros(3), p.bwd)
        np.testing.assert_array_equal(hc, np.concatenate([hf, hb]))

    def test_zero_params(self):
        z = nn.LSTMCellParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        hc, _ = nn.bilstm_forward(np.random.default_rng(0).normal(size=(5, 3)), nn.BiLSTMParams(z, z))
        assert hc.tolist() == [0.0] * 4

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_recurrence(self, seed):
        rng = np.random.default_rng(100 + seed)
        T, D, H = 4, 3, 2
        p = nn.BiLSTMParams(_rand_cell(rng, D, H), _rand_cell(rng, D, H))
        X = rng.normal(size=(T, D))
        hc, _ = nn.bilstm_forward(X, p)
        fwd = naive_lstm_run(X, p.fwd.Wx, p.fwd.Wh, p.fwd.b, range(T))
        bwd = naive_lstm_run(X, p.bwd.Wx, p.bwd.Wh, p.bwd.b, range(T - 1, -1, -1))
        np.testing.assert_allclose(hc, np.concatenate([fwd, bwd]), atol=1e-12)

    def test_direction_matters(self):
        rng = np.random.default_rng(8)
        cell = _rand_cell(rng, 2, 2)
        X = rng.normal(size=(5, 2))
        hc, _ = nn.bilstm_forward(X, nn.BiLSTMParams(cell, cell))
        # same weights, opposite reading order: halves differ
        assert not np.allclose(hc[:2], hc[2:])
        hc_rev, _ = nn.bilstm_forward(X[::-1], nn.BiLSTMParams(cell, cell))
        np.testing.assert_allclose(hc_rev[:2], hc[2:], atol=1e-14)

    def test_empty_sequence(self):
        rng = np.random.default_rng(0)
        p = nn.BiLSTMParams(_rand_cell(rng, 2, 2), _rand_cell(rng, 2, 2))
        with pytest.raises(EmptySequence):
            nn.bilstm_forward(np.zeros((0, 2)), p)

    def test_batch_invariance_bit_exact(self):
        rng = np.random.default_rng(12)
        p = nn.BiLSTMParams(_rand_cell(rng, 16, 8, 0.3), _rand_cell(rng, 16, 8, 0.3))
        X = rng.normal(size=(33, 3, 16))
        batch, _ = nn.bilstm_forward(X, p)
        single = np.stack([nn.bilstm_forward(X[i], p)[0] for i in range(len(X))])
        assert np.array_equal(batch, single)


class TestDense:
    def test_identity(self):
        x = np.array([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(nn.dense_forward(x, nn.DenseParams(np.eye(3), np.zeros(3)))[0], x)

    def test_hand_product(self):
        p = nn.DenseParams(np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros(2))
        assert nn.dense_forward(np.array([1.0, 2.0]), p)[0].tolist() == [3.0, -1.0]

    def test_bias_only(self):
        p = nn.DenseParams(np.zeros((4, 1)), np.array([2.5]))
        assert nn.dense_forward(np.arange(4.0), p)[0].tolist() == [2.5]

    def test_gradients_exact(self):
        rng = np.random.default_rng(0)
        p = nn.DenseParams(rng.normal(size=(3, 2)), rng.normal(size=2))
        x = rng.normal(size=(4, 3))
        dy = rng.normal(size=(4, 2))
        dx, dW, db = nn.dense_backward(dy, nn.dense_forward(x, p)[1])
        np.testing.assert_allclose(dx, dy @ p.W.T)
        np.testing.assert_allclose(dW, x.T @ dy)
        np.testing.assert_allclose(db, dy.sum(0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.dense_forward(np.ones(2), nn.DenseParams(np.ones((3, 1)), np.zeros(1)))


class TestActivations:
    def test_values(self):
        assert nn.logistic(0.0) == 0.5
        assert nn.relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
        assert nn.relu_grad(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 1.0]

    def test_logistic_stable(self):
        with np.errstate(over="raise", invalid="raise"):
            lo = nn.logistic(-1000.0)
            hi = nn.logistic(1000.0)
        assert lo > 0.0 and np.isfinite(lo)
        assert 0.5 < hi < 1.0
        assert nn.logistic(-30.0) > 0.0

    def test_logistic_symmetry(self):
        x = np.linspace(-30, 30, 1001)
        np.testing.assert_allclose(nn.logistic(x) + nn.logistic(-x), 1.0, atol=1e-15)

    def test_logistic_grad_fd(self):
        x = np.linspace(-8, 8, 101)
        h = 1e-5
        fd = (nn.logistic(x + h) - nn.logistic(x - h)) / (2 * h)
        np.testing.assert_allclose(nn.logistic_grad(x), fd, atol=1e-10)


def test_layers_are_pure():
    rng = np.random.default_rng(1)
    p = nn.Conv1DParams(rng.normal(size=(3, 2, 4)), rng.normal(size=4))
    x = rng.normal(size=(2, 7, 2))
    a, _ = nn.conv1d_forward(x, p)
    b, _ = nn.conv1d_forward(x, p)
    assert np.array_equal(a, b)


def test_lstm_cell_gradients_small_sample():
    rng = np.random.default_rng(21)
    p = _rand_cell(rng, 3, 2)
    x, h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    gh, gc = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))

    def loss():
        h, c, _ = nn.lstm_cell_forward(x, h0, c0, p)
        return float(np.sum(gh * h) + np.sum(gc * c))

    _, _, cache = nn.lstm_cell_forward(x, h0, c0, p)
    dx, dh, dc, g = nn.lstm_cell_backward(gh, gc, cache)
    for analytic, arr in ((dx, x), (dh, h0), (dc, c0), (g["Wx"], p.Wx), (g["Wh"], p.Wh), (g["b"], p.b)):
        assert relative_error(analytic, numerical_gradient(loss, arr)) <= 1e-4
