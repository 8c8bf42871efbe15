"""Layer primitives with hand-written backward passes.

Every layer is a pair of functions.  ``*_forward`` returns ``(output, cache)``
and ``*_backward`` maps an upstream gradient plus that cache to gradients for
the inputs and parameters.  Inputs are batched along a leading axis; the
unbatched shapes (``[L, C]`` for sequences, ``[D]`` for vectors) are accepted
too and return unbatched results.

Forward contractions go through :func:`affine`, which uses ``np.einsum``
rather than BLAS so that a row's result does not depend on how many other
rows share the call.  Scoring one window or a thousand gives bit-identical
numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadRate, EmptySequence, InputTooShort, ShapeMismatch


def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ W (+ b)`` over the last axis of ``x``, batch-invariant."""
    lead = x.shape[:-1]
    out = np.einsum("nk,ko->no", x.reshape(-1, x.shape[-1]), W).reshape(*lead, W.shape[1])
    if b is not None:
        out += b
    return out


# --------------------------------------------------------------------------
# activations

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(x.dtype)


_P_MIN = np.finfo(np.float64).tiny
_P_MAX = np.nextafter(1.0, 0.0)


def logistic(x):
    """Branch-stable logistic, clamped so the result stays strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        z = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return np.clip(s, _P_MIN, _P_MAX)


def logistic_grad(x):
    s = logistic(x)
    return s * (1.0 - s)


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


# --------------------------------------------------------------------------
# parameter bundles

@dataclass
class Conv1DParams:
    W: np.ndarray  # [k, C_in, C_out]
    b: np.ndarray  # [C_out]
    padding: str = "same"

    def __post_init__(self):
        if self.W.ndim != 3 or self.b.shape != (self.W.shape[2],):
            raise ShapeMismatch(f"conv kernel {self.W.shape} and bias {self.b.shape} disagree")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")

    @property
    def k(self) -> int:
        return self.W.shape[0]


@dataclass
class LSTMCellParams:
    """Gate blocks are stacked along the last axis in the order i, f, o, g."""

    Wx: np.ndarray  # [D, 4H]
    Wh: np.ndarray  # [H, 4H]
    b: np.ndarray  # [4H]

    def __post_init__(self):
        H = self.Wh.shape[0]
        if self.Wh.shape != (H, 4 * H) or self.Wx.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ShapeMismatch(
                f"inconsistent LSTM blocks Wx{self.Wx.shape} Wh{self.Wh.shape} b{self.b.shape}"
            )

    @property
    def D(self) -> int:
        return self.Wx.shape[0]

    @property
    def H(self) -> int:
        return self.Wh.shape[0]


@dataclass
class BiLSTMParams:
    fwd: LSTMCellParams
    bwd: LSTMCellParams

    def __post_init__(self):
        if (self.fwd.D, self.fwd.H) != (self.bwd.D, self.bwd.H):
            raise ShapeMismatch("forward and backward cells must share D and H")


@dataclass
class DenseParams:
    W: np.ndarray  # [in, out]
    b: np.ndarray  # [out]

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeMismatch(f"dense weight {self.W.shape} and bias {self.b.shape} disagree")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv1d(rng, k: int, c_in: int, c_out: int, padding: str = "same") -> Conv1DParams:
    W = glorot_uniform(rng, (k, c_in, c_out), k * c_in, k * c_out)
    return Conv1DParams(W, np.zeros(c_out), padding)


def init_lstm_cell(rng, D: int, H: int, forget_bias: float = 1.0) -> LSTMCellParams:
    Wx = glorot_uniform(rng, (D, 4 * H), D, 4 * H)
    Wh = glorot_uniform(rng, (H, 4 * H), H, 4 * H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = forget_bias
    return LSTMCellParams(Wx, Wh, b)


def init_dense(rng, n_in: int, n_out: int) -> DenseParams:
    return DenseParams(glorot_uniform(rng, (n_in, n_out), n_in, n_out), np.zeros(n_out))


def _batched(x: np.ndarray, rank: int):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeMismatch(f"expected rank {rank - 1} or {rank} input, got shape {x.shape}")
    return x, False


# --------------------------------------------------------------------------
# conv1d

def same_padding(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d_forward(x: np.ndarray, p: Conv1DParams):
    """``y[i] = sum_j x[i + j] @ W[j] + b`` over a zero-padded input."""
    x, squeeze = _batched(x, 3)
    B, L, C = x.shape
    k, c_in, c_out = p.W.shape
    if C != c_in:
        raise ShapeMismatch(f"input has {C} channels, kernel expects {c_in}")
    if p.padding == "same":
        left, right = same_padding(k)
    else:
        if L < k:
            raise InputTooShort(f"valid convolution needs L >= k ({L} < {k})")
        left = right = 0
    xp = np.pad(x, ((0, 0), (left, right), (0, 0))) if left or right else x
    # patches: [B, L_out, k, C_in]
    patches = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2)
    L_out = patches.shape[1]
    cols = np.ascontiguousarray(patches).reshape(B, L_out, k * c_in)
    y = affine(cols, p.W.reshape(k * c_in, c_out), p.b)
    cache = (cols, p, (B, L, C), (left, right), squeeze)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy: np.ndarray, cache):
    cols, p, (B, L, C), (left, right), squeeze = cache
    dy = np.asarray(dy, dtype=np.float64)
    if squeeze:
        dy = dy[None]
    k, c_in, c_out = p.W.shape
    L_out = dy.shape[1]
    dy2 = dy.reshape(-1, c_out)
    dW = (cols.reshape(-1, k * c_in).T @ dy2).reshape(k, c_in, c_out)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ p.W.reshape(k * c_in, c_out).T).reshape(B, L_out, k, c_in)
    dxp = np.zeros((B, L + left + right, C))
    for j in range(k):
        dxp[:, j : j + L_out, :] += dcols[:, :, j, :]
    dx = dxp[:, left : left + L, :]
    return (dx[0] if squeeze else dx), dW, db


# --------------------------------------------------------------------------
# max pooling

def maxpool1d_forward(x: np.ndarray, width: int = 2):
    """Non-overlapping max pooling (stride = width); trailing remainder dropped."""
    x, squeeze = _batched(x, 3)
    B, L, C = x.shape
    if L < width:
        raise InputTooShort(f"pooling width {width} exceeds sequence length {L}")
    L_out = L // width
    blocks = x[:, : L_out * width].reshape(B, L_out, width, C)
    arg = blocks.argmax(axis=2)  # first maximum wins ties
    y = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
    cache = (arg, (B, L, C), width, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool1d_backward(dy: np.ndarray, cache):
    arg, (B, L, C), width, squeeze = cache
    dy = np.asarray(dy, dtype=np.float64)
    if squeeze:
        dy = dy[None]
    L_out = arg.shape[1]
    dblocks = np.zeros((B, L_out, width, C))
    np.put_along_axis(dblocks, arg[:, :, None, :], dy[:, :, None, :], axis=2)
    dx = np.zeros((B, L, C))
    dx[:, : L_out * width] = dblocks.reshape(B, L_out * width, C)
    return dx[0] if squeeze else dx


# --------------------------------------------------------------------------
# dropout

def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout.  Returns ``(y, mask)``; the mask already carries the 1/(1-p) scale."""
    if not 0.0 <= rate < 1.0:
        raise BadRate(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not train or rate == 0.0:
        mask = np.ones_like(x)
        return x.copy(), mask
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


# --------------------------------------------------------------------------
# LSTM

def lstm_cell_forward(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LSTMCellParams):
    """One gated step.  Returns ``(h_next, c_next, cache)``."""
    x, squeeze = _batched(x, 2)
    h_prev, _ = _batched(h_prev, 2)
    c_prev, _ = _batched(c_prev, 2)
    H = p.H
    if x.shape[1] != p.D or h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise ShapeMismatch(
            f"cell expects D={p.D}, H={H}; got x{x.shape} h{h_prev.shape} c{c_prev.shape}"
        )
    z = affine(x, p.Wx) + affine(h_prev, p.Wh) + p.b
    i = logistic(z[:, :H])
    f = logistic(z[:, H : 2 * H])
    o = logistic(z[:, 2 * H : 3 * H])
    g = np.tanh(z[:, 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (x, h_prev, c_prev, i, f, o, g, tc, p)
    if squeeze:
        return h[0], c[0], cache
    return h, c, cache


def lstm_cell_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Returns ``(dx, dh_prev, dc_prev, grads)`` with grads keyed Wx, Wh, b."""
    x, h_prev, c_prev, i, f, o, g, tc, p = cache
    dh = np.atleast_2d(dh)
    dc = np.atleast_2d(dc)
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    df = dc * c_prev
    di = dc * g
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1
    )
    grads = {"Wx": x.T @ dz, "Wh": h_prev.T @ dz, "b": dz.sum(axis=0)}
    dx = dz @ p.Wx.T
    dh_prev = dz @ p.Wh.T
    return dx, dh_prev, dc_prev, grads


def _run_direction(X: np.ndarray, p: LSTMCellParams, order):
    B = X.shape[0]
    h = np.zeros((B, p.H))
    c = np.zeros((B, p.H))
    caches = []
    for t in order:
        h, c, cache = lstm_cell_forward(X[:, t], h, c, p)
        caches.append((t, cache))
    return h, caches


def _bptt(dh: np.ndarray, caches, p: LSTMCellParams, dX: np.ndarray):
    grads = {"Wx": np.zeros_like(p.Wx), "Wh": np.zeros_like(p.Wh), "b": np.zeros_like(p.b)}
    dc = np.zeros_like(dh)
    for t, cache in reversed(caches):
        dx, dh, dc, g = lstm_cell_backward(dh, dc, cache)
        dX[:, t] += dx
        for key in grads:
            grads[key] += g[key]
    return grads


def bilstm_forward(X: np.ndarray, p: BiLSTMParams):
    """Context vector ``[h_fwd_final ; h_bwd_final]`` of shape ``[2H]`` per sequence.

    The forward cell reads rows ``0..T-1``; the backward cell reads
    ``T-1..0`` and contributes its state after consuming row 0.
    """
    X, squeeze = _batched(X, 3)
    B, T, D = X.shape
    if T < 1:
        raise EmptySequence("BiLSTM needs at least one time step")
    if D != p.fwd.D:
        raise ShapeMismatch(f"sequence has {D} features, cells expect {p.fwd.D}")
    h_f, cache_f = _run_direction(X, p.fwd, range(T))
    h_b, cache_b = _run_direction(X, p.bwd, range(T - 1, -1, -1))
    hc = np.concatenate([h_f, h_b], axis=1)
    cache = (cache_f, cache_b, p, X.shape, squeeze)
    return (hc[0] if squeeze else hc), cache


def bilstm_backward(dhc: np.ndarray, cache):
    """Backpropagation through time for both directions.

    Returns ``(dX, grads_fwd, grads_bwd)``.
    """
    cache_f, cache_b, p, shape, squeeze = cache
    dhc = np.atleast_2d(np.asarray(dhc, dtype=np.float64))
    H = p.fwd.H
    dX = np.zeros(shape)
    g_f = _bptt(dhc[:, :H], cache_f, p.fwd, dX)
    g_b = _bptt(dhc[:, H:], cache_b, p.bwd, dX)
    return (dX[0] if squeeze else dX), g_f, g_b


# --------------------------------------------------------------------------
# dense

def dense_forward(x: np.ndarray, p: DenseParams):
    x, squeeze = _batched(x, 2)
    if x.shape[1] != p.W.shape[0]:
        raise ShapeMismatch(f"dense expects {p.W.shape[0]} inputs, got {x.shape[1]}")
    y = affine(x, p.W, p.b)
    return (y[0] if squeeze else y), (x, p, squeeze)


def dense_backward(dy: np.ndarray, cache):
    x, p, squeeze = cache
    dy = np.atleast_2d(dy)
    dx = dy @ p.W.T
    return (dx[0] if squeeze else dx), x.T @ dy, dy.sum(axis=0)
