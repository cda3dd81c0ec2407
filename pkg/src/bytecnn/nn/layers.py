"""Layer kernels with explicit forward/backward passes.

Everything runs on plain numpy arrays. The layer classes keep convolutional
activations in channels-last [N, L, C] layout so the shifted kernel-tap
slices stay BLAS-compatible views; the recurrent path uses [N, T, D]. The
functional entry points (conv1d_forward, maxpool1d, ...) take the
channels-first [N, C, L] shapes of the operation contracts and wrap the same
cores.

Layers cache what backward needs only when forward is called with
train=True; calling backward without a recorded forward raises RuntimeError.
Training arithmetic is float32; building layers with dtype=float64 switches
the whole stack for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _sigmoid(x):
    # exp of a non-positive argument only, so large |x| cannot overflow
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# convolution core, channels-last, im2col + one GEMM per pass


def _conv_cols(x, k):
    # x [N, L, C] -> [N*(L-K+1), C*K]; flat column order is (channel, tap)
    n, length, c = x.shape
    l_out = length - k + 1
    return sliding_window_view(x, k, axis=1).reshape(n * l_out, c * k)


def _conv_w2(w):
    # w [O, C, K] -> [C*K, O], matching the _conv_cols column order
    o = w.shape[0]
    return w.transpose(1, 2, 0).reshape(-1, o)


def _conv_forward_nlc(x, w, b, want_cols=False):
    n, length, _ = x.shape
    o, _, k = w.shape
    l_out = length - k + 1
    cols = _conv_cols(x, k)
    out = cols @ _conv_w2(w)
    out += b
    out = out.reshape(n, l_out, o)
    return (out, cols) if want_cols else (out, None)


def _conv_backward_nlc(cols, x_shape, w, dout):
    n, length, c = x_shape
    o, _, k = w.shape
    l_out = length - k + 1
    d2 = dout.reshape(n * l_out, o)
    db = d2.sum(axis=0)
    dw = (cols.T @ d2).reshape(c, k, o).transpose(2, 0, 1)
    # (tap, channel) column order keeps the per-tap gather slices contiguous
    w2kc = w.transpose(2, 1, 0).reshape(k * c, o)
    dcols = (d2 @ w2kc.T).reshape(n, l_out, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for j in range(k):
        dx[:, j : j + l_out, :] += dcols[:, :, j, :]
    return np.ascontiguousarray(dw), db, dx


def _maxpool_forward_nlc(x, width):
    n, length, c = x.shape
    l_out = length // width
    win = x[:, : l_out * width, :].reshape(n, l_out, width, c)
    out = win[:, :, 0, :].copy()
    for j in range(1, width):
        np.maximum(out, win[:, :, j, :], out=out)
    return out


def _maxpool_backward_nlc(x, out, width, dout):
    # Route each window's gradient to its first maximal position, found by
    # comparing against the cached forward maxima (exact float equality).
    n, length, c = x.shape
    l_out = length // width
    win = x[:, : l_out * width, :].reshape(n, l_out, width, c)
    dx = np.zeros(x.shape, dtype=dout.dtype)
    dxv = dx[:, : l_out * width, :].reshape(n, l_out, width, c)
    alive = np.ones(dout.shape, dtype=bool)
    for j in range(width):
        hit = (win[:, :, j, :] == out) & alive
        np.copyto(dxv[:, :, j, :], dout, where=hit)
        if j < width - 1:
            alive &= ~hit
    return dx


# ---------------------------------------------------------------------------
# functional kernels (the [N, C, L] operation contracts)


def conv1d_forward(x, w, b):
    """Valid (no padding), stride-1 1D convolution.

    x: [N, C_in, L], w: [C_out, C_in, K], b: [C_out] -> [N, C_out, L-K+1].
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv expects 3-D input and weights, got {x.shape} and {w.shape}")
    n, c, length = x.shape
    c_out, c_in, k = w.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels, weights expect {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape} != ({c_out},)")
    if length < k:
        raise ShapeError(f"input length {length} shorter than kernel {k}")
    out, _ = _conv_forward_nlc(np.ascontiguousarray(x.transpose(0, 2, 1)), w, b)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def maxpool1d(x, width):
    """Non-overlapping max pooling over [N, C, L], stride == width, trailing
    remainder dropped."""
    n, c, length = x.shape
    if width < 1:
        raise ValueError(f"pool width must be >= 1, got {width}")
    if length < width:
        raise ShapeError(f"input length {length} shorter than pool width {width}")
    out = _maxpool_forward_nlc(np.ascontiguousarray(x.transpose(0, 2, 1)), width)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def dense_forward(x, w, b):
    """Affine map: x [N, D] @ w [D, U] + b [U]."""
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"dense shapes do not conform: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b


def dropout(x, rate, mode, rng):
    """Inverted dropout: train mode zeroes with probability rate and scales
    survivors by 1/(1-rate); infer mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep.astype(x.dtype) / (1.0 - rate))


@dataclass
class LstmCellParams:
    """Gate-stacked LSTM parameters, gate order (input, forget, cell, output)."""

    input_weights: np.ndarray  # [4H, D]
    recurrent_weights: np.ndarray  # [4H, H]
    biases: np.ndarray  # [4H]

    def __post_init__(self):
        four_h, d = self.input_weights.shape
        if four_h % 4:
            raise ShapeError(f"input_weights first dim {four_h} not divisible by 4")
        h = four_h // 4
        if self.recurrent_weights.shape != (four_h, h):
            raise ShapeError(f"recurrent_weights shape {self.recurrent_weights.shape} != {(four_h, h)}")
        if self.biases.shape != (four_h,):
            raise ShapeError(f"biases shape {self.biases.shape} != ({four_h},)")

    @property
    def hidden(self) -> int:
        return self.input_weights.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.input_weights.shape[1]

    def param_count(self) -> int:
        return self.input_weights.size + self.recurrent_weights.size + self.biases.size


def lstm_forward(x, params: LstmCellParams, direction: str = "forward"):
    """Run an LSTM over x [N, T, D].

    Returns (hidden states [N, T, H] aligned with input positions, final
    state [N, H]). direction="backward" iterates t = T..1 over the same
    input, i.e. it equals a forward run over the reversed sequence with the
    hidden-state sequence reversed back.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if x.ndim != 3:
        raise ShapeError(f"lstm input must be [N, T, D], got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("lstm input has zero timesteps")
    if x.shape[2] != params.input_dim:
        raise ShapeError(f"input feature dim {x.shape[2]} != {params.input_dim}")
    xs = np.ascontiguousarray(x[:, ::-1]) if direction == "backward" else x
    hs, h_final, _ = _lstm_core(xs, params.input_weights, params.recurrent_weights, params.biases, cache=False)
    if direction == "backward":
        hs = np.ascontiguousarray(hs[:, ::-1])
    return hs, h_final


def _lstm_core(xs, wx, wh, b, cache):
    n, t_len, _ = xs.shape
    h_units = wh.shape[1]
    xp = (np.ascontiguousarray(xs).reshape(n * t_len, -1) @ wx.T + b).reshape(n, t_len, 4 * h_units)
    hs = np.empty((n, t_len, h_units), dtype=xs.dtype)
    h = np.zeros((n, h_units), dtype=xs.dtype)
    c = np.zeros((n, h_units), dtype=xs.dtype)
    saved = None
    if cache:
        saved = {k: np.empty((n, t_len, h_units), dtype=xs.dtype) for k in "ifgoc"}
        saved["tc"] = np.empty((n, t_len, h_units), dtype=xs.dtype)
        saved["hprev"] = np.empty((n, t_len, h_units), dtype=xs.dtype)
    wh_t = wh.T
    for t in range(t_len):
        a = xp[:, t] + h @ wh_t
        gi = _sigmoid(a[:, :h_units])
        gf = _sigmoid(a[:, h_units : 2 * h_units])
        gg = np.tanh(a[:, 2 * h_units : 3 * h_units])
        go = _sigmoid(a[:, 3 * h_units :])
        if cache:
            saved["hprev"][:, t] = h
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        hs[:, t] = h
        if cache:
            saved["i"][:, t] = gi
            saved["f"][:, t] = gf
            saved["g"][:, t] = gg
            saved["o"][:, t] = go
            saved["c"][:, t] = c
            saved["tc"][:, t] = tc
    return hs, h, saved


def _lstm_core_backward(xs, wx, wh, saved, d_hs, d_final):
    n, t_len, _ = xs.shape
    h_units = wh.shape[1]
    gi, gf, gg, go = saved["i"], saved["f"], saved["g"], saved["o"]
    cs, tcs = saved["c"], saved["tc"]
    das = np.empty((n, t_len, 4 * h_units), dtype=xs.dtype)
    dh_next = d_final.copy()
    dc_next = np.zeros((n, h_units), dtype=xs.dtype)
    for t in range(t_len - 1, -1, -1):
        dh = d_hs[:, t] + dh_next
        do = dh * tcs[:, t]
        dc = dc_next + dh * go[:, t] * (1.0 - tcs[:, t] ** 2)
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(dc)
        das[:, t, :h_units] = dc * gg[:, t] * gi[:, t] * (1.0 - gi[:, t])
        das[:, t, h_units : 2 * h_units] = dc * c_prev * gf[:, t] * (1.0 - gf[:, t])
        das[:, t, 2 * h_units : 3 * h_units] = dc * gi[:, t] * (1.0 - gg[:, t] ** 2)
        das[:, t, 3 * h_units :] = do * go[:, t] * (1.0 - go[:, t])
        dh_next = das[:, t] @ wh
        dc_next = dc * gf[:, t]
    dwx = np.tensordot(das, xs, axes=([0, 1], [0, 1]))
    dwh = np.tensordot(das, saved["hprev"], axes=([0, 1], [0, 1]))
    db = das.sum(axis=(0, 1))
    dx = (das.reshape(n * t_len, -1) @ wx).reshape(xs.shape)
    return dwx, dwh, db, dx


# ---------------------------------------------------------------------------
# layer classes (channels-last activations)


class Conv1D:
    def __init__(self, in_channels, out_channels, kernel_width, rng, dtype=np.float32):
        self.in_channels = in_channels
        self.kernel_width = kernel_width
        fan_in = in_channels * kernel_width
        fan_out = out_channels * kernel_width
        self.w = glorot_uniform(rng, (out_channels, in_channels, kernel_width), fan_in, fan_out, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.dw = None
        self.db = None
        self._cols = None
        self._x_shape = None

    def forward(self, x, train=False):
        n, length, c = x.shape
        if c != self.in_channels:
            raise ShapeError(f"input has {c} channels, layer expects {self.in_channels}")
        if length < self.kernel_width:
            raise ShapeError(f"input length {length} shorter than kernel {self.kernel_width}")
        out, cols = _conv_forward_nlc(x, self.w, self.b, want_cols=train)
        self._cols = cols
        self._x_shape = x.shape if train else None
        return out

    def backward(self, dout):
        if self._cols is None:
            raise RuntimeError("conv backward called before a training forward")
        self.dw, self.db, dx = _conv_backward_nlc(self._cols, self._x_shape, self.w, dout)
        return dx


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        # in place: inputs are always layer-owned fresh activations here
        self._mask = x > 0 if train else None
        return np.maximum(x, 0, out=x)

    def backward(self, dout):
        if self._mask is None:
            raise RuntimeError("relu backward called before a training forward")
        # in place: dout is the downstream layer's freshly built gradient
        return np.multiply(dout, self._mask, out=dout)


class MaxPool1D:
    def __init__(self, width):
        self.width = width
        self._x = None
        self._out = None

    def forward(self, x, train=False):
        if x.shape[1] < self.width:
            raise ShapeError(f"input length {x.shape[1]} shorter than pool width {self.width}")
        out = _maxpool_forward_nlc(x, self.width)
        # backward re-derives the argmax from the kept input/output pair, so
        # neither array may be mutated between forward and backward
        self._x = x if train else None
        self._out = out if train else None
        return out

    def backward(self, dout):
        if self._x is None:
            raise RuntimeError("pool backward called before a training forward")
        return _maxpool_backward_nlc(self._x, self._out, self.width, dout)


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape if train else None
        return np.ascontiguousarray(x).reshape(x.shape[0], -1)

    def backward(self, dout):
        if self._shape is None:
            raise RuntimeError("flatten backward called before a training forward")
        return dout.reshape(self._shape)


class Dense:
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.w = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = None
        self.db = None
        self._x = None

    def forward(self, x, train=False):
        out = dense_forward(x, self.w, self.b)
        self._x = x if train else None
        return out

    def backward(self, dout):
        if self._x is None:
            raise RuntimeError("dense backward called before a training forward")
        self.dw = self._x.T @ dout
        self.db = dout.sum(axis=0)
        return dout @ self.w.T


class Dropout:
    """Inverted dropout. The rng is assigned by whoever drives training."""

    def __init__(self, rate, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._scaled_mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._scaled_mask = "identity"
            return x
        if self.rng is None:
            raise RuntimeError("dropout needs an rng for training mode")
        keep = self.rng.random(x.shape) >= self.rate
        self._scaled_mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._scaled_mask

    def backward(self, dout):
        if self._scaled_mask is None:
            raise RuntimeError("dropout backward called before forward")
        if isinstance(self._scaled_mask, str):
            return dout
        return dout * self._scaled_mask


class LSTM:
    """Single LSTM layer over [N, T, D] with a fixed scan direction."""

    def __init__(self, input_dim, hidden, rng, dtype=np.float32, direction="forward"):
        if direction not in ("forward", "backward"):
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        self.direction = direction
        self.hidden = hidden
        self.wx = glorot_uniform(rng, (4 * hidden, input_dim), input_dim, 4 * hidden, dtype)
        self.wh = glorot_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden, dtype)
        self.b = np.zeros(4 * hidden, dtype=dtype)
        self.b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.dwx = None
        self.dwh = None
        self.db = None
        self._xs = None
        self._saved = None

    def params(self) -> LstmCellParams:
        return LstmCellParams(self.wx, self.wh, self.b)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] == 0:
            raise ShapeError(f"lstm input must be [N, T>=1, D], got {x.shape}")
        xs = np.ascontiguousarray(x[:, ::-1]) if self.direction == "backward" else x
        hs, h_final, saved = _lstm_core(xs, self.wx, self.wh, self.b, cache=train)
        if train:
            self._xs = xs
            self._saved = saved
        else:
            self._xs = None
            self._saved = None
        if self.direction == "backward":
            hs = np.ascontiguousarray(hs[:, ::-1])
        return hs, h_final

    def backward(self, d_hs, d_final):
        if self._saved is None:
            raise RuntimeError("lstm backward called before a training forward")
        if self.direction == "backward":
            d_hs = np.ascontiguousarray(d_hs[:, ::-1])
        self.dwx, self.dwh, self.db, dx = _lstm_core_backward(
            self._xs, self.wx, self.wh, self._saved, d_hs, d_final
        )
        if self.direction == "backward":
            dx = np.ascontiguousarray(dx[:, ::-1])
        return dx
