"""The three classifier architectures, parameter counting, and weight files.

All three share a stack of three valid-convolution + ReLU + max-pool blocks
over the 10,000-value input. The CNN head flattens into a dense layer; the
LSTM heads treat the conv output as a sequence of feature vectors and
classify from the final hidden state(s).
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .nn.layers import LSTM, Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU
from .nn.loss import l2_penalty, softmax

ARCHITECTURES = ("cnn", "cnn_unilstm", "cnn_bilstm")

WEIGHTS_MAGIC = b"BCNN"
WEIGHTS_VERSION = 1


@dataclass
class ModelConfig:
    architecture: str = "cnn_bilstm"
    input_len: int = 10_000
    conv_filters: tuple = (30, 50, 90)
    kernel_width: int = 7
    pool_width: int = 5
    dense_units: int = 256  # CNN head only
    lstm_hidden: int = 128
    num_classes: int = 9
    dropout_dense: float = 0.5
    dropout_lstm: float = 0.2
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        self.validate()

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; pick one of {ARCHITECTURES}")
        for name in ("input_len", "kernel_width", "pool_width", "dense_units", "lstm_hidden", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if any(f < 1 for f in self.conv_filters) or len(self.conv_filters) != 3:
            raise ConfigError("conv_filters must be three positive counts")
        for name in ("dropout_dense", "dropout_lstm"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        self.conv_chain()  # raises when the stack cannot consume input_len

    def conv_chain(self):
        """Sequence lengths through the conv stack, conv/pool alternating.

        For the reference config: 10000, 9994, 1998, 1992, 398, 392, 78.
        """
        lengths = [self.input_len]
        length = self.input_len
        for stage in range(len(self.conv_filters)):
            if length < self.kernel_width:
                raise ConfigError(
                    f"conv stage {stage + 1}: length {length} < kernel width {self.kernel_width}"
                )
            length = length - self.kernel_width + 1
            lengths.append(length)
            if length < self.pool_width:
                raise ConfigError(
                    f"pool stage {stage + 1}: length {length} < pool width {self.pool_width}"
                )
            length = length // self.pool_width
            lengths.append(length)
        return lengths


def reference_config(architecture: str, seed: int = 0) -> ModelConfig:
    """The pinned hyperparameters used for all reported results."""
    return ModelConfig(architecture=architecture, seed=seed)


class Model:
    """One configured architecture holding its parameters.

    forward/backward run the whole network; predict_proba/predict_class are
    the inference surface. Parameters are float32 unless built with
    dtype=float64 (gradient-check mode).
    """

    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(config.seed)

        chain = config.conv_chain()
        self.seq_len = chain[-1]  # timesteps seen by the heads
        in_channels = (1,) + config.conv_filters[:2]
        self.convs = []
        self.relus = []
        self.pools = []
        for c_in, c_out in zip(in_channels, config.conv_filters):
            self.convs.append(Conv1D(c_in, c_out, config.kernel_width, rng, dtype))
            self.relus.append(ReLU())
            self.pools.append(MaxPool1D(config.pool_width))

        feat = config.conv_filters[-1]
        arch = config.architecture
        if arch == "cnn":
            self.flatten = Flatten()
            self.dense1 = Dense(feat * self.seq_len, config.dense_units, rng, dtype)
            self.dense1_relu = ReLU()
            self.drop = Dropout(config.dropout_dense)
            self.out = Dense(config.dense_units, config.num_classes, rng, dtype)
        elif arch == "cnn_unilstm":
            self.lstm_f = LSTM(feat, config.lstm_hidden, rng, dtype, direction="forward")
            self.drop = Dropout(config.dropout_lstm)
            self.out = Dense(config.lstm_hidden, config.num_classes, rng, dtype)
        else:  # cnn_bilstm
            self.lstm_f = LSTM(feat, config.lstm_hidden, rng, dtype, direction="forward")
            self.lstm_b = LSTM(feat, config.lstm_hidden, rng, dtype, direction="backward")
            self.drop = Dropout(config.dropout_lstm)
            self.out = Dense(2 * config.lstm_hidden, config.num_classes, rng, dtype)
        self.set_dropout_rng(np.random.default_rng([config.seed, 0xD0]))
        self._lstm_in_shape = None

    # -- plumbing -----------------------------------------------------------

    def set_dropout_rng(self, rng):
        self.drop.rng = rng

    def named_params(self):
        pairs = []
        for i, conv in enumerate(self.convs, start=1):
            pairs += [(f"conv{i}.w", conv.w), (f"conv{i}.b", conv.b)]
        arch = self.config.architecture
        if arch == "cnn":
            pairs += [("dense1.w", self.dense1.w), ("dense1.b", self.dense1.b)]
        else:
            pairs += [("lstm_f.wx", self.lstm_f.wx), ("lstm_f.wh", self.lstm_f.wh), ("lstm_f.b", self.lstm_f.b)]
            if arch == "cnn_bilstm":
                pairs += [("lstm_b.wx", self.lstm_b.wx), ("lstm_b.wh", self.lstm_b.wh), ("lstm_b.b", self.lstm_b.b)]
        pairs += [("out.w", self.out.w), ("out.b", self.out.b)]
        return pairs

    def named_grads(self):
        pairs = []
        for i, conv in enumerate(self.convs, start=1):
            pairs += [(f"conv{i}.w", conv.dw), (f"conv{i}.b", conv.db)]
        arch = self.config.architecture
        if arch == "cnn":
            pairs += [("dense1.w", self.dense1.dw), ("dense1.b", self.dense1.db)]
        else:
            pairs += [("lstm_f.wx", self.lstm_f.dwx), ("lstm_f.wh", self.lstm_f.dwh), ("lstm_f.b", self.lstm_f.db)]
            if arch == "cnn_bilstm":
                pairs += [("lstm_b.wx", self.lstm_b.dwx), ("lstm_b.wh", self.lstm_b.dwh), ("lstm_b.b", self.lstm_b.db)]
        pairs += [("out.w", self.out.dw), ("out.b", self.out.db)]
        if any(g is None for _, g in pairs):
            raise RuntimeError("gradients requested before backward")
        return pairs

    def parameters(self):
        return [p for _, p in self.named_params()]

    def gradients(self):
        return [g for _, g in self.named_grads()]

    def conv_weights(self):
        return [conv.w for conv in self.convs]

    def count_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def l2_value(self) -> float:
        return l2_penalty(self.conv_weights(), self.config.l2_lambda)

    # -- forward / backward -------------------------------------------------

    def forward(self, x, train=False):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_len:
            raise ShapeError(f"expected input [N, {self.config.input_len}], got {x.shape}")
        h = np.ascontiguousarray(x, dtype=self.dtype)[:, :, None]  # [N, L, 1]
        for conv, relu, pool in zip(self.convs, self.relus, self.pools):
            h = pool.forward(relu.forward(conv.forward(h, train), train), train)
        arch = self.config.architecture
        if arch == "cnn":
            h = self.dense1_relu.forward(self.dense1.forward(self.flatten.forward(h, train), train), train)
            h = self.drop.forward(h, train)
            return self.out.forward(h, train)
        # conv output [N, T, feat] is already the LSTM's sequence layout
        self._lstm_in_shape = h.shape
        _, h_f = self.lstm_f.forward(h, train)
        if arch == "cnn_unilstm":
            feat = h_f
        else:
            _, h_b = self.lstm_b.forward(h, train)
            feat = np.concatenate([h_f, h_b], axis=1)
        feat = self.drop.forward(feat, train)
        return self.out.forward(feat, train)

    def backward(self, dlogits):
        """Backpropagate from the logit gradient; adds the L2 term to the conv
        weight gradients. Returns the gradient with respect to the input."""
        d = self.drop.backward(self.out.backward(dlogits))
        arch = self.config.architecture
        if arch == "cnn":
            d = self.dense1_relu.backward(d)
            d = self.flatten.backward(self.dense1.backward(d))
        else:
            n, t_len, _ = self._lstm_in_shape
            hidden = self.config.lstm_hidden
            zeros = np.zeros((n, t_len, hidden), dtype=self.dtype)
            if arch == "cnn_unilstm":
                d = self.lstm_f.backward(zeros, d)
            else:
                d = self.lstm_f.backward(zeros, d[:, :hidden]) + self.lstm_b.backward(zeros, d[:, hidden:])
        for conv, relu, pool in zip(reversed(self.convs), reversed(self.relus), reversed(self.pools)):
            d = conv.backward(relu.backward(pool.backward(d)))
        if self.config.l2_lambda:
            lam2 = self.dtype(2.0 * self.config.l2_lambda)
            for conv in self.convs:
                conv.dw += lam2 * conv.w
        return d[:, :, 0]

    # -- inference ----------------------------------------------------------

    def predict_proba(self, x, batch_size=256):
        """Class probabilities, dropout disabled, rows summing to 1."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.config.input_len:
            raise ShapeError(f"expected input [N, {self.config.input_len}], got {x.shape}")
        chunks = []
        for start in range(0, x.shape[0], batch_size):
            logits = self.forward(x[start : start + batch_size], train=False)
            chunks.append(softmax(logits.astype(np.float64)))
        return np.concatenate(chunks) if chunks else np.empty((0, self.config.num_classes))

    def predict_class(self, x, batch_size=256):
        """Argmax class per row; exact ties resolve to the lowest index."""
        return self.predict_proba(x, batch_size).argmax(axis=1)


def build_model(config: ModelConfig, dtype=np.float32) -> Model:
    return Model(config, dtype)


def count_params(model: Model) -> int:
    return model.count_params()


# ---------------------------------------------------------------------------
# weight files: magic, version, config JSON, named float32 tensors, CRC32


def save_model(model: Model, path):
    cfg = dataclasses.asdict(model.config)
    cfg["conv_filters"] = list(cfg["conv_filters"])
    cfg_blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    parts = [WEIGHTS_MAGIC, struct.pack("<I", WEIGHTS_VERSION), struct.pack("<I", len(cfg_blob)), cfg_blob]
    tensors = model.named_params()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(body)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: file too short to be a weight file")
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{path}: checksum mismatch (file corrupt or truncated)")
    try:
        off = 4
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != WEIGHTS_VERSION:
            raise FormatError(f"{path}: unsupported weight-file version {version}")
        (cfg_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        cfg = json.loads(blob[off : off + cfg_len].decode("utf-8"))
        off += cfg_len
        cfg["conv_filters"] = tuple(cfg["conv_filters"])
        config = ModelConfig(**cfg)
        (n_tensors,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            tensors[name] = data.reshape(shape)
    except (struct.error, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed weight file ({exc})") from exc
    model = Model(config, dtype=np.float32)
    expected = model.named_params()
    if {n for n, _ in expected} != set(tensors):
        raise FormatError(f"{path}: tensor names do not match the configured architecture")
    for name, arr in expected:
        if tensors[name].shape != arr.shape:
            raise FormatError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    return model


def write_submission(path, sample_ids, probs):
    """Write probability rows in the challenge submission format."""
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[0] != len(sample_ids):
        raise ValueError("one probability row per sample id required")
    header = "Id," + ",".join(f"Prediction{i}" for i in range(1, probs.shape[1] + 1))
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for sid, row in zip(sample_ids, probs):
            fh.write(str(sid) + "," + ",".join(f"{p:.9f}" for p in row) + "\n")
