"""Scale variable-length byte sequences to a fixed-length 1D model input.

Each sample is treated as a one-dimensional greyscale signal sampled at
integer positions and rescaled to ``TARGET_LEN`` values with endpoint-aligned
piecewise-linear interpolation. Values stay in the raw 0..255 range (the
models consume unnormalized inputs). An area-averaging mode exists behind a
flag; linear is the pinned default.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySampleError, FormatError
from .ingest import ByteSequence

TARGET_LEN = 10_000

CACHE_MAGIC = b"BC1D"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIII")  # magic, version, length, reserved


@dataclass
class ResampledSequence:
    """Fixed-length vector of real values in [0, 255], the model input."""

    sample_id: str
    values: np.ndarray  # float32, 1-D

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("values must be a non-empty 1-D vector")
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < 0.0 or hi > 255.0:
            raise ValueError(f"values outside [0, 255]: min={lo}, max={hi}")


def _linear(y: np.ndarray, m: int) -> np.ndarray:
    # Endpoint-aligned: output j sits at source position j*(n-1)/(m-1).
    # The position is decomposed exactly with integer divmod so grid hits are
    # exact and the [0,255]->4 case lands on 85/170 without rounding residue.
    n = y.size
    if n == m:
        return y.copy()
    if m == 1:
        return y[:1].copy()
    num = np.arange(m, dtype=np.int64) * (n - 1)
    den = m - 1
    q, rem = np.divmod(num, den)
    hi = np.minimum(q + 1, n - 1)
    remf = rem.astype(np.float64)
    return (y[q] * (den - remf) + y[hi] * remf) / den


def _area(y: np.ndarray, m: int) -> np.ndarray:
    # Box average of the piecewise-constant signal over m equal spans.
    # Fractional span edges j*n/m are decomposed exactly like in _linear.
    n = y.size
    if n == m:
        return y.copy()
    csum = np.concatenate(([0.0], np.cumsum(y, dtype=np.float64)))
    j = np.arange(m + 1, dtype=np.int64)
    q, rem = np.divmod(j * n, m)
    integral = csum[q] + np.where(q < n, y[np.minimum(q, n - 1)], 0.0) * (rem / m)
    return (integral[1:] - integral[:-1]) * (m / n)


def resample_linear(
    seq: ByteSequence, target_len: int = TARGET_LEN, method: str = "linear"
) -> ResampledSequence:
    """Resample a byte sequence to target_len values in [0, 255].

    method="linear" (default) is endpoint-aligned piecewise-linear
    interpolation: identical input/output when lengths match, bounded by the
    input min/max, monotone for monotone inputs. method="area" box-averages
    instead.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    if seq.data.size == 0:
        raise EmptySampleError(f"sample {seq.sample_id!r} is empty")
    y = seq.data.astype(np.float64)
    if method == "linear":
        out = _linear(y, target_len)
    elif method == "area":
        out = _area(y, target_len)
    else:
        raise ValueError(f"unknown resample method {method!r}")
    return ResampledSequence(seq.sample_id, out.astype(np.float32))


def export_pgm(seq: ResampledSequence, width: int) -> bytes:
    """Render the sequence as a binary (P5) greyscale image, one byte per pixel.

    Rows = ceil(len/width); the final partial row is zero-padded. Values are
    rounded to the nearest integer.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    vals = np.rint(seq.values).clip(0, 255).astype(np.uint8)
    rows = -(-vals.size // width)
    padded = np.zeros(rows * width, dtype=np.uint8)
    padded[: vals.size] = vals
    header = f"P5\n{width} {rows}\n255\n".encode("ascii")
    return header + padded.tobytes()


def cache_path(cache_dir, sample_id: str) -> Path:
    return Path(cache_dir) / f"{sample_id}.bc1d"


def write_cache(cache_dir, seq: ResampledSequence) -> Path:
    """Persist one resampled sequence: 16-byte header then little-endian float32."""
    path = cache_path(cache_dir, seq.sample_id)
    payload = np.ascontiguousarray(seq.values, dtype="<f4").tobytes()
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, seq.values.size, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)
    return path


def read_cache(path) -> ResampledSequence:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _CACHE_HEADER.size:
        raise FormatError(f"{path}: truncated cache header")
    magic, version, length, _ = _CACHE_HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    payload = blob[_CACHE_HEADER.size :]
    if len(payload) != 4 * length:
        raise FormatError(f"{path}: payload holds {len(payload) // 4} values, header says {length}")
    values = np.frombuffer(payload, dtype="<f4")
    return ResampledSequence(path.stem, values)


def resample_cached(seq: ByteSequence, cache_dir=None, target_len: int = TARGET_LEN,
                    method: str = "linear") -> ResampledSequence:
    """Resample with an optional on-disk cache keyed by sample_id."""
    if cache_dir is not None:
        path = cache_path(cache_dir, seq.sample_id)
        if path.exists():
            return read_cache(path)
    out = resample_linear(seq, target_len, method)
    if cache_dir is not None:
        write_cache(cache_dir, out)
    return out
