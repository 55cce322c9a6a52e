"""8-bit blockwise quantization of optimizer state.

A tensor is flattened row-major, cut into blocks of ``block_size`` elements
(the last block may be short), and each block is normalized by its absmax
and snapped to the nearest entry of a 256-value codebook.

Two codebooks are provided:

``linear``
    The uniform grid ``i/127`` for ``i = -127..127`` plus a reserved slot
    holding ``-1`` at index 0 (the int8 value -128).
``dynamic``
    Exponent/fraction table: seven decades of linearly spaced fractions,
    denser near zero, plus ``0`` and ``+1``. It has no ``-1`` entry.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._backend import kernels
from .errors import DataError

LINEAR = "linear"
DYNAMIC = "dynamic"
MODES = (LINEAR, DYNAMIC)
DEFAULT_BLOCK_SIZE = 2048

_MAGIC = b"Q8MU"
_HEADER = struct.Struct("<4sBIII")


@dataclass(frozen=True)
class Codebook:
    mode: str
    values: np.ndarray
    # canon[k]: smallest index holding the same value as index k
    canon: np.ndarray
    zero_index: int

    def __len__(self) -> int:
        return len(self.values)


def _linear_values() -> np.ndarray:
    return np.array([-1.0] + [i / 127 for i in range(-127, 128)])


def _dynamic_values() -> np.ndarray:
    vals = [0.0, 1.0]
    for level in range(7):
        edges = np.linspace(0.1, 1.0, 2**level + 1)
        mids = (edges[:-1] + edges[1:]) / 2 * 10.0 ** (level - 6)
        vals.extend(mids)
        vals.extend(-mids)
    return np.sort(np.array(vals))


@functools.lru_cache(maxsize=None)
def build_codebook(mode: str) -> Codebook:
    if mode == LINEAR:
        values = _linear_values()
    elif mode == DYNAMIC:
        values = _dynamic_values()
    else:
        raise ValueError(f"unknown codebook mode {mode!r}; expected one of {MODES}")
    assert values.shape == (256,) and np.all(np.diff(values) >= 0)
    values.setflags(write=False)
    canon = np.arange(256, dtype=np.intp)
    for k in range(1, 256):
        if values[k] == values[k - 1]:
            canon[k] = canon[k - 1]
    canon.setflags(write=False)
    zero_index = int(np.flatnonzero(values == 0.0)[0])
    return Codebook(mode=mode, values=values, canon=canon, zero_index=zero_index)


def _codebook(cb) -> Codebook:
    return cb if isinstance(cb, Codebook) else build_codebook(cb)


def _finite_flat(x) -> np.ndarray:
    flat = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1))
    if not np.isfinite(flat).all():
        raise DataError("quantize: input contains NaN or Inf")
    return flat


def quantize_block(x, cb) -> tuple[np.ndarray, float]:
    """Quantize one block: returns (codes, absmax scale)."""
    cb = _codebook(cb)
    flat = _finite_flat(x)
    if flat.size == 0:
        raise DataError("quantize_block: empty block")
    codes, scales = kernels.quantize_blocks(flat, flat.size, cb.values, cb.canon, cb.zero_index)
    return codes, float(scales[0])


def dequantize_block(codes, scale: float, cb) -> np.ndarray:
    cb = _codebook(cb)
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 255):
        raise DataError("dequantize_block: code out of range")
    return float(scale) * cb.values[codes.astype(np.intp)]


@dataclass
class QuantizedBuffer:
    codes: np.ndarray
    scales: np.ndarray
    block_size: int
    mode: str
    shape: tuple

    @property
    def nblocks(self) -> int:
        return len(self.scales)

    @property
    def nbytes(self) -> int:
        """Storage cost: one byte per code, 32-bit scale per block."""
        return self.codes.size + 4 * self.nblocks


def quantize_tensor(m, block_size: int = DEFAULT_BLOCK_SIZE, cb=DYNAMIC) -> QuantizedBuffer:
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    cb = _codebook(cb)
    arr = np.asarray(m, dtype=np.float64)
    flat = _finite_flat(arr)
    if flat.size == 0:
        return QuantizedBuffer(np.zeros(0, np.uint8), np.zeros(0), block_size, cb.mode, arr.shape)
    codes, scales = kernels.quantize_blocks(flat, block_size, cb.values, cb.canon, cb.zero_index)
    return QuantizedBuffer(codes, scales, block_size, cb.mode, arr.shape)


def dequantize_tensor(qb: QuantizedBuffer) -> np.ndarray:
    cb = build_codebook(qb.mode)
    if qb.codes.size == 0:
        return np.zeros(qb.shape)
    flat = kernels.dequantize_blocks(
        np.ascontiguousarray(qb.codes, dtype=np.uint8),
        np.ascontiguousarray(qb.scales, dtype=np.float64),
        qb.block_size,
        cb.values,
    )
    return flat.reshape(qb.shape)


class ErrorStats(NamedTuple):
    max_abs_err: float
    mean_abs_err: float
    max_rel_err_nonzero: float


def roundtrip_error_stats(m, block_size: int = DEFAULT_BLOCK_SIZE, cb=DYNAMIC) -> ErrorStats:
    x = np.asarray(m, dtype=np.float64)
    err = np.abs(dequantize_tensor(quantize_tensor(x, block_size, cb)) - x)
    if err.size == 0:
        return ErrorStats(0.0, 0.0, 0.0)
    nz = x != 0
    rel = float(np.max(err[nz] / np.abs(x[nz]))) if nz.any() else 0.0
    return ErrorStats(float(err.max()), float(err.mean()), rel)


# ---- serialization --------------------------------------------------------


def dump_buffer(qb: QuantizedBuffer) -> bytes:
    """Little-endian: magic, u8 mode, u32 rows, u32 cols, u32 block_size, codes, f32 scales."""
    if len(qb.shape) == 2:
        rows, cols = qb.shape
    elif len(qb.shape) == 1:
        rows, cols = 1, qb.shape[0]
    else:
        raise ValueError(f"only 1-D/2-D buffers serialize, got shape {qb.shape}")
    header = _HEADER.pack(_MAGIC, MODES.index(qb.mode), rows, cols, qb.block_size)
    return header + qb.codes.astype(np.uint8).tobytes() + qb.scales.astype("<f4").tobytes()


def load_buffer(data: bytes) -> QuantizedBuffer:
    if len(data) < _HEADER.size:
        raise DataError("truncated quantized buffer")
    magic, mode, rows, cols, block_size = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise DataError(f"bad magic {magic!r}")
    if mode >= len(MODES) or block_size < 1:
        raise DataError("corrupt quantized buffer header")
    n = rows * cols
    nblocks = -(-n // block_size)
    expected = _HEADER.size + n + 4 * nblocks
    if len(data) != expected:
        raise DataError(f"quantized buffer size {len(data)} != expected {expected}")
    off = _HEADER.size
    codes = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
    scales = np.frombuffer(data, dtype="<f4", count=nblocks, offset=off + n).astype(np.float64)
    return QuantizedBuffer(codes, scales, block_size, MODES[mode], (rows, cols))


def write_buffer(path, qb: QuantizedBuffer) -> None:
    Path(path).write_bytes(dump_buffer(qb))


def read_buffer(path) -> QuantizedBuffer:
    return load_buffer(Path(path).read_bytes())


# ---- quantizers plugged into optimizers ----------------------------------


class BlockQuantizer:
    """Stores state as a :class:`QuantizedBuffer`."""

    def __init__(self, mode: str = DYNAMIC, block_size: int = DEFAULT_BLOCK_SIZE):
        self.codebook = build_codebook(mode)
        self.mode = mode
        self.block_size = block_size

    def quantize(self, x) -> QuantizedBuffer:
        return quantize_tensor(x, self.block_size, self.codebook)

    def dequantize(self, buf: QuantizedBuffer) -> np.ndarray:
        return dequantize_tensor(buf)

    def zeros(self, shape) -> QuantizedBuffer:
        return self.quantize(np.zeros(shape))

    def __repr__(self) -> str:
        return f"BlockQuantizer({self.mode!r}, block_size={self.block_size})"


class PassThroughQuantizer:
    """Identity quantizer: state stays a full-precision array."""

    mode = None

    def quantize(self, x) -> np.ndarray:
        return np.array(x, dtype=np.float64, copy=True)

    def dequantize(self, buf) -> np.ndarray:
        return np.array(buf, dtype=np.float64, copy=True)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape)

    def __repr__(self) -> str:
        return "PassThroughQuantizer()"


def linear_q(x) -> np.ndarray:
    """Per-tensor linear round trip (one block covering the whole tensor)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return dequantize_tensor(quantize_tensor(x, x.size, LINEAR))
