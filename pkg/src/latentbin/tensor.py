"""Latent tensors, the centered uniform quantizer and the LTNS file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from latentbin.errors import FormatError

TENSOR_MAGIC = b"LTNS"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sB3I")
# Element count above which a header is rejected rather than allocated.
MAX_ELEMENTS = 1 << 31

ArrayLike = Union[np.ndarray, float, int]


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    return dims


@dataclass(frozen=True)
class LatentTensor:
    """Real-valued latents of shape (channels, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"latent tensor must be 3-D, got shape {values.shape}")
        _check_dims(values.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("latent tensor contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, LatentTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer symbols of shape (channels, height, width)."""

    values: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.values)
        values = raw.astype(np.int64)
        if raw.dtype.kind == "f" and not np.array_equal(values, raw):
            raise ValueError("quantized tensor values must be integers")
        if values.ndim != 3:
            raise ValueError(f"quantized tensor must be 3-D, got shape {values.shape}")
        _check_dims(values.shape)
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)


def broadcast_center(center: ArrayLike, dims) -> np.ndarray:
    """Broadcast a scalar, per-channel or per-element value to ``dims``.

    A 1-D array of length C is read as one value per channel.
    """
    dims = _check_dims(dims)
    arr = np.asarray(center, dtype=np.float64)
    if arr.ndim == 0 or arr.size == 1:
        return np.full(dims, float(arr.reshape(-1)[0]))
    if arr.ndim == 1:
        if arr.shape[0] != dims[0]:
            raise ValueError(f"per-channel values have length {arr.shape[0]}, expected {dims[0]}")
        return np.broadcast_to(arr[:, None, None], dims).copy()
    if arr.shape == dims:
        return arr.copy()
    raise ValueError(f"cannot broadcast values of shape {arr.shape} to {dims}")


@dataclass(frozen=True)
class QuantSpec:
    """Quantizer step and center (scalar, per channel or per element)."""

    step: float = 1.0
    center: ArrayLike = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.step) and self.step > 0):
            raise ValueError(f"quantization step must be positive, got {self.step}")


def round_half_away(x: ArrayLike) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize(y: LatentTensor, spec: QuantSpec = QuantSpec()) -> QuantizedTensor:
    center = broadcast_center(spec.center, y.dims)
    q = round_half_away((y.values - center) / spec.step)
    return QuantizedTensor(q.astype(np.int64))


def dequantize(q: QuantizedTensor, spec: QuantSpec = QuantSpec()) -> LatentTensor:
    center = broadcast_center(spec.center, q.dims)
    return LatentTensor(center + spec.step * q.values)


def add_uniform_noise(y: LatentTensor, seed: int, step: Optional[float] = None) -> LatentTensor:
    """Return ``y + u`` with ``u`` i.i.d. uniform on (-step/2, step/2).

    Noise is drawn from numpy's PCG64 generator seeded with ``seed``.
    """
    width = 1.0 if step is None else float(step)
    if width <= 0:
        raise ValueError(f"noise step must be positive, got {step}")
    rng = np.random.default_rng(seed)
    return LatentTensor(y.values + width * uniform_noise(rng, y.dims))


def uniform_noise(rng: np.random.Generator, shape) -> np.ndarray:
    # Open interval: reject the single endpoint random() can return.
    u = rng.random(shape) - 0.5
    u[u == -0.5] = 0.0
    return u


def tensor_to_bytes(t: LatentTensor) -> bytes:
    c, h, w = t.dims
    payload = t.values.astype("<f4").tobytes()
    return _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, c, h, w) + payload


def tensor_from_bytes(data: bytes) -> LatentTensor:
    if len(data) < _HEADER.size:
        if len(data) >= 4 and data[:4] != TENSOR_MAGIC:
            raise FormatError("bad magic")
        raise FormatError("truncated tensor header")
    magic, version, c, h, w = _HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise FormatError("bad magic")
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if min(c, h, w) == 0:
        raise FormatError("zero dimension in tensor header")
    count = c * h * w
    if count > MAX_ELEMENTS:
        raise FormatError(f"dim overflow: {c}x{h}x{w} elements")
    expected = _HEADER.size + 4 * count
    if len(data) < expected:
        raise FormatError(f"truncated tensor payload ({len(data)} of {expected} bytes)")
    if len(data) > expected:
        raise FormatError("trailing bytes after tensor payload")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return LatentTensor(values.astype(np.float64).reshape(c, h, w))


def write_tensor(t: LatentTensor, path: Union[str, Path]) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path: Union[str, Path]) -> LatentTensor:
    return tensor_from_bytes(Path(path).read_bytes())
