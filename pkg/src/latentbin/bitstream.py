"""Entropy coding of whole quantized tensors and the LBIN container.

Binary model, per element::

    G0 flag            (p_g0)
    G1 flag            (p_g1)        if |q| >= 1
    sign               (bypass)      if |q| >= 1
    magnitude 2..K     (tail table)  if |q| >= 2
    raw 32-bit |q|                   if |q| > K   (after the escape symbol)

Baselines code ``q - c`` (``c`` the lattice point nearest ``mu``) with one
table over ``[-K, K]`` plus an escape symbol, followed by a bypass sign and a
raw 32-bit magnitude when escaped.

Model parameters and the step pass through float32 before any table is
built, so the encoder sees exactly what the decoder reads from the header.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from latentbin.coder import (
    DEFAULT_PRECISION,
    QuantizedCdf,
    RangeDecoder,
    RangeEncoder,
    build_tail_cdf,
    pmf_to_quantized_cdf,
    quantize_probability,
)
from latentbin.errors import FormatError
from latentbin.models import (
    DEFAULT_SUPPORT,
    ModelKind,
    ParameterSet,
    baseline_center,
    continuous_pmf,
    PARAM_CLASSES,
)
from latentbin.tensor import QuantizedTensor

STREAM_MAGIC = b"LBIN"
STREAM_VERSION = 1
_PREFIX = struct.Struct("<4sBB3If")
_TRAILER = struct.Struct("<II")
RAW_BITS = 32


@dataclass
class Bitstream:
    kind: ModelKind
    dims: tuple
    step: float
    params: ParameterSet
    payload: bytes

    @property
    def crc(self) -> int:
        return zlib.crc32(self.payload) & 0xFFFFFFFF

    def to_bytes(self) -> bytes:
        c, h, w = self.dims
        return (
            _PREFIX.pack(STREAM_MAGIC, STREAM_VERSION, int(self.kind), c, h, w, self.step)
            + self.params.to_bytes()
            + _TRAILER.pack(len(self.payload), self.crc)
            + self.payload
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _PREFIX.size:
            if len(data) >= 4 and data[:4] != STREAM_MAGIC:
                raise FormatError("bad magic")
            raise FormatError("truncated bitstream header")
        magic, version, kind, c, h, w, step = _PREFIX.unpack_from(data)
        if magic != STREAM_MAGIC:
            raise FormatError("bad magic")
        if version != STREAM_VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        try:
            kind = ModelKind(kind)
        except ValueError:
            raise FormatError(f"unknown model kind {kind}") from None
        if min(c, h, w) == 0:
            raise FormatError("zero dimension in bitstream header")
        if not step > 0:
            raise FormatError("non-positive quantization step")
        params, offset = ParameterSet.from_bytes(data, _PREFIX.size)
        if params.kind is not kind:
            raise FormatError("model kind of header and parameter block differ")
        if len(data) < offset + _TRAILER.size:
            raise FormatError("truncated bitstream trailer")
        length, crc = _TRAILER.unpack_from(data, offset)
        start = offset + _TRAILER.size
        payload = bytes(data[start:start + length])
        if len(payload) != length:
            raise FormatError("truncated payload")
        if start + length != len(data):
            raise FormatError("trailing bytes after payload")
        stream = cls(kind, (c, h, w), float(step), params, payload)
        if stream.crc != crc:
            raise FormatError("checksum mismatch")
        return stream


class _TableCache:
    """Quantized tables keyed by the parameter values that determine them."""

    def __init__(self, builder):
        self.builder = builder
        self.tables = {}

    def __call__(self, *key):
        table = self.tables.get(key)
        if table is None:
            table = self.tables[key] = self.builder(*key)
        return table


def _baseline_table(kind, K, precision, step):
    cls = PARAM_CLASSES[kind]

    def build(mu, sigma):
        pmf = continuous_pmf(cls(mu, sigma), K, step)
        return pmf_to_quantized_cdf(np.append(pmf.probs, pmf.tail_mass), precision)

    return build


def _flat_params(params: ParameterSet, dims):
    expanded = params.expand(dims)
    return [np.asarray(getattr(expanded, n), dtype=np.float64).reshape(-1).tolist()
            for n in ("mu", "sigma", "p_g0", "p_g1")[: params.kind.n_fields]]


def _check_magnitude(m):
    if m >> RAW_BITS:
        raise ValueError(f"magnitude {m} exceeds the {RAW_BITS}-bit escape field")


def encode_tensor(q: QuantizedTensor, params: ParameterSet, step: float = 1.0,
                  K: int = DEFAULT_SUPPORT, precision: int = DEFAULT_PRECISION) -> Bitstream:
    """Entropy-code ``q`` under ``params``.

    For the binary model ``q`` holds centered symbols ``Q((y - mu) / step)``;
    for the baselines it holds ``Q(y / step)``.
    """
    if K < 2:
        raise ValueError("support cap K must be at least 2")
    params = params.as_float32()
    step = float(np.float32(step))
    if not step > 0:
        raise ValueError("step must be positive")
    fields = _flat_params(params, q.dims)
    symbols = q.values.reshape(-1).tolist()
    enc = RangeEncoder()
    if params.kind is ModelKind.BINARY:
        _encode_binary(enc, symbols, fields, step, K, precision)
    else:
        _encode_baseline(enc, symbols, fields, params.kind, step, K, precision)
    return Bitstream(params.kind, q.dims, step, params, enc.finish())


def _encode_binary(enc, symbols, fields, step, K, precision):
    _, sigmas, p0s, p1s = fields
    tail = _TableCache(lambda s: build_tail_cdf(s, K, precision, step))
    flag = _TableCache(lambda p: quantize_probability(p, precision))
    for v, sigma, p0, p1 in zip(symbols, sigmas, p0s, p1s):
        m = -v if v < 0 else v
        enc.encode_bit(m != 0, flag(p0), precision)
        if m == 0:
            continue
        enc.encode_bit(m >= 2, flag(p1), precision)
        enc.encode_bypass(v < 0)
        if m < 2:
            continue
        table = tail(sigma)
        if m <= K:
            enc.encode_symbol(m - 2, table)
        else:
            _check_magnitude(m)
            enc.encode_symbol(table.escape, table)
            enc.encode_raw(m, RAW_BITS)


def _encode_baseline(enc, symbols, fields, kind, step, K, precision):
    mus, sigmas = fields
    tables = _TableCache(_baseline_table(kind, K, precision, step))
    centers = _TableCache(lambda mu: baseline_center(mu, step))
    for v, mu, sigma in zip(symbols, mus, sigmas):
        table = tables(mu, sigma)
        s = v - centers(mu)
        if -K <= s <= K:
            enc.encode_symbol(s + K, table)
        else:
            m = -s if s < 0 else s
            _check_magnitude(m)
            enc.encode_symbol(table.escape, table)
            enc.encode_bypass(s < 0)
            enc.encode_raw(m, RAW_BITS)


def decode_tensor(stream, K: int = DEFAULT_SUPPORT, precision: int = DEFAULT_PRECISION) -> QuantizedTensor:
    """Inverse of :func:`encode_tensor`; ``stream`` is a Bitstream or its bytes.

    ``K`` and ``precision`` must match the values used when encoding.
    """
    if not isinstance(stream, Bitstream):
        stream = Bitstream.from_bytes(stream)
    dims = tuple(stream.dims)
    fields = _flat_params(stream.params, dims)
    n = dims[0] * dims[1] * dims[2]
    dec = RangeDecoder(stream.payload)
    try:
        if stream.kind is ModelKind.BINARY:
            out = _decode_binary(dec, n, fields, stream.step, K, precision)
        else:
            out = _decode_baseline(dec, n, fields, stream.kind, stream.step, K, precision)
    except (EOFError, ValueError) as exc:
        raise FormatError(f"corrupt stream: {exc}") from None
    return QuantizedTensor(np.array(out, dtype=np.int64).reshape(dims))


def _decode_binary(dec, n, fields, step, K, precision):
    _, sigmas, p0s, p1s = fields
    tail = _TableCache(lambda s: build_tail_cdf(s, K, precision, step))
    flag = _TableCache(lambda p: quantize_probability(p, precision))
    out = [0] * n
    for i in range(n):
        if not dec.decode_bit(flag(p0s[i]), precision):
            continue
        big = dec.decode_bit(flag(p1s[i]), precision)
        negative = dec.decode_bypass()
        m = 1
        if big:
            table = tail(sigmas[i])
            idx = dec.decode_symbol(table)
            m = dec.decode_raw(RAW_BITS) if idx == table.escape else idx + 2
        out[i] = -m if negative else m
    return out


def _decode_baseline(dec, n, fields, kind, step, K, precision):
    mus, sigmas = fields
    tables = _TableCache(_baseline_table(kind, K, precision, step))
    centers = _TableCache(lambda mu: baseline_center(mu, step))
    out = [0] * n
    for i in range(n):
        table = tables(mus[i], sigmas[i])
        idx = dec.decode_symbol(table)
        if idx == table.escape:
            negative = dec.decode_bypass()
            m = dec.decode_raw(RAW_BITS)
            s = -m if negative else m
        else:
            s = idx - K
        out[i] = s + centers(mus[i])
    return out


def write_bitstream(stream: Bitstream, path) -> None:
    Path(path).write_bytes(stream.to_bytes())


def read_bitstream(path) -> Bitstream:
    return Bitstream.from_bytes(Path(path).read_bytes())
