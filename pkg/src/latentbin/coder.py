"""Carry-less range coder with 32-bit state and byte-wise renormalization.

Symbols are coded against integer frequency tables whose total is
``2**precision``.  Binary flags take a single probability count, bypass bits
split the range in two and raw fields are sent as 16-bit literals.
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass

import numpy as np

from latentbin.models import DEFAULT_SUPPORT, _explicit_bits

DEFAULT_PRECISION = 16
_MASK = 0xFFFFFFFF
_TOP = 1 << 24
_BOT = 1 << 16


def quantize_probability(p1: float, precision: int = DEFAULT_PRECISION) -> int:
    """Count for bit 1 out of ``2**precision``, kept inside ``[1, 2**precision - 1]``."""
    total = 1 << precision
    count = int(round(p1 * total))
    return min(max(count, 1), total - 1)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self._finished = False

    def _normalize(self):
        low, rng, out = self.low, self.range, self.out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            out.append(low >> 24)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low, self.range = low, rng

    def encode(self, start: int, size: int, total_bits: int):
        """Code the interval ``[start, start + size)`` out of ``2**total_bits``."""
        if self._finished:
            raise RuntimeError("encoder already finished")
        r = self.range >> total_bits
        self.low += start * r
        self.range = size * r
        self._normalize()

    def encode_bit(self, bit: int, p1_count: int, precision: int = DEFAULT_PRECISION):
        # Bit 0 occupies the low part of the range, bit 1 the top p1_count cells.
        c0 = (1 << precision) - p1_count
        if bit:
            self.encode(c0, p1_count, precision)
        else:
            self.encode(0, c0, precision)

    def encode_bypass(self, bit: int):
        self.encode(1 if bit else 0, 1, 1)

    def encode_raw(self, value: int, nbits: int = 32):
        if value < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        while nbits > 0:
            chunk = min(nbits, 16)
            nbits -= chunk
            self.encode((value >> nbits) & ((1 << chunk) - 1), 1, chunk)

    def encode_symbol(self, index: int, cdf: "QuantizedCdf"):
        cum = cdf.cum
        self.encode(cum[index], cum[index + 1] - cum[index], cdf.precision)

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(4):
                self.out.append(self.low >> 24)
                self.low = (self.low << 8) & _MASK
            self._finished = True
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise EOFError("decode past end of stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _normalize(self):
        low, rng, code = self.low, self.range, self.code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = -low & (_BOT - 1)
            else:
                break
            code = ((code << 8) & _MASK) | self._byte()
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self.low, self.range, self.code = low, rng, code

    def _target(self, total_bits: int) -> tuple[int, int]:
        r = self.range >> total_bits
        value = ((self.code - self.low) & _MASK) // r
        if value >> total_bits:
            raise ValueError("corrupt stream: target outside the coding range")
        return value, r

    def _update(self, start: int, size: int, r: int):
        self.low += start * r
        self.range = size * r
        self._normalize()

    def decode_bit(self, p1_count: int, precision: int = DEFAULT_PRECISION) -> int:
        c0 = (1 << precision) - p1_count
        value, r = self._target(precision)
        if value >= c0:
            self._update(c0, p1_count, r)
            return 1
        self._update(0, c0, r)
        return 0

    def decode_bypass(self) -> int:
        value, r = self._target(1)
        self._update(value, 1, r)
        return value

    def decode_raw(self, nbits: int = 32) -> int:
        value = 0
        while nbits > 0:
            chunk = min(nbits, 16)
            nbits -= chunk
            v, r = self._target(chunk)
            self._update(v, 1, r)
            value = (value << chunk) | v
        return value

    def decode_symbol(self, cdf: "QuantizedCdf") -> int:
        value, r = self._target(cdf.precision)
        cum = cdf.cum
        index = bisect.bisect_right(cum, value) - 1
        self._update(cum[index], cum[index + 1] - cum[index], r)
        return index


@dataclass(frozen=True)
class QuantizedCdf:
    """Fixed-point cumulative table; symbol ``i`` owns ``[cum[i], cum[i+1])``.

    The last symbol is the escape symbol when ``has_escape`` is set.
    """

    cum: tuple
    precision: int = DEFAULT_PRECISION
    has_escape: bool = True

    def __post_init__(self):
        cum = self.cum
        if cum[0] != 0 or cum[-1] != 1 << self.precision:
            raise ValueError("cdf must start at 0 and end at 2**precision")
        if any(b <= a for a, b in zip(cum, cum[1:])):
            raise ValueError("cdf has a zero-width symbol")

    @property
    def n_symbols(self) -> int:
        return len(self.cum) - 1

    @property
    def escape(self) -> int:
        return self.n_symbols - 1

    def counts(self) -> np.ndarray:
        return np.diff(np.asarray(self.cum, dtype=np.int64))

    def code_lengths(self) -> np.ndarray:
        """Implied code length of every symbol in bits."""
        return self.precision - np.log2(self.counts())


def pmf_to_quantized_cdf(probs, precision: int = DEFAULT_PRECISION, has_escape: bool = True) -> QuantizedCdf:
    """Integer frequencies summing to ``2**precision``, every cell at least one.

    Cells are rounded to the nearest count, then single counts are moved
    greedily wherever they change the expected code length the least.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.size
    total = 1 << precision
    if n < 1:
        raise ValueError("empty pmf")
    if n > total:
        raise ValueError(f"precision {precision} cannot give {n} symbols a nonzero cell")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)) or probs.sum() <= 0:
        raise ValueError("pmf must be nonnegative and finite with positive mass")
    probs = probs / probs.sum()
    counts = np.maximum(np.round(probs * total).astype(np.int64), 1)
    diff = total - int(counts.sum())
    if diff:
        _settle(counts, probs, diff)
    cum = np.concatenate([[0], np.cumsum(counts)])
    return QuantizedCdf(tuple(int(c) for c in cum), precision, has_escape)


def _settle(counts, probs, diff):
    # Change in expected code length (nats) from adding or removing one count.
    sign = 1 if diff > 0 else -1

    def cost(j):
        c = counts[j]
        if sign < 0 and c <= 1:
            return math.inf
        return probs[j] * math.log(c / (c + sign))

    heap = [(cost(j), j) for j in range(counts.size) if probs[j] > 0 or sign > 0]
    heapq.heapify(heap)
    for _ in range(abs(diff)):
        _, j = heapq.heappop(heap)
        counts[j] += sign
        heapq.heappush(heap, (cost(j), j))


def tail_probabilities(sigma: float, K: int = DEFAULT_SUPPORT, step: float = 1.0) -> np.ndarray:
    """Conditional magnitudes ``2..K`` followed by the escape mass beyond ``K``."""
    ks = np.arange(2, K + 1)
    cond = np.exp2(-_explicit_bits(ks, sigma, step))
    escape = math.exp(-(K - 1) * step / sigma)
    return np.append(cond, escape)


def build_tail_cdf(sigma: float, K: int = DEFAULT_SUPPORT, precision: int = DEFAULT_PRECISION,
                   step: float = 1.0) -> QuantizedCdf:
    """Quantized table for explicit magnitudes ``2..K`` plus an escape symbol."""
    if K < 2:
        raise ValueError("tail support cap K must be at least 2")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return pmf_to_quantized_cdf(tail_probabilities(sigma, K, step), precision)
