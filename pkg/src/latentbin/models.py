"""Discrete probability models for quantized latents.

Three models are provided:

* discretized Gaussian and discretized Laplace baselines, whose mass at a
  lattice point is the density integrated over one quantization cell;
* the binary flag model, which signals a centered integer with a
  "greater than zero" flag, a "greater than one" flag, an equiprobable sign
  and, for magnitudes of two or more, an explicit value drawn from a
  renormalized discretized Laplace tail.

All code lengths are in bits and all functions broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import special

from latentbin.errors import FormatError
from latentbin.tensor import round_half_away

EPS = 2.0**-16
DEFAULT_SUPPORT = 255
LN2 = math.log(2.0)

PARAM_MAGIC = b"LPRM"
PARAM_VERSION = 1
_PARAM_HEADER = struct.Struct("<4sBBBI")


class ModelKind(enum.IntEnum):
    GAUSSIAN = 0
    LAPLACE = 1
    BINARY = 2

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown model kind {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}") from None

    @property
    def n_fields(self) -> int:
        return 4 if self is ModelKind.BINARY else 2


class Granularity(enum.IntEnum):
    TENSOR = 0
    CHANNEL = 1
    ELEMENT = 2

    @classmethod
    def parse(cls, value) -> "Granularity":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            aliases = {"tensor": 0, "per-tensor": 0, "channel": 1, "per-channel": 1,
                       "element": 2, "per-element": 2}
            if value.lower() not in aliases:
                raise ValueError(f"unknown granularity {value!r}")
            return cls(aliases[value.lower()])
        return cls(int(value))


def _positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return value


def _probability(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < EPS) or np.any(arr > 1 - EPS):
        raise ValueError(f"{name} must lie in [{EPS}, 1 - {EPS}]")
    return value


@dataclass(frozen=True)
class GaussianParams:
    mu: Union[float, np.ndarray]
    sigma: Union[float, np.ndarray]

    kind = ModelKind.GAUSSIAN

    def __post_init__(self):
        _positive("sigma", self.sigma)


@dataclass(frozen=True)
class LaplaceParams:
    mu: Union[float, np.ndarray]
    sigma: Union[float, np.ndarray]  # scale b

    kind = ModelKind.LAPLACE

    def __post_init__(self):
        _positive("sigma", self.sigma)


@dataclass(frozen=True)
class BinaryModelParams:
    """Parameters of the binary flag model for one or many latents.

    ``mu`` centers the latent before quantization, ``sigma`` is the Laplace
    scale of the explicit tail and ``p_g0``/``p_g1`` are the probabilities of
    the magnitude exceeding zero and one.
    """

    mu: Union[float, np.ndarray]
    sigma: Union[float, np.ndarray]
    p_g0: Union[float, np.ndarray]
    p_g1: Union[float, np.ndarray]

    kind = ModelKind.BINARY

    def __post_init__(self):
        _positive("sigma", self.sigma)
        _probability("p_g0", self.p_g0)
        _probability("p_g1", self.p_g1)


ModelParams = Union[GaussianParams, LaplaceParams, BinaryModelParams]
PARAM_CLASSES = {
    ModelKind.GAUSSIAN: GaussianParams,
    ModelKind.LAPLACE: LaplaceParams,
    ModelKind.BINARY: BinaryModelParams,
}


def clamp_probability(p):
    return np.clip(p, EPS, 1.0 - EPS)


@dataclass
class DiscretePmf:
    """Probabilities of the integers ``lo .. lo + len(probs) - 1``.

    ``tail_mass`` is the probability of every integer outside that range.
    """

    lo: int
    probs: np.ndarray
    tail_mass: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + len(self.probs))

    @property
    def total(self) -> float:
        return float(math.fsum(self.probs)) + self.tail_mass

    def prob(self, k: int) -> float:
        idx = k - self.lo
        if 0 <= idx < len(self.probs):
            return float(self.probs[idx])
        raise KeyError(k)


# --- flags and explicit tail ------------------------------------------------


def flag_code_length(p, bit):
    """Cost in bits of sending ``bit`` when P(bit = 1) = ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)) or not np.all(np.isfinite(p)):
        raise ValueError("flag probability must lie strictly inside (0, 1)")
    bit = np.asarray(bit)
    if not np.all((bit == 0) | (bit == 1)):
        raise ValueError("flag value must be 0 or 1")
    out = np.where(bit == 1, -np.log2(p), -np.log1p(-p) / LN2)
    return out[()] if out.ndim == 0 else out


def _tail_log2_norm(scale):
    # -log2(1 - exp(-1/scale)): cost of the smallest explicit magnitude.
    return -np.log(-np.expm1(-1.0 / scale)) / LN2


def _explicit_bits(k, sigma, step=1.0):
    # Unchecked form; ``k`` may hold values below 2 that callers mask out.
    scale = np.asarray(sigma, dtype=np.float64) / step
    return (np.asarray(k, dtype=np.float64) - 2.0) / (scale * LN2) + _tail_log2_norm(scale)


def explicit_code_length(k, sigma, step=1.0):
    """Bits to send magnitude ``k >= 2`` given that it exceeds one.

    The magnitude follows a zero-mean Laplace density with scale ``sigma``,
    integrated over the cell of width ``step`` around ``k * step`` and
    renormalized by the mass outside the three central cells.  The
    renormalized law is geometric in ``k``, which gives the closed form used
    here::

        L_E(k) = (k - 2) * step / (sigma ln 2) - log2(1 - exp(-step / sigma))
    """
    k = np.asarray(k)
    if np.any(k < 2):
        raise ValueError("explicit magnitudes start at 2")
    _positive("sigma", sigma)
    if step <= 0:
        raise ValueError("step must be positive")
    out = _explicit_bits(k, sigma, step)
    return out[()] if out.ndim == 0 else out


def explicit_tail_probability(k, sigma, step=1.0):
    """P(|q| = k | |q| > 1), computed from the Laplace CDF directly."""
    k = np.asarray(k, dtype=np.float64)
    scale = np.asarray(sigma, dtype=np.float64) / step
    # Both cell edges lie on the positive side: F(x) = 1 - exp(-x/b)/2.
    cell = 0.5 * (np.exp(-(k - 0.5) / scale) - np.exp(-(k + 0.5) / scale))
    outside = np.exp(-1.5 / scale)
    return 2.0 * cell / outside


def binary_code_length(q, params: BinaryModelParams, step=1.0):
    """Code length of centered integers ``q`` under the binary flag model."""
    q = np.asarray(q)
    mag = np.abs(q)
    p0 = np.asarray(params.p_g0, dtype=np.float64)
    p1 = np.asarray(params.p_g1, dtype=np.float64)
    nonzero = -np.log2(p0)
    bits = np.where(
        mag == 0,
        -np.log1p(-p0) / LN2,
        nonzero
        + 1.0
        + np.where(
            mag == 1,
            -np.log1p(-p1) / LN2,
            -np.log2(p1) + _explicit_bits(np.maximum(mag, 2), params.sigma, step),
        ),
    )
    return bits[()] if bits.ndim == 0 else bits


def binary_pmf(params: BinaryModelParams, K: int = DEFAULT_SUPPORT, step=1.0) -> DiscretePmf:
    if K < 1:
        raise ValueError("support cap K must be at least 1")
    p0 = float(params.p_g0)
    p1 = float(params.p_g1)
    scale = float(params.sigma) / step
    ks = np.arange(-K, K + 1)
    mag = np.abs(ks)
    # cond(k) = r**(k-2) * (1 - r) with r = exp(-1/scale)
    cond = np.exp(-(np.maximum(mag, 2) - 2) / scale) * -math.expm1(-1.0 / scale)
    probs = np.where(
        mag == 0, 1.0 - p0, np.where(mag == 1, 0.5 * p0 * (1.0 - p1), 0.5 * p0 * p1 * cond)
    )
    tail = p0 * p1 * math.exp(-(K - 1) / scale) if K >= 2 else p0 * p1
    return DiscretePmf(-K, probs, tail)


# --- discretized Gaussian / Laplace ------------------------------------------


def _log_cell_gaussian(lo, hi):
    # log(Phi(hi) - Phi(lo)) for standardized edges lo < hi, mirrored so the
    # difference is always taken in the lower half.
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la = special.log_ndtr(a)
    lb = special.log_ndtr(b)
    return lb + np.log(-np.expm1(la - lb))


def _log_cell_laplace(lo, hi):
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    # a < 0 always; b may straddle zero.
    la = np.log(0.5) + a
    lb = np.where(b <= 0, np.log(0.5) + np.minimum(b, 0.0), np.log1p(-0.5 * np.exp(-np.abs(b))))
    return lb + np.log(-np.expm1(la - lb))


_LOG_CELL = {ModelKind.GAUSSIAN: _log_cell_gaussian, ModelKind.LAPLACE: _log_cell_laplace}


def interval_code_length(center, half_width, mu, sigma, kind: ModelKind):
    """-log2 of the model mass on ``[center - half_width, center + half_width]``."""
    d = np.asarray(center, dtype=np.float64) - mu
    lo = (d - half_width) / sigma
    hi = (d + half_width) / sigma
    return -_LOG_CELL[kind](lo, hi) / LN2


def gaussian_code_length(q, params: GaussianParams, step=1.0):
    if step <= 0:
        raise ValueError("step must be positive")
    out = interval_code_length(np.asarray(q) * step, 0.5 * step, params.mu, params.sigma,
                               ModelKind.GAUSSIAN)
    return out[()] if np.ndim(out) == 0 else out


def laplace_code_length(q, params: LaplaceParams, step=1.0):
    if step <= 0:
        raise ValueError("step must be positive")
    out = interval_code_length(np.asarray(q) * step, 0.5 * step, params.mu, params.sigma,
                               ModelKind.LAPLACE)
    return out[()] if np.ndim(out) == 0 else out


def _cdf(x, kind):
    if kind is ModelKind.GAUSSIAN:
        return special.ndtr(x)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0)), 1.0 - 0.5 * np.exp(-np.abs(x)))


def baseline_center(mu, step=1.0):
    """Lattice index the baseline support is centered on."""
    return int(round_half_away(float(mu) / step))


def continuous_pmf(params, K: int = DEFAULT_SUPPORT, step=1.0) -> DiscretePmf:
    kind = params.kind
    mu, sigma = float(params.mu), float(params.sigma)
    c = baseline_center(mu, step)
    ks = np.arange(c - K, c + K + 1)
    probs = np.exp(-interval_code_length(ks * step, 0.5 * step, mu, sigma, kind) * LN2)
    below = _cdf(((c - K - 0.5) * step - mu) / sigma, kind)
    above = _cdf(-((c + K + 0.5) * step - mu) / sigma, kind)
    return DiscretePmf(c - K, probs, float(below + above))


def code_length(q, params: ModelParams, step=1.0):
    """Dispatch to the code length of ``params``' model."""
    if isinstance(params, BinaryModelParams):
        return binary_code_length(q, params, step)
    if isinstance(params, GaussianParams):
        return gaussian_code_length(q, params, step)
    if isinstance(params, LaplaceParams):
        return laplace_code_length(q, params, step)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def model_pmf(kind, params: ModelParams, K: int = DEFAULT_SUPPORT, step=1.0) -> DiscretePmf:
    kind = ModelKind.parse(kind)
    if params.kind is not kind:
        raise ValueError(f"{kind.name} model given {type(params).__name__}")
    if K < 1:
        raise ValueError("support cap K must be at least 1")
    if step <= 0:
        raise ValueError("step must be positive")
    if kind is ModelKind.BINARY:
        return binary_pmf(params, K, step)
    return continuous_pmf(params, K, step)


# --- parameter sets and the LPRM file -----------------------------------------


@dataclass
class ParameterSet:
    """Model parameters as stored on disk: one record per tensor, channel or element.

    ``values`` has shape ``(count, n_fields)`` with fields ``(mu, sigma)`` or
    ``(mu, sigma, p_g0, p_g1)``.
    """

    kind: ModelKind
    granularity: Granularity
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        self.granularity = Granularity.parse(self.granularity)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, self.kind.n_fields)
        if values.ndim != 2 or values.shape[1] != self.kind.n_fields:
            raise ValueError(
                f"{self.kind.name} records need {self.kind.n_fields} fields, got shape {values.shape}"
            )
        if self.granularity is Granularity.TENSOR and values.shape[0] != 1:
            raise ValueError("per-tensor parameters need exactly one record")
        self.values = values
        # Validates ranges.
        PARAM_CLASSES[self.kind](*values.T)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def as_float32(self) -> "ParameterSet":
        return ParameterSet(self.kind, self.granularity, self.values.astype(np.float32).astype(np.float64))

    def _expand_field(self, column, dims):
        c, h, w = dims
        col = self.values[:, column]
        if self.granularity is Granularity.TENSOR:
            return np.full(dims, col[0])
        if self.granularity is Granularity.CHANNEL:
            if self.count != c:
                raise ValueError(f"{self.count} channel records for {c} channels")
            return np.broadcast_to(col[:, None, None], dims).copy()
        if self.count != c * h * w:
            raise ValueError(f"{self.count} element records for {c * h * w} elements")
        return col.reshape(dims).copy()

    def expand(self, dims) -> ModelParams:
        """Model parameters broadcast to full ``(C, H, W)`` arrays."""
        cols = [self._expand_field(i, tuple(dims)) for i in range(self.kind.n_fields)]
        return PARAM_CLASSES[self.kind](*cols)

    def center(self):
        """Quantizer center: ``mu`` for the binary model, zero for the baselines."""
        if self.kind is not ModelKind.BINARY:
            return 0.0
        mu = self.values[:, 0]
        return mu[0] if self.granularity is Granularity.TENSOR else mu

    def center_array(self, dims) -> np.ndarray:
        if self.kind is not ModelKind.BINARY:
            return np.zeros(dims)
        return self._expand_field(0, tuple(dims))

    @classmethod
    def from_params(cls, params: ModelParams, granularity="tensor") -> "ParameterSet":
        granularity = Granularity.parse(granularity)
        names = ("mu", "sigma", "p_g0", "p_g1")[: params.kind.n_fields]
        cols = [np.asarray(getattr(params, n), dtype=np.float64).reshape(-1) for n in names]
        n = max(c.size for c in cols)
        cols = [np.broadcast_to(c, (n,)) for c in cols]
        return cls(params.kind, granularity, np.stack(cols, axis=1))

    def to_bytes(self) -> bytes:
        header = _PARAM_HEADER.pack(PARAM_MAGIC, PARAM_VERSION, int(self.kind),
                                    int(self.granularity), self.count)
        return header + self.values.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["ParameterSet", int]:
        """Parse one LPRM block starting at ``offset``; returns it and the end offset."""
        if len(data) - offset < _PARAM_HEADER.size:
            if len(data) - offset >= 4 and data[offset:offset + 4] != PARAM_MAGIC:
                raise FormatError("bad magic")
            raise FormatError("truncated parameter header")
        magic, version, kind, gran, count = _PARAM_HEADER.unpack_from(data, offset)
        if magic != PARAM_MAGIC:
            raise FormatError("bad magic")
        if version != PARAM_VERSION:
            raise FormatError(f"unsupported parameter file version {version}")
        try:
            kind = ModelKind(kind)
            gran = Granularity(gran)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
        if count == 0:
            raise FormatError("parameter file holds no records")
        start = offset + _PARAM_HEADER.size
        end = start + 4 * kind.n_fields * count
        if len(data) < end:
            raise FormatError("truncated parameter records")
        values = np.frombuffer(data, dtype="<f4", count=kind.n_fields * count, offset=start)
        try:
            pset = cls(kind, gran, values.astype(np.float64).reshape(count, kind.n_fields))
        except ValueError as exc:
            raise FormatError(f"invalid parameter records: {exc}") from None
        return pset, end


def write_params(pset: ParameterSet, path) -> None:
    Path(path).write_bytes(pset.to_bytes())


def read_params(path) -> ParameterSet:
    data = Path(path).read_bytes()
    pset, end = ParameterSet.from_bytes(data)
    if end != len(data):
        raise FormatError("trailing bytes after parameter records")
    return pset
