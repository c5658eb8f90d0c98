"""Rate and distortion measurement, RD sweeps and Bjontegaard delta rate."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import interpolate

from latentbin.models import ModelKind, ParameterSet, code_length
from latentbin.fit import loss
from latentbin.tensor import LatentTensor, QuantizedTensor, QuantSpec, quantize

DEFAULT_STEPS = (0.8, 0.9, 1.0, 1.1, 1.25)
STEP_BAND = (0.8, 1.25)
PSNR_INF = math.inf


class RateEstimate(NamedTuple):
    total_bits: float
    per_element: np.ndarray

    @property
    def bits_per_element(self) -> float:
        return self.total_bits / self.per_element.size


def _check_kind(params: ParameterSet, kind):
    if kind is not None and ModelKind.parse(kind) is not params.kind:
        raise ValueError(f"parameters are {params.kind.name}, requested {ModelKind.parse(kind).name}")


def estimate_rate(q: QuantizedTensor, params: ParameterSet, kind=None, step: float = 1.0) -> RateEstimate:
    """Sum of model code lengths of ``q`` (bits) and the per-element lengths."""
    _check_kind(params, kind)
    lengths = np.asarray(code_length(q.values, params.expand(q.dims), step), dtype=np.float64)
    return RateEstimate(float(math.fsum(lengths.reshape(-1))), lengths)


def empirical_entropy(q) -> float:
    """Entropy (bits/element) of the symbol histogram of ``q``."""
    values = q.values if isinstance(q, QuantizedTensor) else np.asarray(q)
    if values.size == 0:
        raise ValueError("empty input")
    _, counts = np.unique(values, return_counts=True)
    p = counts / values.size
    return float(-np.sum(p * np.log2(p)))


def empirical_cross_entropy(q: QuantizedTensor, params: ParameterSet, kind=None, step: float = 1.0) -> float:
    return estimate_rate(q, params, kind, step).bits_per_element


@dataclass
class RateDecomposition:
    cross_entropy: float
    entropy: float

    @property
    def kl(self) -> float:
        return self.cross_entropy - self.entropy


def decompose_rate(q: QuantizedTensor, params: ParameterSet, step: float = 1.0) -> RateDecomposition:
    """Split the mean code length into histogram entropy plus a KL excess."""
    return RateDecomposition(empirical_cross_entropy(q, params, step=step), empirical_entropy(q))


def psnr(mse: float, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for a zero error."""
    if mse < 0 or not peak > 0:
        raise ValueError("mse must be nonnegative and peak positive")
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


# --- RD curves ---------------------------------------------------------------


class RdPoint(NamedTuple):
    rate_bpp: float
    quality: float


@dataclass
class RdCurve:
    points: list = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        self.points = sorted(RdPoint(float(r), float(d)) for r, d in self.points)
        if any(p.rate_bpp <= 0 for p in self.points):
            raise ValueError("RD curve rates must be positive")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_bpp for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rate_bpp", "quality"])
        for p in self.points:
            writer.writerow([repr(p.rate_bpp), repr(p.quality)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, label: str = "") -> "RdCurve":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["rate_bpp", "quality"]:
            raise ValueError("RD CSV must start with the header 'rate_bpp,quality'")
        points = [(float(r), float(d)) for r, d in (row for row in reader if row)]
        return cls(points, label)

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path) -> "RdCurve":
        return cls.from_csv(Path(path).read_text(), label=Path(path).stem)


@dataclass
class SweepPoint:
    step: float
    rate_bpp: float
    mse: float
    quality: float


def rd_sweep(y: LatentTensor, params: ParameterSet, kind=None, steps=DEFAULT_STEPS,
             peak: float = 1.0, band=STEP_BAND, label: str = "") -> tuple[RdCurve, list]:
    """Quantize ``y`` at each step, measure rate and PSNR of the reconstruction.

    Model parameters stay fixed; only the likelihood cell width follows the
    step.  Returns the curve and the per-step measurements.
    """
    _check_kind(params, kind)
    rows = []
    for step in steps:
        step = float(step)
        if not step > 0:
            raise ValueError("quantization steps must be positive")
        if band is not None and not (band[0] <= step <= band[1]):
            raise ValueError(f"step {step} outside the configured band {band}")
        q = quantize(y, QuantSpec(step, params.center_array(y.dims)))
        rate = estimate_rate(q, params, step=step).bits_per_element
        mse = loss(y, params, 0.0, "hard-quantize", step).distortion
        rows.append(SweepPoint(step, rate, mse, psnr(mse, peak)))
    curve = RdCurve([(r.rate_bpp, r.quality) for r in rows], label)
    return curve, rows


def _log_rate_integral(quality, log_rate, lo, hi, method):
    if method == "poly":
        poly = np.polyint(np.polyfit(quality, log_rate, 3))
        return np.polyval(poly, hi) - np.polyval(poly, lo)
    order = np.argsort(quality)
    pchip = interpolate.PchipInterpolator(quality[order], log_rate[order])
    return pchip.integrate(lo, hi)


def bd_rate(reference: RdCurve, test: RdCurve, method: str = "poly") -> float:
    """Bjontegaard delta rate of ``test`` against ``reference`` in percent.

    Log2-rate is fitted as a cubic in quality (``method="poly"``, the classic
    form) or with a monotone piecewise-cubic interpolant (``"pchip"``) and
    averaged over the common quality interval.  Negative values mean ``test``
    needs less rate for the same quality.
    """
    if method not in ("poly", "pchip"):
        raise ValueError("method must be 'poly' or 'pchip'")
    curves = (reference, test)
    for c in curves:
        if len(c.points) < 4:
            raise ValueError("BD-rate needs at least 4 points per curve")
        if not np.all(np.isfinite(c.qualities)):
            raise ValueError("BD-rate needs finite quality values")
        if len(np.unique(c.qualities)) < 4:
            raise ValueError("degenerate RD curve: fewer than 4 distinct quality values")
    lo = max(c.qualities.min() for c in curves)
    hi = min(c.qualities.max() for c in curves)
    if not hi > lo:
        raise ValueError("RD curves do not overlap in quality")
    integrals = [_log_rate_integral(c.qualities, np.log2(c.rates), lo, hi, method) for c in curves]
    avg_diff = (integrals[1] - integrals[0]) / (hi - lo)
    return float((2.0**avg_diff - 1.0) * 100.0)
