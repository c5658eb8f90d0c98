"""Synthetic latent sources."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from latentbin.tensor import LatentTensor

SOURCE_KINDS = ("gaussian", "laplace", "spike-mixture")


@dataclass(frozen=True)
class SourceSpec:
    """A synthetic latent distribution.

    ``scale`` is the Gaussian standard deviation, the Laplace scale, or the
    Laplace scale of the mixture's heavy tail.  The spike-mixture draws from
    a narrow Gaussian of width ``spike_width`` at zero with weight
    ``weights[0]`` and from the Laplace tail otherwise.
    """

    kind: str = "gaussian"
    channels: int = 1
    height: int = 1
    width: int = 1000
    scale: float = 1.0
    mean: float = 0.0
    weights: tuple = (0.8, 0.2)
    spike_width: float = 0.05

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        if min(self.channels, self.height, self.width) < 1:
            raise ValueError("source dimensions must be positive")
        if not self.scale > 0 or not self.spike_width > 0:
            raise ValueError("source scales must be positive")
        if self.kind == "spike-mixture":
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (2,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must be two nonnegative values summing to 1")

    @property
    def dims(self):
        return (self.channels, self.height, self.width)


def generate_synthetic(spec: SourceSpec, seed: int) -> LatentTensor:
    rng = np.random.default_rng(seed)
    dims = spec.dims
    if spec.kind == "gaussian":
        y = rng.normal(0.0, spec.scale, dims)
    elif spec.kind == "laplace":
        y = rng.laplace(0.0, spec.scale, dims)
    else:
        spike = rng.random(dims) < spec.weights[0]
        y = np.where(spike, rng.normal(0.0, spec.spike_width, dims), rng.laplace(0.0, spec.scale, dims))
    return LatentTensor(y + spec.mean)


def zero_bin_mass(spec: SourceSpec, step: float = 1.0) -> float:
    """Probability that a sample quantizes to zero (around ``spec.mean``)."""
    half = 0.5 * step
    gauss = lambda s: float(special.erf(half / (s * math.sqrt(2.0))))
    lap = lambda b: -math.expm1(-half / b)
    if spec.kind == "gaussian":
        return gauss(spec.scale)
    if spec.kind == "laplace":
        return lap(spec.scale)
    w0, w1 = spec.weights
    return w0 * gauss(spec.spike_width) + w1 * lap(spec.scale)
