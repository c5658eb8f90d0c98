"""Gradient-based fitting of model parameters to latent samples.

The objective is the latent-domain rate-distortion loss

    total = distortion + lam * rate

with distortion the mean squared error of hard quantization and rate the mean
relaxed code length per element.  In ``uniform-noise`` mode the rate is
evaluated at ``y + u`` (fresh uniform noise every step); in
``hard-quantize`` mode it is evaluated at the quantized values, where the
relaxed rate equals the discrete code length.

Parameters are optimized with Adam in an unconstrained space:
``sigma = exp(s)`` and ``p = eps + (1 - 2 eps) * sigmoid(a)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from latentbin.errors import FitDivergence
from latentbin.models import (
    EPS,
    PARAM_CLASSES,
    BinaryModelParams,
    Granularity,
    ModelKind,
    ParameterSet,
    clamp_probability,
)
from latentbin.relaxed import (
    baseline_rate_and_grad,
    binary_rate_and_grad,
    relaxed_binary_rate,
    relaxed_gaussian_rate,
    relaxed_laplace_rate,
)
from latentbin.tensor import LatentTensor, QuantizedTensor, round_half_away, uniform_noise

log = logging.getLogger(__name__)

NOISE_MODES = ("uniform-noise", "hard-quantize")
MIN_GROUP_SAMPLES = 100


@dataclass
class FitConfig:
    """Optimization settings.

    ``milestones`` are fractions of ``steps`` at which the learning rate is
    divided by ``decay``.
    """

    lam: float = 1.0
    steps: int = 2000
    learning_rate: float = 1e-4
    milestones: tuple = (0.625, 0.875)
    decay: float = 5.0
    seed: int = 0
    noise_mode: str = "uniform-noise"
    granularity: str = "tensor"
    quant_step: float = 1.0
    fit_mu: bool = True
    betas: tuple = (0.9, 0.999)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if not self.quant_step > 0:
            raise ValueError("quantization step must be positive")
        if not self.decay >= 1:
            raise ValueError("decay factor must be at least 1")
        self.granularity = Granularity.parse(self.granularity)

    def lr_at(self, step: int) -> float:
        passed = sum(step >= m * self.steps for m in self.milestones)
        return self.learning_rate / self.decay**passed


class LossValue(NamedTuple):
    distortion: float
    rate: float
    total: float


class TraceRecord(NamedTuple):
    step: int
    distortion: float
    rate: float
    total: float


@dataclass
class FitResult:
    params: ParameterSet
    trace: list = field(default_factory=list)

    @property
    def final(self) -> TraceRecord:
        return self.trace[-1]


def _as_array(samples):
    if isinstance(samples, LatentTensor):
        return samples.values
    return LatentTensor(samples).values


def _expanded(params, dims):
    if isinstance(params, ParameterSet):
        return params.expand(dims)
    names = ("mu", "sigma", "p_g0", "p_g1")[: params.kind.n_fields]
    cols = [np.broadcast_to(np.asarray(getattr(params, n), dtype=np.float64), dims) for n in names]
    return PARAM_CLASSES[params.kind](*cols)


def _elementwise(y, params, noise, step, want_grad=True):
    """Per-element distortion, rate and their gradients w.r.t. model fields.

    Gradients map each field to a ``(d rate, d distortion)`` pair.
    """
    binary = isinstance(params, BinaryModelParams)
    x = y - params.mu if binary else y
    q = round_half_away(x / step)
    err = x - step * q
    arg = x + step * noise if noise is not None else step * q
    if not want_grad:
        if binary:
            rate_fn = relaxed_binary_rate
        elif params.kind is ModelKind.GAUSSIAN:
            rate_fn = relaxed_gaussian_rate
        else:
            rate_fn = relaxed_laplace_rate
        return err * err, np.asarray(rate_fn(arg, params, step)), None
    if binary:
        rate, g = binary_rate_and_grad(arg, params, step)
        # Hard quantization makes the rate piecewise constant in mu.
        d_mu_rate = -g.d_y if noise is not None else 0.0
        grads = {"mu": (d_mu_rate, -2.0 * err), "sigma": (g.d_sigma, 0.0),
                 "p_g0": (g.d_pg0, 0.0), "p_g1": (g.d_pg1, 0.0)}
    else:
        rate, g = baseline_rate_and_grad(arg, params, step)
        grads = {"mu": (g.d_mu, 0.0), "sigma": (g.d_sigma, 0.0)}
    return err * err, rate, grads


def loss(samples, params, lam: float, noise_mode: str = "hard-quantize", step: float = 1.0,
         seed: int = 0) -> LossValue:
    """Mean distortion, mean relaxed rate (bits/element) and their weighted total."""
    if noise_mode not in NOISE_MODES:
        raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
    if step <= 0:
        raise ValueError("step must be positive")
    y = _as_array(samples)
    p = _expanded(params, y.shape)
    noise = uniform_noise(np.random.default_rng(seed), y.shape) if noise_mode == "uniform-noise" else None
    d, r, _ = _elementwise(y, p, noise, step, want_grad=False)
    distortion = float(np.mean(d))
    rate = float(np.mean(r))
    return LossValue(distortion, rate, distortion + lam * rate)


def closed_form_binary_flags(q) -> tuple[float, float]:
    """Flag probabilities minimizing the empirical flag rate of ``q``."""
    values = q.values if isinstance(q, QuantizedTensor) else np.asarray(q)
    mag = np.abs(values).reshape(-1)
    if mag.size == 0:
        raise ValueError("closed-form flags need at least one symbol")
    nonzero = np.count_nonzero(mag >= 1)
    p_g0 = nonzero / mag.size
    p_g1 = np.count_nonzero(mag >= 2) / nonzero if nonzero else 0.0
    return float(clamp_probability(p_g0)), float(clamp_probability(p_g1))


# --- optimizer ---------------------------------------------------------------


class _Groups:
    """Maps parameter groups (tensor / channel) onto elements."""

    def __init__(self, granularity, dims):
        self.granularity = granularity
        self.dims = dims
        c, h, w = dims
        if granularity is Granularity.TENSOR:
            self.shape, self.per_group = (1,), c * h * w
        elif granularity is Granularity.CHANNEL:
            self.shape, self.per_group = (c,), h * w
        else:
            self.shape, self.per_group = (c * h * w,), 1

    def expand(self, v):
        # Broadcastable against (C, H, W), not materialized.
        if self.granularity is Granularity.TENSOR:
            return float(v[0])
        if self.granularity is Granularity.CHANNEL:
            return v[:, None, None]
        return v.reshape(self.dims)

    def reduce(self, g):
        g = np.broadcast_to(g, self.dims)
        if self.granularity is Granularity.TENSOR:
            return np.array([g.sum()])
        if self.granularity is Granularity.CHANNEL:
            return g.sum(axis=(1, 2))
        return g.reshape(-1)

    def stat(self, y, fn):
        if self.granularity is Granularity.TENSOR:
            return np.array([fn(y)])
        if self.granularity is Granularity.CHANNEL:
            return np.array([fn(ch) for ch in y])
        return y.reshape(-1).copy()


def _squash(a):
    return EPS + (1.0 - 2.0 * EPS) * special.expit(a)


def _squash_grad(a):
    s = special.expit(a)
    return (1.0 - 2.0 * EPS) * s * (1.0 - s)


def _model_params(kind, raw, groups):
    mu = groups.expand(raw["mu"])
    sigma = groups.expand(np.exp(raw["s"]))
    if kind is ModelKind.BINARY:
        return PARAM_CLASSES[kind](mu, sigma, groups.expand(_squash(raw["a0"])),
                                   groups.expand(_squash(raw["a1"])))
    return PARAM_CLASSES[kind](mu, sigma)


def _to_parameter_set(kind, raw, granularity):
    cols = [raw["mu"], np.exp(raw["s"])]
    if kind is ModelKind.BINARY:
        cols += [_squash(raw["a0"]), _squash(raw["a1"])]
    return ParameterSet(kind, granularity, np.stack(cols, axis=1))


def fit(samples, kind, config: FitConfig = None) -> FitResult:
    """Fit ``kind`` model parameters to ``samples`` by Adam on the relaxed loss.

    Deterministic given ``config.seed``.  Raises :class:`FitDivergence` if the
    loss turns non-finite.
    """
    config = config or FitConfig()
    kind = ModelKind.parse(kind)
    y = _as_array(samples)
    groups = _Groups(config.granularity, y.shape)
    if groups.per_group < MIN_GROUP_SAMPLES:
        raise ValueError(
            f"{groups.per_group} samples per parameter group; at least {MIN_GROUP_SAMPLES} required"
        )
    step = config.quant_step
    n = y.size

    raw = {"mu": groups.stat(y, np.mean),
           "s": np.log(np.maximum(groups.stat(y, np.std), 1e-3 * step))}
    if kind is ModelKind.BINARY:
        raw["a0"] = np.zeros(groups.shape)
        raw["a1"] = np.zeros(groups.shape)
    m = {k: np.zeros_like(v) for k, v in raw.items()}
    v = {k: np.zeros_like(v) for k, v in raw.items()}
    b1, b2 = config.betas
    rng = np.random.default_rng(config.seed)
    trace = []
    noisy = config.noise_mode == "uniform-noise"

    for t in range(config.steps):
        # exp(s) must stay a positive finite float
        if not all(np.all(np.isfinite(v)) for v in raw.values()) or np.any(np.abs(raw["s"]) > 700):
            raise FitDivergence(t, f"parameters left the representable range at step {t}")
        params = _model_params(kind, raw, groups)
        noise = uniform_noise(rng, y.shape) if noisy else None
        d, r, g = _elementwise(y, params, noise, step)
        distortion = float(np.mean(d))
        rate = float(np.mean(r))
        total = distortion + config.lam * rate
        if not math.isfinite(total):
            raise FitDivergence(t)
        trace.append(TraceRecord(t, distortion, rate, total))

        def field_grad(name):
            d_rate, d_dist = g[name]
            return groups.reduce(config.lam * d_rate + d_dist) / n

        grads = {"mu": field_grad("mu"),
                 "s": groups.reduce(config.lam * g["sigma"][0] * params.sigma) / n}
        if kind is ModelKind.BINARY:
            grads["a0"] = field_grad("p_g0") * _squash_grad(raw["a0"])
            grads["a1"] = field_grad("p_g1") * _squash_grad(raw["a1"])
        if not config.fit_mu:
            grads["mu"] = np.zeros(groups.shape)

        lr = config.lr_at(t)
        for k in raw:
            gk = grads[k]
            if not np.all(np.isfinite(gk)):
                raise FitDivergence(t, f"non-finite gradient for {k} at step {t}")
            m[k] = b1 * m[k] + (1 - b1) * gk
            v[k] = b2 * v[k] + (1 - b2) * gk * gk
            mhat = m[k] / (1 - b1 ** (t + 1))
            vhat = v[k] / (1 - b2 ** (t + 1))
            raw[k] = raw[k] - lr * mhat / (np.sqrt(vhat) + 1e-8)
        if t % 500 == 0:
            log.debug("step %d: distortion %.6g rate %.6g total %.6g", t, distortion, rate, total)

    return FitResult(_to_parameter_set(kind, raw, config.granularity), trace)


def smoothed(trace, window: int = 50) -> np.ndarray:
    """Moving average of the total loss over ``window`` steps."""
    totals = np.array([rec.total for rec in trace])
    if totals.size < window:
        return totals
    kernel = np.ones(window) / window
    return np.convolve(totals, kernel, mode="valid")
