"""Continuous relaxations of the discrete code lengths and their gradients.

The binary model's rate at a non-integer magnitude ``t`` is a weighted sum of
the rates at ``floor(t)`` and ``floor(t) + 1``.  The weight ``gamma`` is flat
(equal to one) on ``[0, 1/2]``, falls linearly to zero on ``(1/2, 1)`` and is
the distance to the next integer from one onwards, so the relaxed rate
matches the discrete rate at every integer.

The baselines use the density convolved with a unit-width uniform, i.e. the
model mass of a cell centered on the (noisy) latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import special

from latentbin.errors import SubgradientPointError
from latentbin.models import (
    LN2,
    BinaryModelParams,
    GaussianParams,
    LaplaceParams,
    ModelKind,
    _LOG_CELL,
    _explicit_bits,
    binary_code_length,
    interval_code_length,
)


def gamma(t):
    """Interpolation weight of the lower integer rate at magnitude ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("gamma is defined for nonnegative magnitudes")
    out = np.where(t <= 0.5, 1.0, np.where(t < 1.0, 2.0 - 2.0 * t, np.floor(t) + 1.0 - t))
    return out[()] if out.ndim == 0 else out


def _gamma_slope(t, right=True):
    # d gamma / dt, taking the piece to the right (or left) of kinks.
    if right:
        return np.where(t < 0.5, 0.0, np.where(t < 1.0, -2.0, -1.0))
    return np.where(t <= 0.5, 0.0, np.where(t <= 1.0, -2.0, -1.0))


def binary_kink_distance(y_tilde, step=1.0):
    """Distance (in latent units) from ``y_tilde`` to the nearest kink."""
    t = np.abs(np.asarray(y_tilde, dtype=np.float64)) / step
    # Zero is not a kink: the rate is flat on [-1/2, 1/2].
    nearest = np.maximum(np.round(t), 1.0)
    return np.minimum(np.abs(t - nearest), np.abs(t - 0.5)) * step


def relaxed_binary_rate(y_tilde, params: BinaryModelParams, step=1.0):
    """Relaxed rate of centered, noisy latents ``y_tilde`` (already minus mu).

    Evaluated on ``|y_tilde|``; the discrete rate is even in the symbol so the
    relaxed rate is even too.
    """
    t = np.abs(np.asarray(y_tilde, dtype=np.float64)) / step
    n = np.floor(t)
    w = gamma(t)
    lo = binary_code_length(n.astype(np.int64), params, step)
    hi = binary_code_length(n.astype(np.int64) + 1, params, step)
    out = w * lo + (1.0 - w) * hi
    return out[()] if np.ndim(out) == 0 else out


def relaxed_gaussian_rate(y_tilde, params: GaussianParams, step=1.0):
    out = interval_code_length(y_tilde, 0.5 * step, params.mu, params.sigma, ModelKind.GAUSSIAN)
    return out[()] if np.ndim(out) == 0 else out


def relaxed_laplace_rate(y_tilde, params: LaplaceParams, step=1.0):
    out = interval_code_length(y_tilde, 0.5 * step, params.mu, params.sigma, ModelKind.LAPLACE)
    return out[()] if np.ndim(out) == 0 else out


@dataclass
class BinaryGradient:
    """Partial derivatives of the relaxed binary rate (bits per unit).

    ``subgradient`` marks points on a kink, where ``d_y`` is the right
    one-sided derivative.
    """

    d_y: np.ndarray
    d_sigma: np.ndarray
    d_pg0: np.ndarray
    d_pg1: np.ndarray
    subgradient: np.ndarray


@dataclass
class BaselineGradient:
    d_y: np.ndarray
    d_mu: np.ndarray
    d_sigma: np.ndarray


def _binary_partials(n, params, step):
    """Derivatives of the discrete rate at magnitudes ``n`` w.r.t. the parameters."""
    p0 = np.asarray(params.p_g0, dtype=np.float64)
    p1 = np.asarray(params.p_g1, dtype=np.float64)
    sigma = np.asarray(params.sigma, dtype=np.float64)
    d_p0 = np.where(n == 0, 1.0 / ((1.0 - p0) * LN2), -1.0 / (p0 * LN2))
    d_p1 = np.where(n == 0, 0.0, np.where(n == 1, 1.0 / ((1.0 - p1) * LN2), -1.0 / (p1 * LN2)))
    # d L_E / d sigma with scale b = sigma / step
    b = sigma / step
    with np.errstate(over="ignore"):
        d_b = (1.0 / np.expm1(1.0 / b) - (np.maximum(n, 2) - 2.0)) / (b * b * LN2)
    d_sigma = np.where(n >= 2, d_b / step, 0.0)
    return d_p0, d_p1, d_sigma


def binary_rate_and_grad(y_tilde, params: BinaryModelParams, step=1.0):
    """Relaxed binary rate together with its :class:`BinaryGradient`."""
    y = np.asarray(y_tilde, dtype=np.float64)
    t = np.abs(y) / step
    negative = y < 0
    # Right derivative in y is a left derivative in t when y < 0.
    slope = np.where(negative, _gamma_slope(t, right=False), _gamma_slope(t, right=True))
    n = np.floor(t)
    on_int = negative & (t == n) & (t > 0)
    n = np.where(on_int, n - 1.0, n).astype(np.int64)
    w = np.where(on_int, 0.0, gamma(t))
    lo = binary_code_length(n, params, step)
    hi = binary_code_length(n + 1, params, step)
    rate = w * lo + (1.0 - w) * hi
    sign = np.where(negative, -1.0, 1.0)
    d_y = sign * slope * (lo - hi) / step + 0.0  # no negative zeros
    g_lo = _binary_partials(n, params, step)
    g_hi = _binary_partials(n + 1, params, step)
    d_p0, d_p1, d_sigma = (w * a + (1.0 - w) * b for a, b in zip(g_lo, g_hi))
    subgradient = binary_kink_distance(y, step) == 0
    return rate, BinaryGradient(d_y, d_sigma, d_p0, d_p1, subgradient)


def relaxed_binary_rate_grad(y_tilde, params: BinaryModelParams, step=1.0) -> BinaryGradient:
    """Analytic gradient of :func:`relaxed_binary_rate`.

    At kinks (``|y|`` at half a step or a nonzero multiple of the step) ``d_y`` is the
    right one-sided derivative and ``subgradient`` is set.
    """
    return binary_rate_and_grad(y_tilde, params, step)[1]


def baseline_rate_and_grad(y_tilde, params, step=1.0):
    """Relaxed Gaussian or Laplace rate together with its :class:`BaselineGradient`."""
    kind = params.kind
    d = np.asarray(y_tilde, dtype=np.float64) - params.mu
    sigma = np.asarray(params.sigma, dtype=np.float64)
    lo = (d - 0.5 * step) / sigma
    hi = (d + 0.5 * step) / sigma
    log_mass = _LOG_CELL[kind](lo, hi)
    if kind is ModelKind.GAUSSIAN:
        log_f = lambda z: -0.5 * z * z - 0.5 * math.log(2 * math.pi)
    else:
        log_f = lambda z: -np.abs(z) - math.log(2.0)
    # Standardized densities divided by the cell mass, formed in log space.
    f_hi = np.exp(log_f(hi) - log_mass)
    f_lo = np.exp(log_f(lo) - log_mass)
    d_y = -(f_hi - f_lo) / (sigma * LN2)
    d_sigma = (hi * f_hi - lo * f_lo) / (sigma * LN2)
    return -log_mass / LN2, BaselineGradient(d_y, -d_y, d_sigma)


def relaxed_gaussian_rate_grad(y_tilde, params: GaussianParams, step=1.0) -> BaselineGradient:
    return baseline_rate_and_grad(y_tilde, params, step)[1]


def relaxed_laplace_rate_grad(y_tilde, params: LaplaceParams, step=1.0) -> BaselineGradient:
    """Gradient of the relaxed Laplace rate; ``d_y`` is undefined where a cell edge hits ``mu``."""
    return baseline_rate_and_grad(y_tilde, params, step)[1]


# --- finite-difference checking ---------------------------------------------


@dataclass(frozen=True)
class _Checked:
    rate: Callable
    grad: Callable
    fields: tuple
    grad_fields: Mapping[str, str]


_FUNCTIONS = {
    "binary": _Checked(
        rate=lambda p, s: relaxed_binary_rate(p["y"], BinaryModelParams(0.0, p["sigma"], p["p_g0"], p["p_g1"]), s),
        grad=lambda p, s: relaxed_binary_rate_grad(p["y"], BinaryModelParams(0.0, p["sigma"], p["p_g0"], p["p_g1"]), s),
        fields=("y", "sigma", "p_g0", "p_g1"),
        grad_fields={"y": "d_y", "sigma": "d_sigma", "p_g0": "d_pg0", "p_g1": "d_pg1"},
    ),
    "gaussian": _Checked(
        rate=lambda p, s: relaxed_gaussian_rate(p["y"], GaussianParams(p["mu"], p["sigma"]), s),
        grad=lambda p, s: relaxed_gaussian_rate_grad(p["y"], GaussianParams(p["mu"], p["sigma"]), s),
        fields=("y", "mu", "sigma"),
        grad_fields={"y": "d_y", "mu": "d_mu", "sigma": "d_sigma"},
    ),
    "laplace": _Checked(
        rate=lambda p, s: relaxed_laplace_rate(p["y"], LaplaceParams(p["mu"], p["sigma"]), s),
        grad=lambda p, s: relaxed_laplace_rate_grad(p["y"], LaplaceParams(p["mu"], p["sigma"]), s),
        fields=("y", "mu", "sigma"),
        grad_fields={"y": "d_y", "mu": "d_mu", "sigma": "d_sigma"},
    ),
}
CHECKABLE = tuple(_FUNCTIONS)


def kink_distance(function_id, point, step=1.0):
    """Distance from ``point`` to the nearest non-differentiable point of the rate."""
    if function_id == "binary":
        return float(binary_kink_distance(point["y"], step))
    # Laplace density has a kink at mu; the cell edges sit at y +- step/2.
    if function_id == "laplace":
        d = abs(point["y"] - point["mu"])
        return abs(d - 0.5 * step)
    return math.inf


@dataclass
class GradCheckReport:
    function_id: str
    point: dict
    analytic: dict
    numeric: dict
    rel_error: dict

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error.values())


def relative_error(a, b, floor=1e-3):
    """``|a - b|`` relative to the larger magnitude, with an absolute floor."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_difference_check(function_id: str, point: Mapping[str, float], h: float = 1e-5,
                            step: float = 1.0) -> GradCheckReport:
    """Compare analytic gradients with central differences of step ``h``.

    ``point`` holds ``y`` plus the model fields (``sigma``, ``p_g0``, ``p_g1``
    for the binary model; ``mu``, ``sigma`` for the baselines).  For the
    binary model ``y`` is already centered.
    """
    if function_id not in _FUNCTIONS:
        raise ValueError(f"unknown function id {function_id!r}; expected one of {CHECKABLE}")
    if not (h > 0 and math.isfinite(h)):
        raise ValueError("finite-difference step h must be positive")
    spec = _FUNCTIONS[function_id]
    missing = set(spec.fields) - set(point)
    if missing:
        raise ValueError(f"point lacks fields {sorted(missing)}")
    point = {k: float(point[k]) for k in spec.fields}
    if kink_distance(function_id, point, step) <= 10 * h:
        raise SubgradientPointError("subgradient point: too close to a kink for central differences")
    grad = spec.grad(point, step)
    analytic, numeric, rel = {}, {}, {}
    for name in spec.fields:
        plus = dict(point)
        minus = dict(point)
        plus[name] += h
        minus[name] -= h
        num = (float(spec.rate(plus, step)) - float(spec.rate(minus, step))) / (2 * h)
        ana = float(np.asarray(getattr(grad, spec.grad_fields[name])))
        analytic[name] = ana
        numeric[name] = num
        rel[name] = relative_error(ana, num)
    return GradCheckReport(function_id, point, analytic, numeric, rel)
