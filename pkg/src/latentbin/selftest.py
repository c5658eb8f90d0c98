"""Fast end-to-end invariant checks, runnable without pytest."""

from __future__ import annotations

import math
import time
from typing import Callable, NamedTuple

import numpy as np

from latentbin.bitstream import decode_tensor, encode_tensor
from latentbin.evaluation import RdCurve, bd_rate
from latentbin.models import (
    EPS,
    BinaryModelParams,
    GaussianParams,
    LaplaceParams,
    ModelKind,
    ParameterSet,
    binary_code_length,
    explicit_code_length,
    model_pmf,
)
from latentbin.relaxed import finite_difference_check, kink_distance, relaxed_binary_rate
from latentbin.tensor import QuantizedTensor


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


def random_binary_params(rng, size=None):
    return BinaryModelParams(
        mu=rng.uniform(-2, 2, size),
        sigma=np.exp(rng.uniform(np.log(0.1), np.log(20.0), size)),
        p_g0=rng.uniform(EPS, 1 - EPS, size),
        p_g1=rng.uniform(EPS, 1 - EPS, size),
    )


def random_point(function_id, rng, h=1e-5):
    """A random evaluation point at least ``100 h`` away from any kink."""
    while True:
        if function_id == "binary":
            p = {"y": rng.uniform(-6, 6), "sigma": rng.uniform(0.2, 5.0),
                 "p_g0": rng.uniform(0.05, 0.95), "p_g1": rng.uniform(0.05, 0.95)}
        else:
            p = {"y": rng.uniform(-6, 6), "mu": rng.uniform(-2, 2), "sigma": rng.uniform(0.3, 5.0)}
        if kink_distance(function_id, p) > 100 * h:
            return p


def check_coherence(rng, draws=200):
    params = random_binary_params(rng, (draws, 1))
    k = np.arange(-50, 51)[None, :]
    err = np.max(np.abs(relaxed_binary_rate(k, params) - binary_code_length(k, params)))
    return err < 1e-12, f"max |relaxed - discrete| = {err:.3g}"


def check_normalization(rng, draws=500):
    worst = 0.0
    for _ in range(draws):
        bp = random_binary_params(rng)
        mu, sigma = rng.uniform(-5, 5), math.exp(rng.uniform(math.log(0.05), math.log(50)))
        for kind, p in ((ModelKind.BINARY, bp), (ModelKind.GAUSSIAN, GaussianParams(mu, sigma)),
                        (ModelKind.LAPLACE, LaplaceParams(mu, sigma))):
            worst = max(worst, abs(model_pmf(kind, p, 255).total - 1.0))
    return worst < 1e-9, f"max |mass - 1| = {worst:.3g}"


def check_gradients(rng, points=100):
    worst = 0.0
    for fid in ("binary", "gaussian", "laplace"):
        for _ in range(points):
            worst = max(worst, finite_difference_check(fid, random_point(fid, rng)).max_rel_error)
    return worst < 1e-5, f"max relative error = {worst:.3g}"


def check_round_trip(rng, trials=60):
    for i in range(trials):
        kind = ModelKind(i % 3)
        dims = tuple(int(d) for d in rng.integers(1, 5, 3))
        q = np.round(rng.laplace(0, rng.uniform(0.3, 4), dims)).astype(np.int64)
        q.flat[0] = int(rng.choice([0, 300, -300, 70000]))
        values = [rng.uniform(-1, 1), rng.uniform(0.2, 4)]
        if kind is ModelKind.BINARY:
            values += [rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)]
        pset = ParameterSet(kind, "tensor", np.array([values]))
        if decode_tensor(encode_tensor(QuantizedTensor(q), pset).to_bytes()) != QuantizedTensor(q):
            return False, f"mismatch on trial {i} ({kind.name})"
    return True, f"{trials} tensors decoded exactly"


def check_explicit_tail(rng):
    from scipy import integrate

    density = lambda u: 0.5 * math.exp(-abs(u))
    num = 2 * integrate.quad(density, 1.5, 2.5)[0]
    den = 1 - integrate.quad(density, -1.5, 1.5, points=[0.0])[0]
    err = abs(explicit_code_length(2, 1.0) + math.log2(num / den))
    return err < 1e-8, f"L_E(2, 1) = {explicit_code_length(2, 1.0):.6f}, |error| = {err:.3g}"


def check_bd_rate(rng):
    ref = RdCurve([(r, q) for r, q in zip([0.1, 0.2, 0.4, 0.8, 1.6], [30, 32.5, 34.6, 36.2, 37.4])])
    same = bd_rate(ref, ref)
    inflated = bd_rate(ref, RdCurve([(1.1 * p.rate_bpp, p.quality) for p in ref.points]))
    ok = abs(same) < 1e-12 and abs(inflated - 10.0) < 0.01
    return ok, f"identical {same:.3g}%, x1.10 {inflated:.6f}%"


CHECKS: dict[str, Callable] = {
    "coherence": check_coherence,
    "normalization": check_normalization,
    "gradients": check_gradients,
    "round-trip": check_round_trip,
    "explicit-tail": check_explicit_tail,
    "bd-rate": check_bd_rate,
}


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        rng = np.random.default_rng([seed, len(results)])
        start = time.perf_counter()
        try:
            ok, detail = check(rng)
        except Exception as exc:  # reported, not raised: selftest summarizes everything
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results
