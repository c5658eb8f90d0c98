"""Command-line entry point: ``latentbin <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Defaults for any flag can be set with ``--config FILE`` holding
``key=value`` lines (keys are flag names without dashes); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from latentbin import __version__
from latentbin.bitstream import decode_tensor, encode_tensor, read_bitstream, write_bitstream
from latentbin.coder import DEFAULT_PRECISION
from latentbin.errors import FitDivergence, FormatError
from latentbin.evaluation import (
    DEFAULT_STEPS,
    RdCurve,
    bd_rate,
    decompose_rate,
    estimate_rate,
    rd_sweep,
)
from latentbin.fit import FitConfig, fit
from latentbin.models import DEFAULT_SUPPORT, ModelKind, read_params, write_params
from latentbin.relaxed import CHECKABLE, finite_difference_check
from latentbin.selftest import random_point, run_selftest
from latentbin.sources import SourceSpec, generate_synthetic
from latentbin.tensor import LatentTensor, QuantSpec, dequantize, quantize, read_tensor, write_tensor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _existing(path):
    # OSError passes through argparse and maps to the data-error exit code.
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _add_coder_flags(p):
    p.add_argument("--K", type=int, default=DEFAULT_SUPPORT, help="support cap before escape")
    p.add_argument("--precision", type=int, default=DEFAULT_PRECISION, help="coder probability bits")


def build_parser():
    parser = _Parser(prog="latentbin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", type=_existing, help="key=value defaults file")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["gen"] = sub.add_parser("gen", help="generate a synthetic latent tensor")
    p.add_argument("--kind", default="spike-mixture", choices=("gaussian", "laplace", "spike-mixture"))
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--height", type=int, default=1)
    p.add_argument("--width", type=int, default=10000)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--w0", type=float, default=0.8, help="spike weight of the mixture")
    p.add_argument("--spike-width", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)

    p = subs["fit"] = sub.add_parser("fit", help="fit model parameters to a tensor")
    p.add_argument("tensor", type=_existing)
    p.add_argument("--model", default="binary", choices=("gaussian", "laplace", "binary"))
    p.add_argument("--lam", type=float, default=1.0, help="rate weight lambda")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--noise-mode", default="uniform-noise", choices=("uniform-noise", "hard-quantize"))
    p.add_argument("--granularity", default="tensor", choices=("tensor", "channel"))
    p.add_argument("--step", type=float, default=1.0, help="quantization step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="LPRM parameter file")
    p.add_argument("--trace", help="CSV file for the loss trace")

    p = subs["encode"] = sub.add_parser("encode", help="quantize and entropy-code a tensor")
    p.add_argument("tensor", type=_existing)
    p.add_argument("params", type=_existing)
    p.add_argument("--step", type=float, default=1.0)
    _add_coder_flags(p)
    p.add_argument("-o", "--out", required=True)

    p = subs["decode"] = sub.add_parser("decode", help="decode an LBIN stream to a tensor")
    p.add_argument("stream", type=_existing)
    p.add_argument("--dequantize", action="store_true", help="write reconstructions, not symbols")
    _add_coder_flags(p)
    p.add_argument("-o", "--out", required=True)

    p = subs["rate"] = sub.add_parser("rate", help="estimate the rate of a tensor")
    p.add_argument("tensor", type=_existing)
    p.add_argument("params", type=_existing)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--csv", help="also write the report as CSV")

    p = subs["sweep"] = sub.add_parser("sweep", help="RD curve by quantization-step deviation")
    p.add_argument("tensor", type=_existing)
    p.add_argument("params", type=_existing)
    p.add_argument("--steps", type=_floats, default=list(DEFAULT_STEPS))
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("-o", "--out", required=True, help="RD CSV")

    p = subs["bdrate"] = sub.add_parser("bdrate", help="BD-rate of test against reference")
    p.add_argument("reference", type=_existing)
    p.add_argument("test", type=_existing)
    p.add_argument("--method", default="poly", choices=("poly", "pchip"))

    p = subs["gradcheck"] = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--csv", help="per-point CSV report")

    p = subs["selftest"] = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    return parser, subs


def _read_config(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(sub, config):
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in config.items():
        action = known.get(key)
        if action is None:
            continue
        if action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config value for {key}: {exc}") from None
        elif action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw
        if action.required:
            action.required = False
    sub.set_defaults(**defaults)


def _quant_spec(params, step):
    return QuantSpec(step, params.center())


def cmd_gen(args):
    spec = SourceSpec(args.kind, args.channels, args.height, args.width, args.scale, args.mean,
                      (args.w0, 1.0 - args.w0), args.spike_width)
    y = generate_synthetic(spec, args.seed)
    write_tensor(y, args.out)
    print(f"wrote {args.out}: {args.kind} {spec.dims} seed={args.seed}")


def cmd_fit(args):
    config = FitConfig(lam=args.lam, steps=args.steps, learning_rate=args.lr, seed=args.seed,
                       noise_mode=args.noise_mode, granularity=args.granularity,
                       quant_step=args.step)
    result = fit(read_tensor(args.tensor), args.model, config)
    write_params(result.params, args.out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "distortion", "rate", "total"])
            writer.writerows(result.trace)
    final = result.final
    print(f"model={args.model} seed={args.seed} steps={args.steps} lam={args.lam}")
    print(f"final distortion={final.distortion:.6f} rate={final.rate:.6f} total={final.total:.6f}")
    print(f"wrote {args.out}")


def cmd_encode(args):
    y = read_tensor(args.tensor)
    params = read_params(args.params)
    q = quantize(y, _quant_spec(params, args.step))
    stream = encode_tensor(q, params, args.step, args.K, args.precision)
    write_bitstream(stream, args.out)
    estimate = estimate_rate(q, params.as_float32(), step=stream.step).total_bits
    print(f"wrote {args.out}: {len(stream.payload)} payload bytes "
          f"({8 * len(stream.payload) / q.size:.4f} bits/element, estimate {estimate / q.size:.4f})")


def cmd_decode(args):
    stream = read_bitstream(args.stream)
    q = decode_tensor(stream, args.K, args.precision)
    if args.dequantize:
        out = dequantize(q, _quant_spec(stream.params, stream.step))
    else:
        out = LatentTensor(q.values.astype(np.float64))
    write_tensor(out, args.out)
    print(f"wrote {args.out}: {q.dims}")


def cmd_rate(args):
    y = read_tensor(args.tensor)
    params = read_params(args.params)
    q = quantize(y, _quant_spec(params, args.step))
    est = estimate_rate(q, params, step=args.step)
    dec = decompose_rate(q, params, args.step)
    rows = [("model", params.kind.name.lower()), ("elements", q.size),
            ("total_bits", f"{est.total_bits:.3f}"), ("bits_per_element", f"{est.bits_per_element:.3f}"),
            ("empirical_entropy", f"{dec.entropy:.6f}"), ("kl_excess", f"{dec.kl:.6f}")]
    for key, value in rows:
        print(f"{key}: {value}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([k for k, _ in rows])
            writer.writerow([v for _, v in rows])


def cmd_sweep(args):
    y = read_tensor(args.tensor)
    params = read_params(args.params)
    curve, rows = rd_sweep(y, params, steps=args.steps, peak=args.peak)
    curve.write(args.out)
    print("step,rate_bpp,mse,psnr_db")
    for r in rows:
        print(f"{r.step:g},{r.rate_bpp:.6f},{r.mse:.6g},{r.quality:.4f}")
    print(f"wrote {args.out}")


def cmd_bdrate(args):
    value = bd_rate(RdCurve.read(args.reference), RdCurve.read(args.test), args.method)
    print(f"{value:.4f}".replace("-0.0000", "0.0000"))


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    print(f"seed={args.seed} points={args.points} h={args.h}")
    rows = []
    worst = 0.0
    for fid in CHECKABLE:
        fworst = 0.0
        for _ in range(args.points):
            report = finite_difference_check(fid, random_point(fid, rng, args.h), args.h)
            fworst = max(fworst, report.max_rel_error)
            rows.append((fid, report.max_rel_error))
        print(f"{fid}: max relative error {fworst:.3g}")
        worst = max(worst, fworst)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["function", "max_rel_error"])
            writer.writerows(rows)
    if worst >= args.tol:
        print(f"FAIL: {worst:.3g} >= {args.tol:g}")
        return EXIT_NUMERIC
    print("PASS")


def cmd_selftest(args):
    print(f"seed={args.seed}")
    results = run_selftest(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail} ({r.seconds:.2f}s)")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {
    "gen": cmd_gen, "fit": cmd_fit, "encode": cmd_encode, "decode": cmd_decode,
    "rate": cmd_rate, "sweep": cmd_sweep, "bdrate": cmd_bdrate,
    "gradcheck": cmd_gradcheck, "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        pre = _Parser(add_help=False)
        pre.add_argument("--config", type=_existing)
        known, rest = pre.parse_known_args(argv)
        command = next((a for a in rest if a in subs), None)
        if known.config and command:
            _apply_config(subs[command], _read_config(known.config))
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(f"latentbin: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"latentbin: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except (FitDivergence, FloatingPointError) as exc:
        print(f"latentbin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ValueError, OSError) as exc:
        print(f"latentbin: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
