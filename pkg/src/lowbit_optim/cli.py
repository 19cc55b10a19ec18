"""Command-line entry point: tables, predicates, simulations, and training.

Every subcommand prints a single JSON document (CSV is opt-in via
``--format csv`` where a row-oriented view exists) that echoes its fully
resolved configuration next to the results, so any output file is
self-describing.  All randomized subcommands are deterministic given
``--seed``.

Exit codes: 0 on success, 2 on usage errors (unknown subcommand, invalid
flag combination, missing flags), 3 on validation or reproduction failure.
Relative ``--output`` paths resolve against the directory named by the
``LOWBIT_OPTIM_OUT`` environment variable (default: current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import acceptance, packed_state
from .ema_engine import swamping_beta_threshold
from .harness import (
    LognormalSquareSignal,
    decay_experiment,
    make_linear_regression,
    make_logistic_regression,
    make_mlp,
    tracking_benchmark,
    train,
    uniform_signal_experiment,
)
from .levels import SchemeKind, radius_stats, table_for
from .optimizers import OptimizerSpec, PRESET_NAMES, beta_prime, preset
from .quantizer import BlockQuantization, RoundingMode

__all__ = ["main", "entry", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "LOWBIT_OPTIM_OUT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3

_SCHEME_FLAGS = {
    ("linear", False): SchemeKind.LINEAR_UNSIGNED,
    ("linear", True): SchemeKind.LINEAR_SIGNED,
    ("linear-nozero", False): SchemeKind.LINEAR_UNSIGNED_NOZERO,
    ("de", False): SchemeKind.DE_UNSIGNED,
    ("de", True): SchemeKind.DE_SIGNED,
    ("log", False): SchemeKind.LOG_UNSIGNED,
}

_MODEL_MAKERS = {
    "linreg": make_linear_regression,
    "logreg": make_logistic_regression,
    "mlp": make_mlp,
}


def _resolve_scheme(parser: argparse.ArgumentParser, scheme: str, signed: bool) -> SchemeKind:
    try:
        return _SCHEME_FLAGS[(scheme, signed)]
    except KeyError:
        parser.error(f"scheme '{scheme}' does not support --signed={signed}; "
                     "valid: linear [--signed], linear-nozero, de [--signed], log")


def _quantization_from_flags(parser, args, default_mode: RoundingMode) -> BlockQuantization:
    scheme = _resolve_scheme(parser, args.scheme, args.signed)
    table = table_for(scheme, args.bits, getattr(args, "base", None))
    mode = default_mode
    if getattr(args, "mode", None):
        mode = RoundingMode(args.mode)
    if mode is RoundingMode.LOG_DITHER and not scheme.is_log:
        parser.error("--mode log_dither requires --scheme log")
    return BlockQuantization(table=table, mode=mode, block_size=args.block_size,
                             p_quantile=getattr(args, "p", 0.1))


def _emit(args, document: dict) -> None:
    payload = json.dumps(document, indent=2, sort_keys=True)
    if getattr(args, "format", "json") == "csv":
        payload = _to_csv(document)
    if getattr(args, "output", None):
        out_dir = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
        path = Path(args.output)
        if not path.is_absolute():
            path = out_dir / path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(payload + "\n")
        print(str(path))
    else:
        print(payload)


def _to_csv(document: dict) -> str:
    rows = document.get("results", {}).get("rows")
    if not rows:
        # degenerate flat view: one row of the scalar results
        scalars = {k: v for k, v in document.get("results", {}).items()
                   if isinstance(v, (int, float, str, bool))}
        rows = [scalars]
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row.get(k, "")) for k in header))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_radii(parser, args) -> dict:
    scheme = _resolve_scheme(parser, args.scheme, args.signed)
    table = table_for(scheme, args.bits, args.base)
    stats = radius_stats(table)
    return {
        "command": "radii",
        "config": {"scheme": scheme.value, "bits": args.bits, "signed": args.signed,
                   "base": args.base},
        "results": {"r_min": stats.r_min, "r_median": stats.r_median, "r_max": stats.r_max},
    }


def _cmd_beta_prime(parser, args) -> dict:
    value = beta_prime(args.beta, args.from_bits, args.to_bits)
    return {
        "command": "beta-prime",
        "config": {"beta": args.beta, "from_bits": args.from_bits, "to_bits": args.to_bits},
        "results": {"beta_prime": value},
    }


def _cmd_swamp(parser, args) -> dict:
    scheme = _resolve_scheme(parser, args.scheme, args.signed)
    if scheme.is_log:
        parser.error("swamping thresholds apply to nearest-rounded tables, not --scheme log")
    stats = radius_stats(table_for(scheme, args.bits))
    threshold = swamping_beta_threshold(stats, signed=args.signed, radius_choice=args.radius)
    return {
        "command": "swamp",
        "config": {"scheme": scheme.value, "bits": args.bits, "signed": args.signed,
                   "radius": args.radius},
        "results": {"threshold": threshold},
    }


def _cmd_ema_sim(parser, args) -> dict:
    quantization = None
    if args.scheme != "fp32":
        quantization = _quantization_from_flags(
            parser, args,
            RoundingMode.LOG_DITHER if args.scheme == "log" else RoundingMode.NEAREST,
        )
    report = uniform_signal_experiment(args.n, args.beta, quantization, args.iters, args.seed)
    return {
        "command": "ema-sim",
        "config": report.to_dict()["config"] | {"seed": args.seed},
        "results": report.to_dict()["final"] | {"rows": report.to_dict()["iterations"]},
    }


def _cmd_decay(parser, args) -> dict:
    mean = decay_experiment(args.c, args.s, args.trials, args.seed, bits=args.bits)
    return {
        "command": "decay",
        "config": {"c": args.c, "s": args.s, "trials": args.trials, "seed": args.seed,
                   "bits": args.bits},
        "results": {"mean_iterations": mean, "expected": args.c * args.s},
    }


def _cmd_track(parser, args) -> dict:
    schemes: list[tuple[str, BlockQuantization | None]] = [("fp32", None)]
    schemes.append(("linear2-nearest",
                    BlockQuantization(table_for(SchemeKind.LINEAR_UNSIGNED, 2),
                                      RoundingMode.NEAREST)))
    schemes.append(("de2-nearest",
                    BlockQuantization(table_for(SchemeKind.DE_UNSIGNED, 2),
                                      RoundingMode.NEAREST)))
    schemes.append(("log2-dither",
                    BlockQuantization(table_for(SchemeKind.LOG_UNSIGNED, 2),
                                      RoundingMode.LOG_DITHER, p_quantile=args.p)))
    signal = LognormalSquareSignal(n=args.n)
    report = tracking_benchmark(signal, schemes, args.block_sizes, args.steps, args.seed,
                                beta=args.beta)
    doc = report.to_dict()
    summary = {}
    for row in doc["iterations"]:
        key = f"{row['scheme']}@{row['block_size']}"
        summary.setdefault(key, []).append(row["mae"])
    return {
        "command": "track",
        "config": doc["config"] | {"seed": args.seed},
        "results": {
            "mean_mae": {k: float(np.mean(v)) for k, v in summary.items()},
            "final_mae": {k: v[-1] for k, v in summary.items()},
            "rows": doc["iterations"],
        },
    }


def _cmd_train(parser, args) -> dict:
    spec = OptimizerSpec(family=args.family, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                         weight_decay=args.weight_decay)
    if args.preset:
        spec = preset(args.preset, spec)
        if args.beta1_override is not None:
            spec = replace(spec, beta1=args.beta1_override)
    model = _MODEL_MAKERS[args.model](args.seed)
    report = train(model, spec, args.steps, args.seed, batch_size=args.batch_size)
    doc = report.to_dict()
    return {
        "command": "train",
        "config": doc["config"] | {"seed": args.seed, "preset": args.preset},
        "results": doc["final"] | {"rows": doc["iterations"]},
    }


def _cmd_pack_info(parser, args) -> dict:
    scheme = _resolve_scheme(parser, args.scheme, args.signed)
    mode = RoundingMode.LOG_DITHER if scheme.is_log else RoundingMode.NEAREST
    cfg = BlockQuantization(table_for(scheme, args.bits), mode, args.block_size)
    rng = np.random.default_rng(args.seed)
    values = np.abs(rng.normal(size=args.length)) if not scheme.signed \
        else rng.normal(size=args.length)
    state = packed_state.from_values(values, cfg, rng)
    return {
        "command": "pack-info",
        "config": {"scheme": scheme.value, "bits": args.bits, "block_size": args.block_size,
                   "length": args.length, "seed": args.seed},
        "results": packed_state.footprint_report(state),
    }


def _cmd_repro(parser, args) -> dict:
    results = acceptance.run_all()
    rows = [
        {"id": r.id, "name": r.name, "passed": r.passed,
         "seconds": round(r.seconds, 3), "details": r.details}
        for r in results
    ]
    for row in rows:
        status = "PASS" if row["passed"] else "FAIL"
        print(f"[{status}] criterion {row['id']:2d} ({row['seconds']:7.2f}s): {row['name']}",
              file=sys.stderr)
    return {
        "command": "repro",
        "config": {"criteria": sorted(acceptance.CRITERIA)},
        "results": {"all_passed": all(r.passed for r in results), "rows": rows},
    }


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common_output(sub):
    sub.add_argument("--output", help="write the document to this file instead of stdout "
                                      f"(relative paths resolve under ${OUTPUT_DIR_ENV})")
    sub.add_argument("--format", choices=("json", "csv"), default="json",
                     help="output format (default json; csv emits the row-oriented view)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowbit-optim",
        description="Ultra-low-bit quantized optimizer state: tables, predicates, "
                    "simulations, and toy training runs.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("radii", help="radius statistics of a level table")
    p.add_argument("--scheme", required=True, choices=("linear", "linear-nozero", "de", "log"))
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--base", type=float, default=None, help="log base (log scheme only)")
    _add_common_output(p)
    p.set_defaults(handler=_cmd_radii)

    p = subs.add_parser("beta-prime", help="reduced momentum preserving the noise budget")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--from", dest="from_bits", type=int, required=True, metavar="BITS")
    p.add_argument("--to", dest="to_bits", type=int, required=True, metavar="BITS")
    _add_common_output(p)
    p.set_defaults(handler=_cmd_beta_prime)

    p = subs.add_parser("swamp", help="momentum threshold above which signals are swamped")
    p.add_argument("--scheme", required=True, choices=("linear", "linear-nozero", "de"))
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--radius", choices=("min", "median"), default="min")
    _add_common_output(p)
    p.set_defaults(handler=_cmd_swamp)

    p = subs.add_parser("ema-sim", help="single-block EMA of uniform signals")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--beta", type=float, default=0.999)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", default="log",
                   choices=("fp32", "linear", "linear-nozero", "de", "log"))
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--mode", choices=[m.value for m in RoundingMode], default=None)
    p.add_argument("--block-size", type=int, default=128,
                   help="ignored: the experiment always quantizes the tensor as one block")
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--base", type=float, default=None)
    _add_common_output(p)
    p.set_defaults(handler=_cmd_ema_sim)

    p = subs.add_parser("decay", help="zero-signal decay chain hitting times")
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=int, default=8)
    _add_common_output(p)
    p.set_defaults(handler=_cmd_decay)

    p = subs.add_parser("track", help="state-tracking error against the exact EMA")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--beta", type=float, default=0.999)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block-sizes", type=int, nargs="+", default=[128, 2048])
    p.add_argument("--p", type=float, default=0.1)
    _add_common_output(p)
    p.set_defaults(handler=_cmd_track)

    p = subs.add_parser("train", help="toy-model training run")
    p.add_argument("--model", choices=sorted(_MODEL_MAKERS), default="logreg")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=("adam", "adamw", "adabelief"), default="adam")
    p.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta1-override", type=float, default=None,
                   help="override the preset's first-moment momentum")
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=32)
    _add_common_output(p)
    p.set_defaults(handler=_cmd_train)

    p = subs.add_parser("pack-info", help="footprint accounting of a packed state tensor")
    p.add_argument("--scheme", required=True, choices=("linear", "linear-nozero", "de", "log"))
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--length", type=int, default=1024)
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    _add_common_output(p)
    p.set_defaults(handler=_cmd_pack_info)

    p = subs.add_parser("repro", help="run the full reproduction suite")
    _add_common_output(p)
    p.set_defaults(handler=_cmd_repro)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        document = args.handler(parser, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _emit(args, document)
    if args.command == "repro" and not document["results"]["all_passed"]:
        return EXIT_VALIDATION
    return EXIT_OK


def entry() -> None:  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":
    entry()
