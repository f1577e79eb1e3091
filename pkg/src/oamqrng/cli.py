"""Command-line interface: ``oamqrng <verb> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_REJECTED = 1  # the battery ran and at least one test failed
EXIT_CONFIG = 2
STAGE_EXIT = {"simulate": 10, "decode": 11, "estimate": 12, "extract": 13, "test": 14, "semidi": 15}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subparser copies must not reset values given before the verb
    def default(v):
        return argparse.SUPPRESS if suppress else v

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=default(None), help="flat key = value configuration file")
    common.add_argument("--preset", default=default(None), help="built-in parameter preset, e.g. paper-2022")
    common.add_argument("--seed", type=int, default=default(None), help="simulator RNG seed (overrides run.seed)")
    common.add_argument("--out", type=Path, default=default(Path("out")), help="output directory (default: out)")
    common.add_argument(
        "--set", action="append", default=default([]), metavar="KEY=VALUE", help="override one config key"
    )
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def _parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="oamqrng", description=__doc__, parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate detection events")
    s = sub.add_parser("decode", parents=[common], help="decode events into symbols")
    s.add_argument("--events", type=Path)
    s = sub.add_parser("estimate", parents=[common], help="estimate conditional min-entropy")
    s.add_argument("--symbols", type=Path)
    s = sub.add_parser("extract", parents=[common], help="Toeplitz privacy amplification")
    s.add_argument("--symbols", type=Path)
    s.add_argument("--entropy", type=Path)
    s = sub.add_parser("test", parents=[common], help="run the statistical battery")
    s.add_argument("--bits", type=Path)
    s.add_argument("--n-bits", type=int)
    s = sub.add_parser("semidi", parents=[common], help="seeded multi-input analysis")
    s.add_argument("--model", type=Path)
    s.add_argument("--observed", type=Path, nargs="*")
    sub.add_parser("run-all", parents=[common], help="run every stage")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    try:
        cfg = load_config(args.config, args.preset, overrides).validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out
    try:
        if args.verb == "show-config":
            print(cfg.echo(), end="")
        elif args.verb == "simulate":
            s = pipeline.cmd_simulate(cfg, out)
            print(f"{s['simulate.n_events']} events from {s['simulate.n_pulses']} pulses -> {out / pipeline.EVENTS}")
        elif args.verb == "decode":
            s = pipeline.cmd_decode(cfg, out, args.events)
            print(f"{sum(s['decode.symbol_counts'])} valid symbols -> {out / pipeline.SYMBOLS}")
        elif args.verb == "estimate":
            r = pipeline.cmd_estimate(cfg, out, args.symbols)
            print(f"H_min = {r.hmin_point:.6f}, lower bound {r.hmin_lower_bound:.6f} bits/symbol")
        elif args.verb == "extract":
            meta, _ = pipeline.cmd_extract(cfg, out, args.symbols, args.entropy)
            print(f"{meta['extract.output_bits']} bits -> {out / pipeline.BITS}")
        elif args.verb == "test":
            report = pipeline.cmd_test(cfg, out, args.bits, args.n_bits)
            print((out / pipeline.BATTERY_TXT).read_text(), end="")
            return EXIT_OK if report.passed else EXIT_REJECTED
        elif args.verb == "semidi":
            pipeline.cmd_semidi(cfg, out, args.model, args.observed)
            print((out / pipeline.SEMIDI_TXT).read_text(), end="")
        elif args.verb == "run-all":
            report = pipeline.cmd_run_all(cfg, out)
            print((out / "report.txt").read_text(), end="")
            if str(report.get("battery.status", "")).startswith("failed"):
                return EXIT_REJECTED
    except pipeline.StageError as exc:
        print(f"error in {exc}", file=sys.stderr)
        return STAGE_EXIT[exc.stage]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
