"""Command-line entry point: ``palign simulate|analyze|suite``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config, with_seed
from .errors import ConfigError, PalignError
from .experiment import EXIT_SIM_ERROR, SUITES, default_output_root, run_experiment, run_suite
from .parallel import default_threads_from_env, set_threads

EXIT_USAGE = 64


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory (default: $PALIGN_OUT or ./palign-out)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for pair sums")
    common.add_argument("--seed", type=int, default=None, help="override the initial-data seed")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="palign", description="p-alignment simulations and bound checks")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one experiment config")
    sim.add_argument("config", type=Path)
    ana = sub.add_parser("analyze", parents=[common], help="check an existing trace against a config")
    ana.add_argument("trace", type=Path)
    ana.add_argument("config", type=Path)
    st = sub.add_parser("suite", parents=[common], help="run a bundled suite")
    st.add_argument("name", help=f"one of: {', '.join(SUITES)}")
    return ap


def _print_report(res) -> None:
    for r in res.report.records:
        verdict = {True: "PASS", False: "FAIL", None: "INFO"}[r.passed]
        print(f"{verdict} {r.name:<28s} margin={r.margin:.3e}  {r.note}")
    if res.manifest["error"]:
        print(f"error: {res.manifest['error']}", file=sys.stderr)
    print(f"artifacts in {res.out_dir}")


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads if args.threads is not None else default_threads_from_env()
    if threads < 1:
        ap.error("--threads must be >= 1")
    set_threads(threads)

    if args.command == "suite":
        if args.name not in SUITES:
            ap.print_usage(sys.stderr)
            print(f"palign: unknown suite {args.name!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
            return EXIT_USAGE
        root = args.out or default_output_root()
        try:
            status, _ = run_suite(args.name, root, threads=threads, seed=args.seed, echo=print)
        except PalignError as exc:
            print(f"palign: {exc}", file=sys.stderr)
            return EXIT_SIM_ERROR
        print(f"summary in {root / args.name}")
        return status

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
    except (ConfigError, OSError) as exc:
        print(f"palign: {args.config}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "analyze" and cfg.mode != "analyze":
        print(f"palign: {args.config}: analyze needs a config with mode = 'analyze'", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "simulate" and cfg.mode == "analyze":
        print(f"palign: {args.config}: use 'palign analyze' for analyze configs", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or (Path(cfg.output.directory) if cfg.output.directory else default_output_root() / cfg.name)
    try:
        res = run_experiment(cfg, out, base_dir=args.config.parent,
                             trace_path=args.trace if args.command == "analyze" else None, threads=threads)
    except PalignError as exc:
        print(f"palign: {exc}", file=sys.stderr)
        return EXIT_SIM_ERROR
    _print_report(res)
    return res.exit_status


if __name__ == "__main__":
    sys.exit(main())
