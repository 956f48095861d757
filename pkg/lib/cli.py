"""
Command Line Interface

Subcommands:
    run       run an experiment from a YAML config or a preset
    estimate  convert a guess tally into an epsilon lower bound
    report    write csv / json / table reports from a run directory
    sweep     re-run a budget sweep on persisted scores

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from .config import PRESETS, log_level, resolve
from .errors import AuditError, ConfigurationError
from .estimator import eps_lower_bound
from .harness import AuditRunner, default_run_dir, sweep_from_scores
from .report import format_table, load_result, report
from .schemas import AuditOutcome


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_config_source(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=str, help="Path to a YAML experiment config")
    source.add_argument("--preset", type=str, choices=sorted(PRESETS), help="Named preset config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audit", description="One-run differential privacy auditing")
    parser.add_argument("--log-level", type=str, default=None,
                        help="Logging level (default: DPAUDIT_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment")
    _add_config_source(run)
    run.add_argument("--trials", type=int, default=None, help="Override the number of trials")
    run.add_argument("--seed", type=int, default=None, help="Override base_seed")
    run.add_argument("--out", type=str, default=None, help="Run directory (default: runs/<name>)")
    run.add_argument("--no-progress", action="store_true", help="Hide the trial progress bar")

    est = sub.add_parser("estimate", help="Epsilon lower bound for a guess tally")
    est.add_argument("--guesses", type=int, required=True, help="Number of guesses k")
    est.add_argument("--correct", type=int, required=True, help="Number of correct guesses c")
    est.add_argument("--arity", type=int, default=2, help="Game arity K (2 for the binary game)")
    est.add_argument("--alpha", type=float, default=0.05, help="Significance level")

    rep = sub.add_parser("report", help="Write a report from a run directory")
    rep.add_argument("--in", dest="in_dir", type=str, required=True, help="Run directory")
    rep.add_argument("--format", type=str, choices=["csv", "json", "table"], default="table")
    rep.add_argument("--out", type=str, default=None, help="Output directory (default: the run directory)")

    swp = sub.add_parser("sweep", help="Re-run a budget sweep on persisted scores")
    _add_config_source(swp)
    swp.add_argument("--game", type=str, choices=["binary", "kary"], required=True)
    swp.add_argument("--in", dest="in_dir", type=str, default=None,
                     help="Run directory (default: the config's run directory)")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve(args.config, args.preset, trials=args.trials, base_seed=args.seed)
    out_dir = Path(args.out) if args.out else default_run_dir(config)
    logger.info("running '%s': %d trials, base_seed=%d", config.name, config.trials, config.base_seed)
    result = AuditRunner(config, progress=not args.no_progress).run(out_dir)
    print(format_table(result), end="")
    print(f"Run directory: {out_dir}")
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    outcome = AuditOutcome(k=args.guesses, c=args.correct, K=args.arity, alpha=args.alpha)
    bound = eps_lower_bound(outcome, method="or" if args.arity == 2 else "or_fdp")
    print(f"eps_lb = {bound.eps:.4f}  (k={outcome.k}, c={outcome.c}, K={outcome.K}, alpha={outcome.alpha})")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    result = load_result(args.in_dir)
    path = report(result, args.format, args.out or args.in_dir)
    if args.format == "table":
        print(path.read_text(), end="")
    print(f"Wrote {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve(args.config, args.preset)
    run_dir = Path(args.in_dir) if args.in_dir else default_run_dir(config)
    sweeps = sweep_from_scores(config, args.game, run_dir)

    rows = []
    for trial, by_method in sweeps.items():
        for method, sweep in by_method.items():
            for point in sweep.curve:
                rows.append({
                    "trial": trial,
                    "method": method,
                    "budget": point.budget,
                    "k": point.k,
                    "c": point.c,
                    "eps": point.eps,
                    "best": point.eps == sweep.best.eps and point.k == sweep.best.outcome.k,
                })
    frame = pd.DataFrame(rows)
    path = run_dir / f"sweep_{args.game}.csv"
    frame.to_csv(path, index=False, lineterminator="\r\n")

    best = frame.groupby(["trial", "method"], sort=True)["eps"].max().unstack("method")
    print(best.to_string(float_format=lambda v: f"{v:.4f}"))
    print(f"Wrote {path}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "estimate": cmd_estimate,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    logging.basicConfig(
        level=(args.log_level or log_level()).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValidationError) as e:
        logger.error("configuration error: %s", e)
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AuditError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("unexpected failure")
        print(f"unexpected error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
