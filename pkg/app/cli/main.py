"""
Command-line entry point
synth, train, recommend, evaluate, select and config subcommands over one run config
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from app.core.config import RunConfig, dump_run_config, load_run_config, settings
from app.core.database import RunLedger, open_ledger
from app.core.exceptions import CourseRecError
from app.core.logging import configure_logging, get_logger
from app.models.schemas import RecommendationRow
from app.services.pipeline import Pipeline

_log = get_logger(__name__)


def _global_options(defaults: bool) -> argparse.ArgumentParser:
    """Flags accepted both before and after the subcommand"""
    default = (lambda value: value) if defaults else (lambda value: argparse.SUPPRESS)
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", default=default(None), help="flat key = value run config file")
    parser.add_argument("--seed", type=int, default=default(None), help="override the config seed")
    parser.add_argument("--threads", type=int, default=default(None), help="worker threads for select")
    parser.add_argument("--emit-histogram", action="store_true", default=default(False),
                        help="also write the grade-deviation histogram (evaluate)")
    parser.add_argument("--log-level", default=default(None), help="logging level (default from LOG_LEVEL)")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="courserec",
        description=settings.DESCRIPTION,
        parents=[_global_options(defaults=True)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    common = _global_options(defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    sub.add_parser("train", parents=[common], help="fit and store the configured method")

    rec = sub.add_parser("recommend", parents=[common], help="top-n courses for one student and term")
    rec.add_argument("--student", required=True)
    rec.add_argument("--term", required=True, type=int)
    rec.add_argument("--n", type=int, default=5)
    rec.add_argument("--output", help="CSV file (default stdout)")

    sub.add_parser("evaluate", parents=[common], help="evaluate configured methods on the held-out split")
    sub.add_parser("select", parents=[common], help="grid search on the validation split")

    cfg = sub.add_parser("config", parents=[common], help="show the effective configuration")
    cfg.add_argument("--dump", action="store_true", help="print every key in config file format")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = args.config
    if path is None and Path(settings.DEFAULT_CONFIG_FILE).exists():
        path = settings.DEFAULT_CONFIG_FILE
    overrides = {"seed": args.seed, "threads": args.threads}
    return load_run_config(Path(path) if path else None, overrides)


def _write_rows(rows: List[RecommendationRow], output: Optional[str]):
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=list(RecommendationRow.model_fields))
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(output, index=False, float_format="%.10g", lineterminator="\n")
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.10g", lineterminator="\n")


def run_command(args: argparse.Namespace, config: RunConfig, ledger: Optional[RunLedger] = None) -> str:
    """Execute one subcommand; returns a short status message"""
    pipeline = Pipeline(config)
    if args.command == "synth":
        written = pipeline.synth()
        return f"wrote {', '.join(str(p) for p in written)}"
    if args.command == "train":
        written = pipeline.train()
        return f"wrote {len(written)} model file(s) to {config.paths.model_dir}"
    if args.command == "recommend":
        rows = pipeline.recommend(args.student, args.term, args.n)
        _write_rows(rows, args.output)
        return f"{len(rows)} recommendation(s) for {args.student}"
    if args.command == "evaluate":
        written = pipeline.evaluate(emit_histogram=args.emit_histogram)
        return f"wrote {len(written)} report file(s) to {config.paths.report_dir}"
    if args.command == "select":
        trials, best = pipeline.select(threads=config.threads)
        if ledger is not None:
            ledger.bulk_insert_trials(trials)
        pd.DataFrame(best).to_csv(sys.stdout, index=False, float_format="%.10g", lineterminator="\n")
        return f"selected {len(best)} configuration(s)"
    raise ValueError(f"unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.LOG_LEVEL)
    try:
        config = resolve_config(args)
        if args.command == "config":
            sys.stdout.write(dump_run_config(config))
            return 0
    except CourseRecError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    ledger = None
    try:
        ledger = open_ledger(config.paths.database)
        message = run_command(args, config, ledger)
    except CourseRecError as e:
        print(f"error: {e}", file=sys.stderr)
        if ledger is not None:
            ledger.log_run(args.command, "error", str(e), config.seed)
        return e.exit_code
    _log.info(message)
    if ledger is not None:
        ledger.log_run(args.command, "ok", message, config.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
