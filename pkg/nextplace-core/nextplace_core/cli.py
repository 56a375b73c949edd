# Copyright 2025-present NextPlace Contributors.
# Licensed under the Apache License, Version 2.0.
# See http://www.apache.org/licenses/LICENSE-2.0 for details.

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .config import ExperimentConfig, load_experiment_config
from .ingest import dataset_statistics, write_stays_jsonl
from .runner import (
    ablate,
    casestudy,
    evaluate,
    evaluate_by_user,
    load_sequences,
    report,
    report_files,
    run_repeats,
)
from .samples import build_test_samples
from .utils.exceptions import NextPlaceException
from .utils.loggings import configure_logging, get_logger

logger = get_logger(__name__)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Flat key-value experiment config")
    common.add_argument("--output-dir", type=Path, default=None, help="Directory for results and reports")
    common.add_argument("--predictor", choices=["llm", "mock", "1mmc", "topfreq"], default=None)
    common.add_argument("--k", type=int, default=None, help="Number of places to request")
    common.add_argument("--template", default=None, help="Prompt template id")
    common.add_argument(
        "--limit", type=int, default=None, help="Only a random subset of N samples, drawn with the config seed"
    )
    common.add_argument("--stays", type=Path, default=None, help="Stay table (overrides the config)")
    common.add_argument("--tracks", type=Path, default=None, help="Track-point CSV (overrides the config)")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--json-logs", action="store_true", help="Emit logs as JSON lines")
    common.add_argument("--quiet", action="store_true", help="Hide the progress bar")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="nextplace", description="Next-location prediction with prompted LLMs")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="Load or detect stays and print dataset statistics")
    sub.add_parser("run", parents=[common], help="Predict every test sample (resumable)")

    evaluate_parser = sub.add_parser("evaluate", parents=[common], help="Metrics of a results file")
    evaluate_parser.add_argument("results", type=Path)
    evaluate_parser.add_argument("--by-user", action="store_true", help="One row per user")

    sub.add_parser("ablate", parents=[common], help="Run all prompt variants")

    report_parser = sub.add_parser("report", parents=[common], help="Tabulate several results files")
    report_parser.add_argument("results", type=Path, nargs="+")
    report_parser.add_argument("--out", type=Path, default=None, help="CSV path (default <output-dir>/report.csv)")

    case_parser = sub.add_parser("casestudy", parents=[common], help="Show one sample side by side")
    case_parser.add_argument("results", type=Path)
    case_parser.add_argument("--sample-id", required=True)
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "stays_path": args.stays,
        "tracks_path": args.tracks,
        "output_dir": args.output_dir,
        "predictor": args.predictor,
        "prompt.k": args.k,
        "prompt.template_id": args.template,
        "sample_limit": args.limit,
    }
    return load_experiment_config(args.config, overrides)


def _output_dir(args: argparse.Namespace) -> Path:
    return args.output_dir or Path("outputs")


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.check_paths()
    sequences = load_sequences(cfg)
    samples, _, build_stats = build_test_samples(sequences, cfg.window, cfg.ingest)
    stats = dataset_statistics(sequences, len(samples))
    if cfg.stays_path is None:
        write_stays_jsonl(sequences, cfg.output_dir / "stays.jsonl")
    payload = {"statistics": stats.model_dump(), "samples": build_stats.model_dump()}
    (cfg.output_dir / "dataset_statistics.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(stats.to_table())
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = run_repeats(cfg, show_progress=not args.quiet)
    for path in paths:
        print(path)
    print(report_files(paths, cfg.output_dir / f"{paths[0].stem}.csv"))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.by_user:
        text, _ = report(list(evaluate_by_user(args.results).values()))
    else:
        text, _ = report([evaluate(args.results)])
    print(text)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    reports = ablate(cfg, show_progress=not args.quiet)
    text, _ = report(list(reports.values()))
    print(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    out = args.out or _output_dir(args) / "report.csv"
    print(report_files(args.results, out))
    return 0


def cmd_casestudy(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    print(casestudy(cfg, args.results, args.sample_id))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "casestudy": cmd_casestudy,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json_logs=args.json_logs)
    try:
        return COMMANDS[args.command](args)
    except NextPlaceException as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
