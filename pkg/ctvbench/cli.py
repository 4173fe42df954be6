"""
Command-line entry point: one subcommand per pipeline stage plus `pipeline`.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .core.config import PipelineConfig
from .core.errors import CTVBenchError
from .core.models import Protocol
from .core.pipeline import STAGES, CTVPipeline
from .utils.logging import setup_logger

PROTOCOL_CHOICES = {
    "toto": [Protocol.TOTO],
    "loto": [Protocol.LOTO],
    "both": [Protocol.TOTO, Protocol.LOTO],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override split and training seed")
    common.add_argument("--threads", type=int, help="worker threads for per-image stages")
    common.add_argument("--protocol", choices=sorted(PROTOCOL_CHOICES), help="protocols to run (default: config)")
    common.add_argument("--workdir", type=Path, help="override paths.workdir")

    parser = argparse.ArgumentParser(prog="ctvbench", description="Cross-team validation benchmark harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "synth": "generate the synthetic multi-team dataset",
        "catalog": "scan the dataset tree into catalog.jsonl",
        "dedup": "collapse perceptual-hash duplicate groups",
        "normalize": "write the 336x336 normalized derivative",
        "split": "write TOTO/LOTO split manifests",
        "train": "train the reference classifier on every fold",
        "eval": "score prediction CSVs into run results",
        "report": "emit result tables, heatmap and curves",
    }
    for stage in STAGES:
        stage_parser = sub.add_parser(stage, parents=[common], help=helps[stage])
        if stage == "eval":
            stage_parser.add_argument(
                "--predictions", type=Path, help="directory of <protocol>_<team>_<partition>.csv files"
            )
    sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    config = config.with_overrides(seed=args.seed, threads=args.threads)
    if args.workdir is not None:
        config = config.model_copy(update={"paths": config.paths.model_copy(update={"workdir": args.workdir})})
    return config


def run(args: argparse.Namespace) -> str:
    """Execute one subcommand and return the line printed on success."""
    protocols = PROTOCOL_CHOICES[args.protocol] if args.protocol else None
    pipeline = CTVPipeline(load_config(args), protocols)
    command = args.command
    if command == "synth":
        return f"dataset written to {pipeline.synth()}"
    if command == "catalog":
        catalog = pipeline.catalog()
        return f"catalogued {len(catalog)} images from {len(catalog.teams)} teams"
    if command == "dedup":
        result = pipeline.dedup()
        return f"{len(result.groups)} duplicate groups, {len(result.removed_ids)} records removed"
    if command == "normalize":
        report = pipeline.normalize()
        return f"normalized {report.images_processed} images ({len(report.failures)} failures)"
    if command == "split":
        return f"wrote {len(pipeline.split())} manifests"
    if command == "train":
        return f"trained {len(pipeline.train())} folds"
    if command == "eval":
        results = pipeline.evaluate(args.predictions)
        return ", ".join(f"{p.value}: {len(runs)} runs" for p, runs in results.items())
    if command == "report":
        return f"reports written to {pipeline.report()}"
    return f"pipeline complete, reports in {pipeline.run_all()}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logger()
    try:
        print(run(args))
    except (CTVBenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
