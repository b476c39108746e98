"""The ``orbit-recon`` command line.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config.main import PipelineConfig, load_config, render_default_config
from .errors import ConfigError, MissingDependency, StageFailure
from .pipeline import STAGES, Pipeline, build_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", metavar="PATH", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="Override the global seed")
    parser.add_argument("-o", "--out", metavar="DIR", help="Override the output directory")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO level")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbit-recon",
        description="Reconstruct a spacecraft surface from a monocular fly-around.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Render the synthetic fly-around only")
    _common(generate)

    run = commands.add_parser("run", help="Run every stage (cached stages are reused)")
    _common(run)
    run.add_argument("--force", action="store_true", help="Recompute cached stages")

    stage = commands.add_parser("stage", help="Run a single stage")
    stage.add_argument("name", choices=STAGES, help="Stage to run")
    _common(stage)
    stage.add_argument("--force", action="store_true", help="Recompute even when cached")

    report = commands.add_parser("report", help="Print the evaluation report of a run")
    _common(report)
    report.add_argument(
        "-f", "--format", choices=["yaml", "json"], default="yaml", help="Output format"
    )
    report.add_argument(
        "--benchmark",
        action="store_true",
        help="Also run the masked/unmasked registration benchmark (writes benchmark.csv)",
    )
    report.add_argument(
        "--seeds", type=int, nargs="+", default=[0], metavar="SEED", help="Benchmark seeds"
    )

    commands.add_parser("config", help="Print the documented default configuration")
    return parser


def _load(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(args.config, **overrides)


def _print(data, fmt: str = "yaml") -> None:
    if fmt == "json":
        print(json.dumps(data, indent=2, sort_keys=False))
    else:
        print(yaml.safe_dump(data, sort_keys=False), end="")


def _report(config: PipelineConfig, args: argparse.Namespace) -> int:
    from .evaluation import registration_benchmark, write_benchmark

    root = Path(config.output_dir)
    path = root / "evaluate" / "eval_report.json"
    data: dict = {}
    if path.exists():
        data["evaluation"] = json.loads(path.read_text(encoding="utf8"))
    if args.benchmark:
        rows = registration_benchmark(config, args.seeds, show_progress=config.show_progress)
        write_benchmark(rows, root / "evaluate" / "benchmark.csv")
        data["benchmark"] = rows
    if not data:
        print(f"no evaluation report in {root}; run `orbit-recon run` first", file=sys.stderr)
        return EXIT_STAGE
    _print(data, args.format)
    return EXIT_OK


def main(args: list[str] | None = None) -> int:
    """Entry point of the ``orbit-recon`` script."""
    parsed = make_parser().parse_args(args)
    if parsed.command == "config":
        print(render_default_config(), end="")
        return EXIT_OK
    logging.basicConfig(
        level=logging.INFO if parsed.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load(parsed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if parsed.command == "generate":
            from .scene.io import save_dataset

            dataset = build_dataset(config.dataset, config.seed, config.show_progress)
            written = save_dataset(dataset, Path(config.output_dir) / "generate")
            print(f"wrote {len(written)} files to {Path(config.output_dir) / 'generate'}")
            return EXIT_OK
        if parsed.command == "report":
            return _report(config, parsed)
        pipeline = Pipeline(config)
        if parsed.command == "stage":
            results = [pipeline.run_stage(parsed.name, force=parsed.force)]
        else:
            results = pipeline.run_all(force=parsed.force).stages
    except (StageFailure, MissingDependency) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for result in results:
        print(f"{result['stage']}: {result['status']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
