import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from stochastic_mtt.analysis import FAILED, OK, RunOutcome, runs_frame, summarize_runs
from stochastic_mtt.config import FilterSpec, RunConfig, load_config, resolve_output_dir
from stochastic_mtt.errors import ConfigError, TrackingError
from stochastic_mtt.io import (
    detections_frame,
    save_json,
    truth_frame,
    write_csv,
    write_trace,
)
from stochastic_mtt.logger import setup_logger
from stochastic_mtt.metrics import compute_metric_series
from stochastic_mtt.performance import track_performance
from stochastic_mtt.scenarios import (
    GroundTruthPath,
    Scan,
    initial_track_states,
    simulate_class_a,
    simulate_class_b,
)
from stochastic_mtt.tracker import ScanLog, run_tracker

logger = logging.getLogger(__name__)


def parse_args(args=None):
    """Parse command line arguments.

    Args:
        args: Optional list of arguments to parse. If None, uses sys.argv[1:].
    """
    parser = argparse.ArgumentParser(
        prog="stochastic_mtt",
        description="Batch multi-target tracking experiments with EKF/UKF/CKF/SIF trackers.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "Run every filter over every seed and write metrics"),
        ("validate", "Check a run configuration and exit"),
        ("simulate", "Write truth and detections only"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", help="Path to the YAML run configuration")
        command.add_argument(
            "--seed",
            type=int,
            action="append",
            help="Seed to run instead of the configured list (repeatable)",
        )
        command.add_argument("--out", help="Output directory (overrides the config)")
        command.add_argument("--workers", type=int, help="Parallel worker processes")
        command.add_argument(
            "--trace",
            action="store_true",
            default=None,
            help="Write per-scan tracker traces as NDJSON",
        )
        command.add_argument("--log-file", help="Also write the log to this file")
        command.add_argument(
            "--log-level",
            default="INFO",
            help="Logging level (default: INFO)",
        )
    return parser.parse_args(args)


def run_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent scenario and tracker generators derived from one seed."""
    scenario_seq, tracker_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(scenario_seq), np.random.default_rng(tracker_seq)


def build_scenario(
    config: RunConfig, rng: np.random.Generator
) -> Tuple[List[GroundTruthPath], List[Scan]]:
    if config.scenario == "class_b":
        scenario = simulate_class_b(config.class_b, rng)
    else:
        scenario = simulate_class_a(config.class_a, rng)
    return scenario.paths, scenario.scans


@dataclass
class RunRecord:
    outcome: RunOutcome
    frame: Optional[pd.DataFrame] = None
    logs: Optional[List[ScanLog]] = None


def execute_run(config: RunConfig, spec: FilterSpec, seed: int) -> RunRecord:
    (
        " One isolated (filter, seed) run: scenario from the seed's"
        " scenario stream, tracker from its tracker stream, metrics"
        " over confirmed tracks. Tracking and numerical errors mark the"
        " run failed."
    )
    scenario_rng, tracker_rng = run_streams(seed)
    try:
        paths, scans = build_scenario(config, scenario_rng)
        scenario = config.class_b if config.scenario == "class_b" else config.class_a
        initial = []
        if config.tracker.initiation == "truth" and scans:
            start = min(float(p.times[0]) for p in paths) if paths else scans[0][0]
            initial = initial_track_states(paths, scenario.prior_cov(), start, tracker_rng)
        result = run_tracker(
            scans,
            config.tracker,
            spec.kind,
            seed=tracker_rng,
            dynamics=scenario.tracker_dynamics(),
            initial_states=initial,
        )
        series = compute_metric_series(paths, result, spec.label, config.ospa, config.cutoff)
    except (TrackingError, ArithmeticError, np.linalg.LinAlgError) as exc:
        logger.error(f"Run {spec.label} seed {seed} failed: {exc}")
        return RunRecord(RunOutcome(spec.label, seed, status=FAILED, error=str(exc)))

    outcome = RunOutcome(
        label=spec.label,
        seed=seed,
        status=OK,
        averages=series.time_averages(),
        ambiguity=series.ambiguity,
        position_accuracy=series.position_accuracy,
        deletions=len(result.deletions),
        repairs=result.diagnostics.repairs,
        rejections=result.diagnostics.rejections,
    )
    return RunRecord(outcome, series.to_frame(), result.logs if config.trace else None)


def _grid(config: RunConfig) -> List[Tuple[FilterSpec, int]]:
    return [(spec, seed) for spec in config.filters for seed in config.seeds]


@track_performance
def run_grid(config: RunConfig) -> List[RunRecord]:
    """Every (filter, seed) run, returned in grid order whatever the worker count."""
    grid = _grid(config)
    logger.info(
        f"Running {len(grid)} run(s): {len(config.filters)} filter(s) x "
        f"{len(config.seeds)} seed(s) on {config.workers} worker(s)"
    )
    if config.workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(execute_run, config, spec, seed) for spec, seed in grid]
            for _ in tqdm(as_completed(futures), total=len(futures), desc="runs", disable=None):
                pass
            return [future.result() for future in futures]
    return [
        execute_run(config, spec, seed)
        for spec, seed in tqdm(grid, desc="runs", disable=None)
    ]


def write_outputs(records: Sequence[RunRecord], output_dir: Path, trace: bool) -> None:
    for record in records:
        outcome = record.outcome
        stem = f"{outcome.label}_seed{outcome.seed}"
        if record.frame is not None:
            write_csv(record.frame, output_dir / "metrics" / f"{stem}.csv")
        if trace and record.logs is not None:
            write_trace(record.logs, output_dir / "traces" / f"{stem}.ndjson")
    outcomes = [record.outcome for record in records]
    write_csv(runs_frame(outcomes), output_dir / "runs.csv")
    write_csv(summarize_runs(outcomes), output_dir / "summary.csv")


def create_output_directory(output_dir: Path) -> Path:
    """Create output directory if it doesn't exist."""
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"Cannot create output directory {output_dir}: {exc}") from exc
    return output_dir


def command_run(config: RunConfig, output_dir: Path) -> int:
    create_output_directory(output_dir)
    save_json(config.summary(), output_dir / "run_config.json")
    records = run_grid(config)
    write_outputs(records, output_dir, config.trace)

    failed = [r.outcome for r in records if r.outcome.failed]
    logger.info(f"Results saved to {output_dir}")
    if failed:
        logger.warning(f"{len(failed)} of {len(records)} run(s) failed")
    if len(failed) == len(records):
        logger.error("Every run failed")
        return 1
    return 0


def command_simulate(config: RunConfig, output_dir: Path) -> int:
    create_output_directory(output_dir)
    for seed in config.seeds:
        scenario_rng, _ = run_streams(seed)
        try:
            paths, scans = build_scenario(config, scenario_rng)
        except TrackingError as exc:
            logger.error(f"Scenario for seed {seed} failed: {exc}")
            return 1
        write_csv(truth_frame(paths), output_dir / f"truth_seed{seed}.csv")
        write_csv(detections_frame(scans), output_dir / f"detections_seed{seed}.csv")
        logger.info(
            f"Seed {seed}: {len(paths)} truth path(s), "
            f"{sum(len(d) for _, d in scans)} detection(s)"
        )
    logger.info(f"Scenario data saved to {output_dir}")
    return 0


def main(argv=None) -> int:
    """Main CLI entry point; returns the process exit status."""
    args = parse_args(argv)
    setup_logger(args.log_file, args.log_level)

    try:
        config = load_config(args.config).with_overrides(
            seeds=args.seed, workers=args.workers, trace=args.trace
        )
        output_dir = resolve_output_dir(config, args.out)
        logger.info(f"Configuration: {args.config} ({config.scenario})")

        if args.command == "validate":
            labels = ", ".join(spec.label for spec in config.filters)
            logger.info(f"Configuration is valid: filters [{labels}], seeds {config.seeds}")
            return 0
        if args.command == "simulate":
            return command_simulate(config, output_dir)
        return command_run(config, output_dir)
    except ConfigError as exc:
        logger.error(exc.render())
        return 2


if __name__ == "__main__":
    sys.exit(main())
