"""Experiment campaigns: Monte Carlo comparisons, horizon sweeps, DFAA ablation and robustness."""

import json
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import humanize
import numpy as np

from .config import ExperimentConfig, write_resolved
from .environment import ScenarioError, build_scenario, corridor_duration
from .metrics import RunMetrics
from .plots import emit_plots
from .simulator import RunResult, run_single
from .utils import log, sha256_file, write_csv

MIN_CORRIDOR_SECONDS = 10.0
NONDETERMINISTIC = ("timing.csv", "sweep_timing.csv", "timing_summary.csv")


@dataclass(frozen=True)
class CampaignSummary:
    """Aggregate of one planner over the runs of a campaign."""

    planner: str
    runs: int
    success_rate: float
    mean_path_length: float
    mean_path_length_success: float
    mean_path_length_failed: float
    mean_smoothness: float
    mean_smoothness_success: float
    mean_smoothness_failed: float
    mean_min_clearance: float
    mean_min_clearance_success: float
    mean_min_clearance_failed: float
    mean_min_gamma: float
    mean_min_gamma_success: float
    mean_min_gamma_failed: float
    mean_coverage: float
    mean_coverage_success: float
    mean_coverage_failed: float
    coverage_gain: float

    HEADER = (
        "planner",
        "runs",
        "success_rate_pct",
        "mean_path_length_m",
        "mean_path_length_success_m",
        "mean_path_length_failed_m",
        "mean_smoothness",
        "mean_smoothness_success",
        "mean_smoothness_failed",
        "mean_min_clearance_m",
        "mean_min_clearance_success_m",
        "mean_min_clearance_failed_m",
        "mean_min_gamma",
        "mean_min_gamma_success",
        "mean_min_gamma_failed",
        "mean_coverage_m2",
        "mean_coverage_success_m2",
        "mean_coverage_failed_m2",
        "coverage_gain",
    )

    def row(self) -> tuple:
        return (
            self.planner,
            self.runs,
            self.success_rate,
            self.mean_path_length,
            self.mean_path_length_success,
            self.mean_path_length_failed,
            self.mean_smoothness,
            self.mean_smoothness_success,
            self.mean_smoothness_failed,
            self.mean_min_clearance,
            self.mean_min_clearance_success,
            self.mean_min_clearance_failed,
            self.mean_min_gamma,
            self.mean_min_gamma_success,
            self.mean_min_gamma_failed,
            self.mean_coverage,
            self.mean_coverage_success,
            self.mean_coverage_failed,
            self.coverage_gain,
        )


def _mean(values: Sequence[float]) -> float:
    """Mean of the finite values; nan when there are none."""
    finite = [value for value in values if math.isfinite(value)]
    return float(np.mean(finite)) if finite else math.nan


def summarize_campaign(
    planner: str, results: Sequence[RunResult], baseline_coverage: float | None = None
) -> CampaignSummary:
    """
    Reduce one planner's runs to a summary row.

    Every mean is reported over all runs and separately over the successful and
    the failed runs.

    Results are ordered by seed first, so the reduction does not depend on the
    order in which parallel runs finished.
    """
    ordered = sorted(results, key=lambda result: result.seed)
    metrics = [result.metrics for result in ordered]
    succeeded = [m for m in metrics if m.success]
    failed = [m for m in metrics if not m.success]
    coverage = _mean([m.coverage_total for m in metrics])
    baseline = coverage if baseline_coverage is None else baseline_coverage
    return CampaignSummary(
        planner=planner,
        runs=len(metrics),
        success_rate=100.0 * len(succeeded) / len(metrics),
        mean_path_length=_mean([m.path_length for m in metrics]),
        mean_path_length_success=_mean([m.path_length for m in succeeded]),
        mean_path_length_failed=_mean([m.path_length for m in failed]),
        mean_smoothness=_mean([m.smoothness for m in metrics]),
        mean_smoothness_success=_mean([m.smoothness for m in succeeded]),
        mean_smoothness_failed=_mean([m.smoothness for m in failed]),
        mean_min_clearance=_mean([m.min_clearance for m in metrics]),
        mean_min_clearance_success=_mean([m.min_clearance for m in succeeded]),
        mean_min_clearance_failed=_mean([m.min_clearance for m in failed]),
        mean_min_gamma=_mean([m.min_gamma for m in metrics]),
        mean_min_gamma_success=_mean([m.min_gamma for m in succeeded]),
        mean_min_gamma_failed=_mean([m.min_gamma for m in failed]),
        mean_coverage=coverage,
        mean_coverage_success=_mean([m.coverage_total for m in succeeded]),
        mean_coverage_failed=_mean([m.coverage_total for m in failed]),
        coverage_gain=coverage / baseline if baseline else math.nan,
    )


def _execute(config: ExperimentConfig, seed: int, planner: str, directory: Path) -> RunResult:
    return run_single(config, seed, planner, directory)


class CampaignOrchestrator:
    """
    Runs experiment campaigns into unique timestamped directories.

    Every campaign writes its resolved configuration, its CSV outputs and a
    manifest with the base seed and a SHA-256 hash of every output file.
    """

    def __init__(self, config: ExperimentConfig, config_file: Path | None = None):
        self.config = config
        self.config_file = config_file

    @property
    def seeds(self) -> list[int]:
        return [self.config.seed + k for k in range(self.config.runs)]

    def _create_directory(self, kind: str) -> Path:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        root = self.config.output
        directory = root / f"{kind}-{stamp}"
        suffix = 1
        while directory.exists():
            directory = root / f"{kind}-{stamp}-{suffix}"
            suffix += 1
        directory.mkdir(parents=True)
        write_resolved(self.config, directory / "config.resolved")
        return directory

    def _banner(self, title: str) -> None:
        log("=" * 60)
        log(title)
        log("=" * 60)

    def _run_all(
        self, jobs: Sequence[tuple[ExperimentConfig, int, str, Path]]
    ) -> list[RunResult]:
        """Run independent jobs, in a process pool when harness.workers > 1."""
        workers = self.config["harness.workers"]
        if workers <= 1 or len(jobs) <= 1:
            return [_execute(*job) for job in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute, *zip(*jobs, strict=True)))

    def write_manifest(self, directory: Path, kind: str) -> Path:
        """Hash every file of the campaign directory into manifest.json."""
        files = {}
        nondeterministic = []
        for path in sorted(directory.rglob("*")):
            if not path.is_file() or path.name == "manifest.json":
                continue
            relative = path.relative_to(directory).as_posix()
            files[relative] = sha256_file(path)
            if path.name in NONDETERMINISTIC:
                nondeterministic.append(relative)
        manifest = {
            "kind": kind,
            "base_seed": self.config.seed,
            "runs": self.config.runs,
            "config_file": None if self.config_file is None else str(self.config_file),
            "config_sha256": files.get("config.resolved"),
            "files": files,
            "nondeterministic": nondeterministic,
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def _finish(self, directory: Path, kind: str, started: float) -> None:
        self.write_manifest(directory, kind)
        log("")
        self._banner(f"{kind.upper()} COMPLETE")
        log(f"Elapsed: {humanize.naturaldelta(time.monotonic() - started)}")
        log(f"Results saved to: {directory}")

    def _paired_runs(
        self, config: ExperimentConfig, planners: Sequence[str], directory: Path
    ) -> dict[str, list[RunResult]]:
        jobs = [
            (config, seed, planner, directory / planner / f"seed-{seed}")
            for planner in planners
            for seed in self.seeds
        ]
        results = self._run_all(jobs)
        grouped: dict[str, list[RunResult]] = {planner: [] for planner in planners}
        for result in results:
            grouped[result.planner].append(result)
        return grouped

    def simulate(self, planner: str | None = None) -> RunResult:
        """Fly one mission with the configured seed and write its CSV and plot files."""
        planner = planner or self.config.planner
        started = time.monotonic()
        self._banner(f"SIMULATION: {planner} on {self.config.preset}, seed {self.config.seed}")
        directory = self._create_directory("simulate")
        result = run_single(self.config, self.config.seed, planner, directory)
        if self.config["harness.plots"]:
            emit_plots(directory)
        self._finish(directory, "simulate", started)
        return result

    def monte_carlo(self, planners: Sequence[str] | None = None) -> list[CampaignSummary]:
        """
        Run every planner over the same seeds and summarize.

        Args:
            planners: Planner names; duplicates are dropped with a warning

        Returns:
            One summary per planner; coverage gain is relative to the first planner
        """
        requested = list(planners or self.config["harness.planners"])
        unique = list(dict.fromkeys(requested))
        if len(unique) < len(requested):
            log(f"⚠ Duplicate planners ignored: {', '.join(requested)} -> {', '.join(unique)}")

        started = time.monotonic()
        self._banner(
            f"MONTE CARLO: {', '.join(unique)} on {self.config.preset}, "
            f"{self.config.runs} paired seeds"
        )
        directory = self._create_directory("montecarlo")
        grouped = self._paired_runs(self.config, unique, directory)

        summaries: list[CampaignSummary] = []
        for planner in unique:
            baseline = summaries[0].mean_coverage if summaries else None
            summaries.append(summarize_campaign(planner, grouped[planner], baseline))
        self._write_runs(directory / "runs.csv", grouped)
        write_csv(
            directory / "summary.csv", CampaignSummary.HEADER, [s.row() for s in summaries]
        )
        write_csv(
            directory / "timing_summary.csv",
            ("planner", "mean_step_ms", "p95_step_ms"),
            [
                (planner, *_timing([result.timer.samples for result in grouped[planner]]))
                for planner in unique
            ],
        )

        log("")
        for summary in summaries:
            log(
                f"{summary.planner}: {summary.success_rate:.0f}% success, "
                f"{summary.mean_path_length:.1f} m, smoothness {summary.mean_smoothness:.2f}, "
                f"coverage x{summary.coverage_gain:.2f}"
            )
        self._finish(directory, "montecarlo", started)
        return summaries

    def _write_runs(self, path: Path, grouped: dict[str, list[RunResult]]) -> None:
        rows = []
        for planner, results in grouped.items():
            for result in sorted(results, key=lambda r: r.seed):
                rows.append((planner, result.seed, *result.metrics.row(), result.cost.total))
        write_csv(path, ("planner", "seed", *RunMetrics.HEADER, "executed_cost"), rows)

    def sweep_horizon(self, horizons: Sequence[int] | None = None) -> list[tuple]:
        """
        Paired-seed IFDS+MPC runs for each prediction horizon N.

        Returns:
            Rows of (N, runs, finite-cost runs, mean executed cost, success rate %)
        """
        values = [int(n) for n in (horizons or self.config["harness.horizons"])]
        if min(values) < 1:
            raise ValueError(f"every horizon must be >= 1, got {values}")
        started = time.monotonic()
        self._banner(f"HORIZON SWEEP: N in {values}, {self.config.runs} paired seeds")
        directory = self._create_directory("sweep")

        rows, timing_rows = [], []
        for horizon in values:
            log(f"\n--- N = {horizon} ---")
            config = self.config.with_overrides({"mpc.N": horizon})
            jobs = [
                (config, seed, "ifds_mpc", directory / f"N{horizon}" / f"seed-{seed}")
                for seed in self.seeds
            ]
            results = sorted(self._run_all(jobs), key=lambda r: r.seed)
            costs = [result.cost.total for result in results]
            finite = [cost for cost in costs if math.isfinite(cost)]
            success = 100.0 * sum(r.metrics.success for r in results) / len(results)
            rows.append((horizon, len(results), len(finite), _mean(costs), success))
            timing_rows.append((horizon, *_timing([r.timer.samples for r in results])))

        write_csv(
            directory / "sweep.csv",
            ("N", "runs", "finite_cost_runs", "mean_cost", "success_rate_pct"),
            rows,
        )
        write_csv(
            directory / "sweep_timing.csv", ("N", "mean_step_ms", "p95_step_ms"), timing_rows
        )
        self._finish(directory, "sweep", started)
        return rows

    def ablate_dfaa(self) -> list[tuple]:
        """
        Paired runs with DFAA enabled (eta > 0) and disabled (eta = 0).

        Returns:
            Rows of (variant, seed, success, min altitude, narrow steps, mean
            altitude and mean GSD while the corridor is narrow)

        Raises:
            ScenarioError: If the preset has no narrow corridor of at least 10 s
        """
        config = self.config
        limits = config.limits()
        params = config.ifds_params()
        scenario = build_scenario(
            config.preset, config.seed, config["scenario.length"], config["scenario.mission_time"]
        )
        duration = corridor_duration(scenario, params.tau, limits.v0)
        if duration < MIN_CORRIDOR_SECONDS:
            raise ScenarioError(
                f"ablation preset required: {config.preset} has a {duration:.1f} s corridor"
            )

        started = time.monotonic()
        self._banner(f"DFAA ABLATION: {config.preset}, {config.runs} paired seeds")
        directory = self._create_directory("ablation")
        eta = params.eta if params.eta > 0 else 0.3
        eta_grid = tuple(value for value in config["mpc.eta_grid"] if value > 0) or (eta,)
        variants = {
            "dfaa": config.with_overrides({"ifds.eta": eta, "mpc.eta_grid": eta_grid}),
            "no_dfaa": config.with_overrides({"ifds.eta": 0.0, "mpc.eta_grid": (0.0,)}),
        }

        rows = []
        for name, variant in variants.items():
            log(f"\n--- {name} ---")
            jobs = [
                (variant, seed, variant.planner, directory / name / f"seed-{seed}")
                for seed in self.seeds
            ]
            for result in sorted(self._run_all(jobs), key=lambda r: r.seed):
                rows.append((name, *_narrow_segment(result, params.tau)))

        write_csv(
            directory / "ablation.csv",
            (
                "variant",
                "seed",
                "success",
                "min_altitude_m",
                "narrow_steps",
                "mean_narrow_altitude_m",
                "min_narrow_gsd",
                "mean_narrow_gsd",
            ),
            rows,
        )
        self._finish(directory, "ablation", started)
        return rows

    def robustness(self, sigmas: Sequence[float] | None = None) -> list[tuple]:
        """
        Success rate of the configured planner under observation noise levels.

        Returns:
            Rows of (sigma, runs, success rate %)
        """
        values = [float(s) for s in (sigmas or self.config["harness.sigmas"])]
        if min(values) < 0:
            raise ValueError(f"noise levels must be >= 0, got {values}")
        started = time.monotonic()
        planner = self.config.planner
        self._banner(f"ROBUSTNESS: {planner}, sigma in {values}, {self.config.runs} seeds")
        directory = self._create_directory("robustness")

        rows = []
        for sigma in values:
            log(f"\n--- sigma = {sigma:g} m ---")
            config = self.config.with_overrides({"harness.noise_sigma": sigma})
            jobs = [
                (config, seed, planner, directory / f"sigma{sigma:g}" / f"seed-{seed}")
                for seed in self.seeds
            ]
            results = self._run_all(jobs)
            success = 100.0 * sum(r.metrics.success for r in results) / len(results)
            rows.append((sigma, len(results), success))
            log(f"sigma = {sigma:g} m: {success:.0f}% collision-free")

        write_csv(directory / "robustness.csv", ("sigma_m", "runs", "success_rate_pct"), rows)
        self._finish(directory, "robustness", started)
        return rows


def _timing(samples: Sequence[Sequence[float]]) -> tuple[float, float]:
    merged = [value for run in samples for value in run]
    if not merged:
        return 0.0, 0.0
    return float(np.mean(merged)), float(np.percentile(merged, 95, method="higher"))


def _narrow_segment(result: RunResult, tau: float) -> tuple:
    narrow = [r for r in result.records[1:] if r.w_eff < tau]
    altitudes = [r.position[2] - result.water_z for r in narrow]
    gsd_values = [r.gsd for r in narrow]
    return (
        result.seed,
        result.metrics.success,
        result.metrics.min_altitude,
        len(narrow),
        float(np.mean(altitudes)) if narrow else math.nan,
        min(gsd_values) if narrow else math.nan,
        float(np.mean(gsd_values)) if narrow else math.nan,
    )
