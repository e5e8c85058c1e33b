"""Closed-loop simulation of one planner on one scenario realization."""

import math
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import humanize
import numpy as np

from .baselines import PidController, ifds_only_step
from .config import PLANNERS, ExperimentConfig
from .environment import (
    Observation,
    RiverScenario,
    ScenarioError,
    blob_obstacles,
    build_scenario,
    fit_ellipsoids,
    observe_fitted,
    observe_obstacles,
    sample_shadow_field,
    write_shadow_csv,
)
from .geometry import GeometryError, ObstacleField, radial_clearance
from .ifds import (
    GuidanceOutput,
    PathGenerationError,
    Trajectory,
    UavState,
    gen_initial_path,
)
from .metrics import (
    CoverageAccumulator,
    LyapunovMonitor,
    RunMetrics,
    StepRecord,
    check_descent,
    gsd,
    reached_goal,
    summarize_run,
)
from .mpc import CostBreakdown, executed_cost, optimize_step, penalty_from_gammas
from .timing import StepTimer
from .tracking import ObstacleTracker
from .utils import log, write_csv

STEP_COLUMNS = (
    "step",
    "t",
    "x",
    "y",
    "z",
    "psi",
    "theta",
    "speed",
    "w_eff",
    "dfaa",
    "min_gamma",
    "clearance_m",
    "coverage_area",
    "coverage_ratio",
    "coverage_total",
    "gsd",
    "lyapunov_v",
    "ref_deviation",
    "penalty",
    "emergency",
    "rho",
    "sigma_n",
    "eta",
    "chosen_candidate",
    "T_k",
    "A_k",
    "S_k",
    "J_k",
)

# Observation noise streams are keyed apart from the scenario generator.
NOISE_STREAM = 1


class SimulationError(RuntimeError):
    """Raised when a run cannot be set up or its outputs cannot be written."""

    pass


@dataclass(frozen=True, eq=False)
class PlannerStep:
    """What one planner step produced, whichever planner ran it."""

    state: UavState
    guidance: GuidanceOutput
    emergency: bool = False
    rho: float | None = None
    sigma_n: float | None = None
    eta: float | None = None
    candidate: int | None = None
    cost: CostBreakdown | None = None


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of one closed-loop run."""

    planner: str
    seed: int
    metrics: RunMetrics
    records: list[StepRecord]
    cost: CostBreakdown
    lyapunov_descent: float
    timer: StepTimer
    directory: Path | None = None
    failure: str | None = None
    water_z: float = 0.0


def obstacle_snapshot(
    scenario: RiverScenario, t: float, config: ExperimentConfig
) -> ObstacleField:
    """Ground-truth obstacle field at time t, at the obstacle layer altitude."""
    return ObstacleField(
        blob_obstacles(
            scenario,
            t,
            scenario.water_z + config["harness.obstacle_altitude"],
            config["tracking.thickness"],
            config["tracking.inflation"],
        )
    )


class Simulation:
    """
    Runs one planner from the start to the goal of a scenario.

    Each step observes the shadows (every blob directly, or fitted ellipses of
    the sampled shadow field, with optional Gaussian noise on the centers),
    updates the obstacle tracks, asks the planner for the next state,
    then scores that state against the ground-truth obstacles.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        seed: int,
        planner: str | None = None,
        scenario: RiverScenario | None = None,
    ):
        self.config = config
        self.seed = seed
        self.planner = planner or config.planner
        if self.planner not in PLANNERS:
            raise SimulationError(f"unknown planner: {self.planner}")
        self.scenario = scenario or build_scenario(
            config.preset, seed, config["scenario.length"], config["scenario.mission_time"]
        )
        self.limits = config.limits()
        self.params = config.ifds_params()
        self.mpc = config.mpc_config()
        self.camera = config.camera()
        self.tracking = config.tracking_config()
        self.pid = PidController(config.pid_gains(), self.limits)

    def budget_steps(self) -> int:
        """Step budget: a multiple of the straight-line flight time."""
        start = self.scenario.start_point(self.limits.h_cruise)
        goal = self.scenario.goal_point(self.limits.h_cruise)
        seconds = float(np.linalg.norm(goal - start)) / self.limits.v0
        return math.ceil(self.config["harness.budget_factor"] * seconds / self.limits.dt)

    def _initial_state(self) -> UavState:
        start = self.scenario.start_point(self.limits.h_cruise)
        tangent = self.scenario.tangents[0]
        return UavState(
            position=start, psi=math.atan2(tangent[1], tangent[0]), speed=self.limits.v0
        )

    def _observe(self, t: float, rng: np.random.Generator, altitude: float) -> list[Observation]:
        tracking = self.tracking
        if tracking.observation == "fitted":
            return observe_fitted(
                self.scenario,
                t,
                rng,
                self.config.noise_sigma,
                altitude,
                tracking.max_obstacles,
                tracking.sample_resolution,
            )
        return observe_obstacles(self.scenario, t, rng, self.config.noise_sigma, altitude)

    def _plan(self, state: UavState, t: float, tracker: ObstacleTracker) -> PlannerStep:
        if self.planner == "pid":
            next_state, output, _ = self.pid.step(state, t, self.scenario, tracker.obstacles())
            return PlannerStep(next_state, output)
        if self.planner == "ifds":
            next_state, output = ifds_only_step(
                state, t, self.scenario, tracker.obstacles(), self.params, self.limits
            )
            params = self.params
            return PlannerStep(
                next_state, output, rho=params.rho, sigma_n=params.sigma_n, eta=params.eta
            )
        decision = optimize_step(state, self.mpc, self.scenario, tracker.current(), t, self.limits)
        params = decision.params
        return PlannerStep(
            decision.state,
            decision.guidance,
            emergency=decision.emergency,
            rho=None if params is None else params.rho,
            sigma_n=None if params is None else params.sigma_n,
            eta=None if params is None else params.eta,
            candidate=None if decision.index < 0 else decision.index,
            cost=decision.cost,
        )

    def _record(
        self,
        t: float,
        state: UavState,
        step: PlannerStep | None,
        truth: ObstacleField,
        coverage: CoverageAccumulator,
        monitor: LyapunovMonitor,
    ) -> tuple[StepRecord, np.ndarray]:
        P = state.position
        gammas = truth.gammas(P)
        if len(truth):
            index = int(np.argmin(gammas))
            min_gamma = float(gammas[index])
            clearance = radial_clearance(P, truth.obstacles[index])
        else:
            min_gamma = clearance = math.inf
        area, ratio = coverage.step(P, state.psi, t)
        altitude = float(P[2]) - self.scenario.water_z
        guidance = None if step is None else step.guidance
        record = StepRecord(
            t=t,
            position=P,
            psi=state.psi,
            theta=state.theta,
            speed=state.speed,
            w_eff=math.nan if guidance is None else guidance.w_eff,
            dfaa_active=guidance is not None and guidance.dfaa_active,
            min_gamma=min_gamma,
            clearance=clearance,
            coverage_area=area,
            coverage_ratio=ratio,
            coverage_total=coverage.total_area,
            gsd=gsd(altitude, self.camera),
            lyapunov_v=monitor.record(P),
            ref_deviation=(
                0.0
                if guidance is None
                else float(np.linalg.norm(guidance.velocity - guidance.nominal))
            ),
            penalty=penalty_from_gammas(gammas, self.mpc.gamma_safe),
            emergency=step is not None and step.emergency,
            rho=None if step is None else step.rho,
            sigma_n=None if step is None else step.sigma_n,
            eta=None if step is None else step.eta,
            candidate=None if step is None else step.candidate,
            cost=None if step is None else step.cost,
        )
        return record, gammas

    def run(self, directory: Path | None = None) -> RunResult:
        """
        Fly the mission and optionally write the run's CSV files.

        Args:
            directory: Output directory, or None to keep results in memory only

        Returns:
            RunResult; a vehicle leaving the domain ends the run as a failure
        """
        config, limits, scenario = self.config, self.limits, self.scenario
        rng = np.random.default_rng([self.seed, NOISE_STREAM])
        tracker = ObstacleTracker(self.tracking, limits.dt, config.noise_sigma)
        coverage = CoverageAccumulator(
            scenario, self.camera, limits.step_length, config["harness.coverage_resolution"]
        )
        monitor = LyapunovMonitor(
            target=scenario.goal_point(limits.h_cruise),
            radius=config["lyapunov.radius"],
            altitude=limits.h_cruise,
            water_z=scenario.water_z,
        )
        timer = StepTimer(budget_ms=limits.dt * 1000.0)
        obstacle_altitude = scenario.water_z + config["harness.obstacle_altitude"]
        tolerance = config["harness.goal_tolerance"]
        self.pid.reset()

        state = self._initial_state()
        record, _ = self._record(
            0.0, state, None, obstacle_snapshot(scenario, 0.0, config), coverage, monitor
        )
        records = [record]
        nominal, modulated, executed_gammas = [], [], []
        failure = None

        for k in range(self.budget_steps()):
            t = k * limits.dt
            tracker.step(self._observe(t, rng, obstacle_altitude))
            try:
                with timer.measure():
                    step = self._plan(state, t, tracker)
            except (ScenarioError, GeometryError) as e:
                failure = str(e)
                break
            state = step.state
            t_next = (k + 1) * limits.dt
            truth = obstacle_snapshot(scenario, t_next, config)
            record, gammas = self._record(t_next, state, step, truth, coverage, monitor)
            records.append(record)
            nominal.append(step.guidance.nominal)
            modulated.append(step.guidance.velocity)
            executed_gammas.append(gammas)
            if not scenario.contains(state.position):
                failure = "left the domain"
                break
            if reached_goal(state.position, scenario, tolerance):
                break

        metrics = summarize_run(records, scenario, limits.dt, tolerance, timer.samples)
        if len(records) >= 2:
            traj = Trajectory(
                points=np.array([r.position for r in records]),
                psi=np.array([r.psi for r in records]),
                theta=np.array([r.theta for r in records]),
            )
            cost = executed_cost(
                traj, np.array(nominal), np.array(modulated), executed_gammas, self.mpc
            )
            descent, _ = check_descent(monitor.values, config["lyapunov.tolerance"])
        else:
            cost = CostBreakdown(0.0, 0.0, 0.0, 0.0)
            descent = 1.0

        result = RunResult(
            planner=self.planner,
            seed=self.seed,
            metrics=metrics,
            records=records,
            cost=cost,
            lyapunov_descent=descent,
            timer=timer,
            directory=directory,
            failure=failure,
            water_z=scenario.water_z,
        )
        if directory is not None:
            self.write(result, monitor, directory)
        return result

    def write(self, result: RunResult, monitor: LyapunovMonitor, directory: Path) -> None:
        """Write the run's CSV files into directory."""
        directory.mkdir(parents=True, exist_ok=True)
        write_csv(directory / "steps.csv", STEP_COLUMNS, step_rows(result.records))
        result.timer.write(directory / "timing.csv")
        write_csv(
            directory / "metrics.csv",
            ("planner", "seed", *RunMetrics.HEADER, "executed_cost", "lyapunov_descent"),
            [
                (
                    result.planner,
                    result.seed,
                    *result.metrics.row(),
                    result.cost.total,
                    result.lyapunov_descent,
                )
            ],
        )
        values = monitor.values
        write_csv(
            directory / "lyapunov.csv",
            ("step", "t", "v", "dv"),
            (
                (k, record.t, value, value - values[k - 1] if k else 0.0)
                for k, (record, value) in enumerate(zip(result.records, values))
            ),
        )
        self._write_scene(directory)

    def _write_scene(self, directory: Path) -> None:
        limits, scenario = self.limits, self.scenario
        start = scenario.start_point(limits.h_cruise)
        goal = scenario.goal_point(limits.h_cruise)
        try:
            path = gen_initial_path(start, goal, limits, self.seed)
            write_csv(
                directory / "initial_path.csv",
                ("x", "y", "z", "psi", "theta"),
                (
                    (*point, psi, theta)
                    for point, psi, theta in zip(path.points, path.psi, path.theta)
                ),
            )
        except PathGenerationError as e:
            log(f"⚠ No initial path for seed {self.seed}: {e}")

        sample = sample_shadow_field(scenario, 0.0)
        write_shadow_csv(sample, directory / "shadow_t0.csv")
        fitted = []
        if len(sample):
            fitted = fit_ellipsoids(
                sample,
                max(len(scenario.blobs), 1),
                thickness=self.config["tracking.thickness"],
                inflation=self.config["tracking.inflation"],
                altitude=scenario.water_z + self.config["harness.obstacle_altitude"],
            )
        write_csv(
            directory / "obstacles_t0.csv",
            ("x", "y", "z", "a", "b", "c", "yaw", "inflation"),
            (
                (*obs.center, obs.a, obs.b, obs.c, obs.yaw, obs.inflation[0])
                for obs in fitted
            ),
        )


def step_rows(records: list[StepRecord]) -> Iterator[tuple]:
    for k, r in enumerate(records):
        yield (
            k,
            r.t,
            *r.position,
            r.psi,
            r.theta,
            r.speed,
            r.w_eff,
            r.dfaa_active,
            r.min_gamma,
            r.clearance,
            r.coverage_area,
            r.coverage_ratio,
            r.coverage_total,
            r.gsd,
            r.lyapunov_v,
            r.ref_deviation,
            r.penalty,
            r.emergency,
            r.rho,
            r.sigma_n,
            r.eta,
            r.candidate,
            *(
                (None,) * 4
                if r.cost is None
                else (r.cost.tracking, r.cost.obstacle, r.cost.smoothness, r.cost.total)
            ),
        )


def run_single(
    config: ExperimentConfig,
    seed: int,
    planner: str | None = None,
    directory: Path | None = None,
) -> RunResult:
    """
    Fly one closed-loop mission and log the outcome.

    Args:
        config: Validated configuration
        seed: Scenario seed (also keys the observation noise)
        planner: pid, ifds or ifds_mpc; the configured planner by default
        directory: Where to write the run's CSV files, if anywhere

    Returns:
        The run result
    """
    simulation = Simulation(config, seed, planner)
    result = simulation.run(directory)
    metrics = result.metrics
    marker = "✓" if metrics.success else "✗"
    detail = f"{humanize.intcomma(metrics.steps)} steps, {metrics.path_length:.1f} m"
    if not metrics.success:
        reason = result.failure or (
            "collision" if metrics.min_gamma <= 1.0 else "step budget exhausted"
        )
        detail += f", {reason}"
    log(f"{marker} {simulation.planner} seed {seed}: {detail}")
    return result
