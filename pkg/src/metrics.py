"""Observation-quality and trajectory-quality metrics, and the Lyapunov convergence monitor."""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .environment import RiverScenario
from .ifds import Trajectory, UavState, vertical_guidance
from .mpc import CostBreakdown
from .utils import wrap_angle

COUNTER_FLOW_EPSILON = 1e-6


@dataclass(frozen=True)
class CameraModel:
    """Nadir camera with a square field of view and a linear GSD law."""

    fov: float = math.pi / 3
    gsd_slope: float = 0.0015  # m/px per m of altitude

    def __post_init__(self):
        if not 0 < self.fov < math.pi:
            raise ValueError(f"field of view must be in (0, pi), got {self.fov}")
        if self.gsd_slope <= 0:
            raise ValueError(f"GSD slope must be positive, got {self.gsd_slope}")


def footprint_width(altitude: float, camera: CameraModel) -> float:
    """Ground width of the camera footprint at the given height above the water."""
    if altitude <= 0:
        raise ValueError(f"altitude must be positive, got {altitude}")
    return 2.0 * altitude * math.tan(camera.fov / 2.0)


def gsd(altitude: float, camera: CameraModel) -> float:
    """Ground sampling distance in meters per pixel."""
    if altitude <= 0:
        raise ValueError(f"altitude must be positive, got {altitude}")
    return camera.gsd_slope * altitude


class CoverageAccumulator:
    """
    Rasterized coverage of the unshadowed channel surface for one run.

    Each step images a flat nadir rectangle, footprint_width wide across track
    and one step length along track, centered below the vehicle and oriented
    with its heading. Cells outside the channel are never counted. The union of
    clear cells seen so far gives the cumulative coverage.
    """

    def __init__(
        self,
        scenario: RiverScenario,
        camera: CameraModel,
        step_length: float,
        resolution: float = 1.0,
    ):
        if step_length <= 0 or resolution <= 0:
            raise ValueError("step length and resolution must be positive")
        self.scenario = scenario
        self.camera = camera
        self.step_length = step_length
        self.resolution = resolution
        self.cells = scenario.channel_grid(resolution)
        self.seen = np.zeros(len(self.cells), dtype=bool)
        self._tree = cKDTree(self.cells)

    @property
    def cell_area(self) -> float:
        return self.resolution * self.resolution

    @property
    def total_area(self) -> float:
        """Union of every clear cell imaged so far, in square meters."""
        return float(np.count_nonzero(self.seen)) * self.cell_area

    def footprint(self, P: np.ndarray, psi: float) -> np.ndarray:
        """Indices of the channel cells inside the footprint below P."""
        altitude = float(P[2]) - self.scenario.water_z
        half_width = footprint_width(altitude, self.camera) / 2.0
        half_length = self.step_length / 2.0
        candidates = self._tree.query_ball_point(
            np.asarray(P[:2], dtype=float), math.hypot(half_width, half_length)
        )
        index = np.array(sorted(candidates), dtype=int)
        if index.size == 0:
            return index
        offset = self.cells[index] - P[:2]
        along = offset[:, 0] * math.cos(psi) + offset[:, 1] * math.sin(psi)
        cross = -offset[:, 0] * math.sin(psi) + offset[:, 1] * math.cos(psi)
        inside = (np.abs(along) <= half_length) & (np.abs(cross) <= half_width)
        return index[inside]

    def step(self, P: np.ndarray, psi: float, t: float) -> tuple[float, float]:
        """
        Image the footprint below P at time t.

        Args:
            P: Vehicle position
            psi: Heading in radians
            t: Time in seconds

        Returns:
            Tuple of (effective coverage area in m^2, clear fraction of the
            in-channel footprint)
        """
        index = self.footprint(P, psi)
        if index.size == 0:
            return 0.0, 0.0
        clear = index[~self.scenario.shadow_mask(self.cells[index], t)]
        self.seen[clear] = True
        return float(clear.size) * self.cell_area, clear.size / index.size


def coverage_step(
    state: UavState, t: float, accumulator: CoverageAccumulator
) -> tuple[float, float]:
    """Image the footprint below a flight state (see CoverageAccumulator.step)."""
    return accumulator.step(state.position, state.psi, t)


def smoothness(traj: Trajectory, dt: float) -> float:
    """
    Integral of squared heading and path-angle rates, in rad^2/s.

    Angle differences are wrapped, so a heading crossing +-pi counts its true turn.
    """
    d_psi = np.array([wrap_angle(b - a) for a, b in zip(traj.psi[:-1], traj.psi[1:])])
    d_theta = np.diff(traj.theta)
    return float(np.sum((d_psi / dt) ** 2 + (d_theta / dt) ** 2) * dt)


@dataclass
class LyapunovMonitor:
    """
    Convergence monitor for V(P) = 1/2 (r^2 - R^2)^2 + 1/2 (h^2 - H^2)^2.

    r is the horizontal distance to the target, h the height above the water.
    R = 0 gives a transit mission toward the target point, R > 0 a loiter circle.
    """

    target: np.ndarray
    radius: float = 0.0
    altitude: float = 100.0
    water_z: float = 0.0
    values: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float).reshape(3)
        if self.radius < 0 or self.altitude < 0:
            raise ValueError("target radius and altitude must be non-negative")

    def record(self, P: np.ndarray) -> float:
        value = lyapunov_value(P, self)
        self.values.append(value)
        return value

    @property
    def violations(self) -> list[int]:
        if len(self.values) < 2:
            return []
        return check_descent(self.values)[1]


def _polar(P: np.ndarray, monitor: LyapunovMonitor) -> tuple[float, float, float, float]:
    dx = float(P[0] - monitor.target[0])
    dy = float(P[1] - monitor.target[1])
    h = float(P[2]) - monitor.water_z
    return dx, dy, dx * dx + dy * dy, h


def lyapunov_value(P: np.ndarray, monitor: LyapunovMonitor) -> float:
    _, _, r2, h = _polar(P, monitor)
    R, H = monitor.radius, monitor.altitude
    return 0.5 * (r2 - R * R) ** 2 + 0.5 * (h * h - H * H) ** 2


def lyapunov_gradient(P: np.ndarray, monitor: LyapunovMonitor) -> np.ndarray:
    """Closed-form gradient of the monitor's V at P."""
    dx, dy, r2, h = _polar(P, monitor)
    radial = 2.0 * (r2 - monitor.radius**2)
    return np.array([radial * dx, radial * dy, 2.0 * h * (h * h - monitor.altitude**2)])


def check_descent(values: Sequence[float], tolerance: float = 1e-6) -> tuple[float, list[int]]:
    """
    Check a V series for discrete descent.

    A step k violates descent when V[k+1] - V[k] > tolerance * max(1, V[k]).

    Returns:
        Tuple of (fraction of non-violating steps, violating step indices)

    Raises:
        ValueError: If the series has fewer than 2 samples
    """
    series = np.asarray(values, dtype=float)
    if len(series) < 2:
        raise ValueError("descent check needs at least 2 samples")
    increase = np.diff(series)
    allowed = tolerance * np.maximum(1.0, series[:-1])
    violations = np.flatnonzero(increase > allowed)
    return 1.0 - len(violations) / len(increase), violations.tolist()


def non_counter_flow(u: np.ndarray, gradient: np.ndarray, v0: float) -> bool:
    """True when the velocity does not oppose the descent direction -grad V."""
    epsilon = COUNTER_FLOW_EPSILON * v0 * float(np.linalg.norm(gradient))
    return float(np.dot(u, -gradient)) >= -epsilon


def loiter_guidance(
    P: np.ndarray, monitor: LyapunovMonitor, v0: float, altitude_gain: float = 0.3
) -> np.ndarray:
    """
    Guidance vector field converging on the monitor's loiter circle at its altitude.

    Horizontally a counter-clockwise circulation field of speed v0 that spirals
    onto radius R; vertically the same height law the planner uses. The sum is
    rescaled to v0.
    """
    dx, dy, r2, h = _polar(P, monitor)
    r = math.sqrt(r2)
    R = monitor.radius
    if r < 1e-9:
        horizontal = np.array([v0, 0.0])
    else:
        scale = -v0 / (r * (r2 + R * R))
        horizontal = scale * np.array(
            [(r2 - R * R) * dx + 2.0 * r * R * dy, (r2 - R * R) * dy - 2.0 * r * R * dx]
        )
    vertical = vertical_guidance(h, monitor.altitude, altitude_gain, v0)
    u = np.array([horizontal[0], horizontal[1], vertical])
    return v0 * u / np.linalg.norm(u)


@dataclass(frozen=True, eq=False)
class StepRecord:
    """One executed simulation step as logged to steps.csv."""

    t: float
    position: np.ndarray
    psi: float
    theta: float
    speed: float
    w_eff: float
    dfaa_active: bool
    min_gamma: float
    clearance: float
    coverage_area: float
    coverage_ratio: float
    coverage_total: float
    gsd: float
    lyapunov_v: float
    ref_deviation: float
    penalty: float
    emergency: bool = False
    rho: float | None = None
    sigma_n: float | None = None
    eta: float | None = None
    candidate: int | None = None
    cost: CostBreakdown | None = None


@dataclass(frozen=True, eq=False)
class RunMetrics:
    """Aggregate quality of one closed-loop run (one row of metrics.csv)."""

    success: bool
    reached_goal: bool
    path_length: float
    smoothness: float
    min_gamma: float
    min_clearance: float
    coverage_total: float
    mean_coverage_ratio: float
    gsd: np.ndarray
    min_altitude: float
    emergency_steps: int
    steps: int
    duration: float
    mean_step_ms: float = 0.0

    HEADER = (
        "success",
        "reached_goal",
        "path_length_m",
        "smoothness",
        "min_gamma",
        "min_clearance_m",
        "coverage_total_m2",
        "mean_coverage_ratio",
        "mean_gsd",
        "min_gsd",
        "min_altitude_m",
        "emergency_steps",
        "steps",
        "duration_s",
    )

    def row(self) -> tuple:
        """Deterministic metrics.csv row; wall-clock timing is written separately."""
        return (
            self.success,
            self.reached_goal,
            self.path_length,
            self.smoothness,
            self.min_gamma,
            self.min_clearance,
            self.coverage_total,
            self.mean_coverage_ratio,
            float(np.mean(self.gsd)),
            float(np.min(self.gsd)),
            self.min_altitude,
            self.emergency_steps,
            self.steps,
            self.duration,
        )


def reached_goal(P: np.ndarray, scenario: RiverScenario, tolerance: float) -> bool:
    """True once P is past the last tolerance meters of the channel centerline."""
    along, _, _ = scenario.channel_coordinates(np.asarray(P, dtype=float)[:2])
    return bool(along[0] >= scenario.length - tolerance)


def summarize_run(
    records: Sequence[StepRecord],
    scenario: RiverScenario,
    dt: float,
    goal_tolerance: float = 5.0,
    step_ms: Sequence[float] = (),
) -> RunMetrics:
    """
    Aggregate a run's step log.

    Args:
        records: Executed steps in order; the first is the start state
        scenario: River scenario flown
        dt: Step duration in seconds
        goal_tolerance: Along-track distance from the channel end counting as arrival
        step_ms: Optional planner compute times per step

    Returns:
        RunMetrics; success requires reaching the goal with every Gamma above 1

    Raises:
        ValueError: If the log is empty
    """
    if not records:
        raise ValueError("cannot summarize an empty step log")
    points = np.array([record.position for record in records])
    arrived = reached_goal(points[-1], scenario, goal_tolerance)
    gammas = np.array([record.min_gamma for record in records])
    min_gamma = float(gammas.min())

    if len(records) >= 2:
        path_length = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
        traj = Trajectory(
            points=points,
            psi=np.array([record.psi for record in records]),
            theta=np.array([record.theta for record in records]),
        )
        smooth = smoothness(traj, dt)
    else:
        path_length = smooth = 0.0

    return RunMetrics(
        success=arrived and min_gamma > 1.0,
        reached_goal=arrived,
        path_length=path_length,
        smoothness=smooth,
        min_gamma=min_gamma,
        min_clearance=min(record.clearance for record in records),
        coverage_total=records[-1].coverage_total,
        mean_coverage_ratio=float(np.mean([record.coverage_ratio for record in records])),
        gsd=np.array([record.gsd for record in records]),
        min_altitude=float(points[:, 2].min() - scenario.water_z),
        emergency_steps=sum(1 for record in records if record.emergency),
        steps=len(records) - 1,
        duration=records[-1].t - records[0].t,
        mean_step_ms=float(np.mean(step_ms)) if len(step_ms) else 0.0,
    )
