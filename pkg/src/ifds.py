"""Interfered fluid flow guidance: initial paths, modulation, DFAA and the closed-loop law."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .environment import RiverScenario, clear_width, reference_field
from .geometry import (
    GeometryError,
    ObstacleField,
    SuperEllipsoidObstacle,
    gamma,
    gamma_gradient,
)
from .utils import direction, heading_pitch, wrap_angle

FAR_FIELD_GAMMA = 1e4
DEGENERATE_NORMAL = 1e-12
STEP_TOLERANCE = 0.01
ANGLE_TOLERANCE = 1e-9

Z_AXIS = np.array([0.0, 0.0, 1.0])
X_AXIS = np.array([1.0, 0.0, 0.0])


class PathGenerationError(ValueError):
    """Raised when no initial path satisfies the kinematic limits."""

    pass


@dataclass(frozen=True)
class KinematicLimits:
    """
    Maneuverability limits of the simplified kinematic UAV.

    Altitudes are heights above the water surface (z = 0 in every preset).
    """

    omega_max: float = 0.5
    theta_min: float = -0.35
    theta_max: float = 0.35
    h_min: float = 40.0
    h_max: float = 120.0
    v0: float = 10.0
    dt: float = 0.1
    h_cruise: float = 100.0

    def __post_init__(self):
        if self.omega_max <= 0 or self.v0 <= 0 or self.dt <= 0:
            raise ValueError("omega_max, v0 and dt must be positive")
        if self.theta_min >= self.theta_max:
            raise ValueError(f"theta_min {self.theta_min} must be below theta_max {self.theta_max}")
        if self.h_min >= self.h_max:
            raise ValueError(f"h_min {self.h_min} must be below h_max {self.h_max}")
        if not self.h_min <= self.h_cruise <= self.h_max:
            raise ValueError(
                f"cruise altitude {self.h_cruise} outside [{self.h_min}, {self.h_max}]"
            )

    @property
    def step_length(self) -> float:
        return self.v0 * self.dt

    @property
    def max_turn(self) -> float:
        """Largest heading change allowed in one step."""
        return self.omega_max * self.dt


@dataclass(frozen=True)
class IfdsParams:
    """Tunable flow-field parameters; the MPC searches over rho, sigma_n and eta."""

    rho: float = 1.5
    sigma_n: float = 1.5
    eta: float = 0.3
    tau: float = 30.0
    dfaa_altitude: float = 55.0
    altitude_gain: float = 0.3
    k_n: float = 0.05

    def __post_init__(self):
        if self.rho <= 0 or self.sigma_n <= 0:
            raise ValueError("rho and sigma_n must be positive")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True, eq=False)
class UavState:
    """Kinematic flight state."""

    position: np.ndarray
    psi: float
    theta: float = 0.0
    speed: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * direction(self.psi, self.theta)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discrete path points with per-point heading and flight path angle."""

    points: np.ndarray
    psi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a trajectory needs at least 2 points")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_points(
        cls, points: np.ndarray, psi0: float | None = None, theta0: float | None = None
    ) -> "Trajectory":
        """
        Build a trajectory whose angles are those of the segment arriving at each point.

        The first point takes psi0/theta0 when given, otherwise the first segment's angles.
        """
        points = np.asarray(points, dtype=float)
        angles = [heading_pitch(segment) for segment in np.diff(points, axis=0)]
        psi = [a[0] for a in angles]
        theta = [a[1] for a in angles]
        return cls(
            points=points,
            psi=np.array([psi[0] if psi0 is None else psi0, *psi]),
            theta=np.array([theta[0] if theta0 is None else theta0, *theta]),
        )


@dataclass(frozen=True, eq=False)
class GuidanceOutput:
    """Result of one evaluation of the closed-loop guidance law."""

    velocity: np.ndarray
    dfaa_active: bool
    w_eff: float
    nominal: np.ndarray
    psi: float
    theta: float
    nearest_gamma: float = math.inf


def kinematic_violations(traj: Trajectory, limits: KinematicLimits) -> list[str]:
    """
    List every turn-rate, path-angle and altitude violation of a trajectory.

    Returns:
        Human-readable violation descriptions; empty when all limits hold
    """
    problems = []
    turns = np.abs([wrap_angle(d) for d in np.diff(traj.psi)])
    for index in np.flatnonzero(turns > limits.max_turn + ANGLE_TOLERANCE):
        problems.append(f"turn {turns[index]:.4f} rad at step {index + 1}")
    low = traj.theta < limits.theta_min - ANGLE_TOLERANCE
    high = traj.theta > limits.theta_max + ANGLE_TOLERANCE
    for index in np.flatnonzero(low | high):
        problems.append(f"path angle {traj.theta[index]:.4f} rad at point {index}")
    z = traj.points[:, 2]
    for index in np.flatnonzero((z < limits.h_min - 1e-9) | (z > limits.h_max + 1e-9)):
        problems.append(f"altitude {z[index]:.2f} m at point {index}")
    return problems


def gen_initial_path(
    start: np.ndarray, goal: np.ndarray, limits: KinematicLimits, seed: int
) -> Trajectory:
    """
    Generate a random smooth initial path with constant step length V0*dT.

    The path is the start-goal chord bent sideways by a seeded sinusoidal bump,
    stretched so its length is an exact multiple of the step length, then
    resampled at equal arc length.

    Args:
        start: Start point
        goal: Goal point
        limits: Kinematic limits
        seed: Random seed

    Returns:
        Trajectory of K+1 points from start to goal

    Raises:
        PathGenerationError: If the endpoints violate the altitude band or no
            path within the limits exists
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    for name, point in (("start", start), ("goal", goal)):
        if not limits.h_min <= point[2] <= limits.h_max:
            raise PathGenerationError(
                f"{name} altitude {point[2]} outside [{limits.h_min}, {limits.h_max}]"
            )
    chord = goal - start
    distance = float(np.linalg.norm(chord))
    if distance == 0.0:
        raise PathGenerationError("start and goal coincide")

    step = limits.step_length
    rng = np.random.default_rng(seed)
    base = math.ceil(distance / step - 1e-9)
    steps = base + int(rng.integers(0, base // 20 + 1))
    if steps > math.ceil(10 * distance / step):
        raise PathGenerationError("path generation failed: step budget exceeded")
    side = float(rng.choice([-1.0, 1.0]))
    mode = int(rng.integers(1, 3))

    lateral = np.cross(Z_AXIS, np.array([chord[0], chord[1], 0.0]))
    if np.linalg.norm(lateral) < 1e-9:
        lateral = X_AXIS.copy()
    lateral = side * lateral / np.linalg.norm(lateral)
    u = np.linspace(0.0, 1.0, 4001)

    def curve(amplitude: float) -> np.ndarray:
        bump = amplitude * np.sin(mode * math.pi * u)
        return start + u[:, None] * chord + bump[:, None] * lateral

    def length(amplitude: float) -> float:
        return float(np.sum(np.linalg.norm(np.diff(curve(amplitude), axis=0), axis=1)))

    target = steps * step
    amplitude = 0.0
    if length(0.0) < target - 1e-9:
        upper = distance
        while length(upper) < target:
            upper *= 2.0
        amplitude = brentq(lambda a: length(a) - target, 0.0, upper, xtol=1e-10)

    dense = curve(amplitude)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    stations = np.linspace(0.0, arc[-1], steps + 1)
    points = np.column_stack([np.interp(stations, arc, dense[:, k]) for k in range(3)])
    points[0], points[-1] = start, goal
    traj = Trajectory.from_points(points)

    problems = kinematic_violations(traj, limits)
    lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.any(np.abs(lengths - step) > STEP_TOLERANCE * step):
        problems.append("step length off by more than 1%")
    if problems:
        raise PathGenerationError(f"path generation failed: {problems[0]}")
    return traj


def velocity_field_from_path(traj: Trajectory, dt: float) -> np.ndarray:
    """
    Differentiate a path into its velocity field.

    Returns:
        (K, 3) array u_i = (P_{i+1} - P_i) / dt
    """
    return np.diff(traj.points, axis=0) / dt


def modulation_matrix(
    P: np.ndarray,
    obs: SuperEllipsoidObstacle,
    params: IfdsParams,
    u: np.ndarray | None = None,
) -> np.ndarray:
    """
    Build the interfered-flow modulation matrix at an exterior point.

    M = I - w*n n^T + (g/rho)*t n^T with w = Gamma^(-1/sigma_n), g = Gamma^(-1/rho),
    n the unit outward normal and t a unit tangent orthogonal to n. When the
    velocity u is given, t is oriented so the tangential term keeps u moving
    forward around the obstacle.

    Raises:
        GeometryError: If the Gamma gradient vanishes
    """
    grad = gamma_gradient(P, obs)
    norm = float(np.linalg.norm(grad))
    if norm < DEGENERATE_NORMAL:
        raise GeometryError("degenerate normal")
    normal = grad / norm

    # n x z, falling back to n x x for near-vertical normals.
    tangent = np.array([normal[1], -normal[0], 0.0])
    if np.linalg.norm(tangent) < 1e-6:
        tangent = np.array([0.0, normal[2], -normal[1]])
    tangent = tangent / np.linalg.norm(tangent)
    if u is not None and np.dot(normal, u) * np.dot(tangent, u) < 0:
        tangent = -tangent

    value = gamma(P, obs)
    weight = value ** (-1.0 / params.sigma_n)
    tangential = value ** (-1.0 / params.rho) / params.rho
    return np.eye(3) - weight * np.outer(normal, normal) + tangential * np.outer(tangent, normal)


def _as_field(obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle]) -> ObstacleField:
    if isinstance(obstacles, ObstacleField):
        return obstacles
    return ObstacleField(obstacles)


def _rescale(vector: np.ndarray, fallback: np.ndarray, speed: float) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm < 1e-12:
        vector, norm = fallback, float(np.linalg.norm(fallback))
    return vector * (speed / norm)


def modulate_velocity(
    P: np.ndarray,
    u: np.ndarray,
    obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle],
    params: IfdsParams,
    limits: KinematicLimits,
) -> np.ndarray:
    """
    Modulate a nominal velocity around the nearest moving obstacle.

    Returns:
        u' = beta * (M (u - v_P) + v_P) rescaled to V0; far from every obstacle
        (min Gamma >= 1e4) the input rescaled to V0
    """
    field = _as_field(obstacles)
    if len(field) == 0:
        return _rescale(u, u, limits.v0)
    nearest, index = field.nearest(P)
    if nearest >= FAR_FIELD_GAMMA:
        return _rescale(u, u, limits.v0)
    obs = field.obstacles[index]
    relative = u - obs.velocity
    M = modulation_matrix(P, obs, params, relative)
    return _rescale(M @ relative + obs.velocity, u, limits.v0)


def effective_width(P: np.ndarray, t: float, scenario: RiverScenario) -> float:
    """Longest unshadowed cross-channel interval below P in meters (0 outside the corridor)."""
    return clear_width(scenario, P, t)


def dfaa_triggered(
    w_eff: float, params: IfdsParams, P: np.ndarray, limits: KinematicLimits
) -> bool:
    """True when the corridor is narrower than tau and a descent step stays above h_min."""
    return w_eff < params.tau and P[2] - limits.v0 * limits.dt >= limits.h_min


def apply_dfaa(
    M: np.ndarray, w_eff: float, params: IfdsParams, P: np.ndarray, limits: KinematicLimits
) -> np.ndarray:
    """Add the downward perturbation eta*diag(0, 0, -1) when DFAA triggers."""
    if not dfaa_triggered(w_eff, params, P, limits):
        return M
    return M + params.eta * np.diag([0.0, 0.0, -1.0])


def vertical_guidance(h: float, target: float, gain: float, v0: float) -> float:
    """
    Vertical velocity steering the altitude h toward target.

    Follows the sign law -h(h^2 - H^2), saturated smoothly at gain*V0.
    """
    if target <= 0:
        raise ValueError(f"target altitude must be positive, got {target}")
    return -gain * v0 * math.tanh(h * (h * h - target * target) / target**3)


def clamp_command(
    state: UavState, psi_cmd: float, theta_cmd: float, limits: KinematicLimits, speed: float
) -> tuple[float, float]:
    """
    Clamp a heading/path-angle command to the turn-rate, angle and altitude limits.

    Returns:
        Tuple of (psi, theta) actually flown over the next step
    """
    turn = wrap_angle(psi_cmd - state.psi)
    turn = min(max(turn, -limits.max_turn), limits.max_turn)
    psi = wrap_angle(state.psi + turn)

    theta = min(max(theta_cmd, limits.theta_min), limits.theta_max)
    step = speed * limits.dt
    z = state.position[2]
    if z + step * math.sin(theta) < limits.h_min:
        theta = math.asin(min(max((limits.h_min - z) / step, -1.0), 1.0))
    elif z + step * math.sin(theta) > limits.h_max:
        theta = math.asin(min(max((limits.h_max - z) / step, -1.0), 1.0))
    theta = min(max(theta, limits.theta_min), limits.theta_max)
    return psi, theta


def advance(state: UavState, psi: float, theta: float, speed: float, dt: float) -> UavState:
    """One kinematic Euler step."""
    position = state.position + speed * dt * direction(psi, theta)
    return UavState(position=position, psi=psi, theta=theta, speed=speed)


def total_guidance(
    state: UavState,
    t: float,
    scenario: RiverScenario,
    obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle],
    params: IfdsParams,
    limits: KinematicLimits,
) -> GuidanceOutput:
    """
    Evaluate the closed-loop guidance law at one state.

    Reference field -> nominal velocity at V0 -> modulation by the nearest
    obstacle with the DFAA-adjusted matrix -> vertical guidance -> clamp to the
    kinematic limits -> renormalize to V0.

    Args:
        state: Current UAV state
        t: Time in seconds
        scenario: River scenario (reference field and shadow transects)
        obstacles: Obstacle snapshot the guidance reacts to
        params: Flow-field parameters
        limits: Kinematic limits

    Returns:
        GuidanceOutput with the commanded velocity
    """
    field = _as_field(obstacles)
    P = state.position
    nominal = limits.v0 * reference_field(scenario, P, params.k_n)
    w_eff = effective_width(P, t, scenario)

    M = np.eye(3)
    obstacle_velocity = np.zeros(3)
    nearest = math.inf
    if len(field):
        nearest, index = field.nearest(P)
        if nearest < FAR_FIELD_GAMMA:
            obs = field.obstacles[index]
            obstacle_velocity = obs.velocity
            M = modulation_matrix(P, obs, params, nominal - obstacle_velocity)

    active = params.eta > 0 and dfaa_triggered(w_eff, params, P, limits)
    M = apply_dfaa(M, w_eff, params, P, limits)
    raw = M @ (nominal - obstacle_velocity) + obstacle_velocity

    if active:
        # Descend-only while the corridor stays narrow.
        descent = vertical_guidance(P[2], params.dfaa_altitude, params.eta, limits.v0)
        raw[2] = min(raw[2] + min(descent, 0.0), 0.0)
    else:
        raw[2] += vertical_guidance(P[2], limits.h_cruise, params.altitude_gain, limits.v0)

    raw = _rescale(raw, nominal, limits.v0)
    psi_cmd, theta_cmd = heading_pitch(raw)
    psi, theta = clamp_command(state, psi_cmd, theta_cmd, limits, limits.v0)
    return GuidanceOutput(
        velocity=limits.v0 * direction(psi, theta),
        dfaa_active=active,
        w_eff=w_eff,
        nominal=nominal,
        psi=psi,
        theta=theta,
        nearest_gamma=nearest,
    )


def guided_step(
    state: UavState,
    t: float,
    scenario: RiverScenario,
    obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle],
    params: IfdsParams,
    limits: KinematicLimits,
) -> tuple[UavState, GuidanceOutput]:
    """Evaluate the guidance law and fly one step of dT along it."""
    output = total_guidance(state, t, scenario, obstacles, params, limits)
    return advance(state, output.psi, output.theta, limits.v0, limits.dt), output
