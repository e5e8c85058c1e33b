"""Comparison planners: PID lateral tracking with reactive avoidance, and IFDS without MPC."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .environment import RiverScenario, clear_width
from .geometry import ObstacleField, SuperEllipsoidObstacle, gamma_gradient
from .ifds import (
    GuidanceOutput,
    IfdsParams,
    KinematicLimits,
    UavState,
    advance,
    clamp_command,
    guided_step,
)
from .utils import direction, wrap_angle

MAX_CORRECTION = 0.5  # rad


@dataclass(frozen=True)
class PidGains:
    """Lateral and altitude PID gains plus the reactive avoidance rule."""

    kp: float = 0.02
    ki: float = 0.0001
    kd: float = 0.02
    integral_clamp: float = 200.0  # m*s
    kp_alt: float = 0.01
    kd_alt: float = 0.05
    warning_gamma: float = 2.0
    speed_cut: float = 0.3

    def __post_init__(self):
        gains = (self.kp, self.ki, self.kd, self.kp_alt, self.kd_alt)
        if min(gains) < 0:
            raise ValueError(f"PID gains must be non-negative, got {gains}")
        if self.integral_clamp <= 0:
            raise ValueError(f"integral clamp must be positive, got {self.integral_clamp}")
        if not 0 <= self.speed_cut < 1:
            raise ValueError(f"speed cut must be in [0, 1), got {self.speed_cut}")


@dataclass(frozen=True)
class AvoidanceOverride:
    psi: float
    speed: float


def simple_avoidance(
    state: UavState,
    obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle],
    gains: PidGains,
    limits: KinematicLimits,
) -> AvoidanceOverride | None:
    """
    Reactive steering rule of the PID baseline.

    Once the nearest obstacle's Gamma drops below the warning level, turn at the
    maximum rate toward the horizontal Gamma gradient (away from the obstacle)
    and cut speed.

    Returns:
        The override, or None while every obstacle is outside the warning range
    """
    field = obstacles if isinstance(obstacles, ObstacleField) else ObstacleField(obstacles)
    if not len(field):
        return None
    nearest, index = field.nearest(state.position)
    if nearest >= gains.warning_gamma:
        return None
    grad = gamma_gradient(state.position, field.obstacles[index])
    away = math.atan2(grad[1], grad[0]) if math.hypot(grad[0], grad[1]) > 0 else state.psi
    turn = math.copysign(limits.max_turn, wrap_angle(away - state.psi))
    return AvoidanceOverride(
        psi=wrap_angle(state.psi + turn), speed=limits.v0 * (1.0 - gains.speed_cut)
    )


class PidController:
    """
    Pure PID cross-track controller at fixed cruise altitude.

    Heading follows the local centerline tangent minus a PID correction on the
    signed cross-track error (left positive). Altitude is held with a PD loop on
    the cruise altitude, so a vehicle at cruise never changes height.
    """

    def __init__(self, gains: PidGains, limits: KinematicLimits, avoidance: bool = True):
        self.gains = gains
        self.limits = limits
        self.avoidance = avoidance
        self.integral = 0.0
        self.previous_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.previous_error = None

    def _lateral(self, error: float) -> float:
        """PID correction in radians."""
        dt = self.limits.dt
        rate = 0.0 if self.previous_error is None else (error - self.previous_error) / dt
        self.previous_error = error
        clamp = self.gains.integral_clamp
        self.integral = min(max(self.integral + error * dt, -clamp), clamp)
        correction = self.gains.kp * error + self.gains.ki * self.integral + self.gains.kd * rate
        return min(max(correction, -MAX_CORRECTION), MAX_CORRECTION)

    def _pitch(self, state: UavState) -> float:
        error = self.limits.h_cruise - state.position[2]
        climb_rate = state.speed * math.sin(state.theta)
        command = self.gains.kp_alt * error - self.gains.kd_alt * climb_rate
        return math.atan(command)

    def step(
        self,
        state: UavState,
        t: float,
        scenario: RiverScenario,
        obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle] = (),
    ) -> tuple[UavState, GuidanceOutput, bool]:
        """
        Advance one step.

        Args:
            state: Current UAV state
            t: Time in seconds
            scenario: River scenario (centerline and transects)
            obstacles: Current obstacle snapshot for the avoidance rule

        Returns:
            Tuple of (next state, guidance record, whether avoidance overrode)
        """
        _, cross, index = scenario.channel_coordinates(state.position[:2])
        tangent = scenario.tangents[index[0]]
        psi_cmd = math.atan2(tangent[1], tangent[0]) - self._lateral(float(cross[0]))
        theta_cmd = self._pitch(state)
        speed = self.limits.v0

        override = None
        if self.avoidance:
            override = simple_avoidance(state, obstacles, self.gains, self.limits)
        if override is not None:
            psi_cmd, speed = override.psi, override.speed

        psi, theta = clamp_command(state, psi_cmd, theta_cmd, self.limits, speed)
        nominal = self.limits.v0 * np.array([tangent[0], tangent[1], 0.0])
        output = GuidanceOutput(
            velocity=speed * direction(psi, theta),
            dfaa_active=False,
            w_eff=clear_width(scenario, state.position, t),
            nominal=nominal,
            psi=psi,
            theta=theta,
        )
        return advance(state, psi, theta, speed, self.limits.dt), output, override is not None


def ifds_only_step(
    state: UavState,
    t: float,
    scenario: RiverScenario,
    obstacles: ObstacleField | Sequence[SuperEllipsoidObstacle],
    params: IfdsParams,
    limits: KinematicLimits,
) -> tuple[UavState, GuidanceOutput]:
    """Guidance with one fixed parameter set against the current obstacle snapshot only."""
    return guided_step(state, t, scenario, obstacles, params, limits)
