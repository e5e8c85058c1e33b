"""Receding-horizon optimization over IFDS parameter candidates."""

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .environment import RiverScenario, ScenarioError
from .geometry import GeometryError, ObstacleField, SuperEllipsoidObstacle, gamma_gradient
from .ifds import (
    GuidanceOutput,
    IfdsParams,
    KinematicLimits,
    Trajectory,
    UavState,
    advance,
    clamp_command,
    dfaa_triggered,
    effective_width,
    guided_step,
    kinematic_violations,
)
from .tracking import ObstacleTrack, predict_obstacles
from .utils import direction, wrap_angle

Snapshot = ObstacleField | Sequence[SuperEllipsoidObstacle]


class UndefinedAngleError(ValueError):
    """Raised when an angle between velocities involves a zero vector."""

    pass


def candidate_grid(
    rhos: Sequence[float] = (1.0, 1.5, 2.5),
    sigmas: Sequence[float] = (1.0, 1.5, 2.5),
    etas: Sequence[float] = (0.0, 0.3, 0.6),
    base: IfdsParams | None = None,
) -> tuple[IfdsParams, ...]:
    """
    Cartesian product of flow parameters, rho outermost and eta innermost.

    Args:
        rhos: Repulsion coefficients
        sigmas: Normal weight exponents
        etas: Descent guidance gains
        base: Template supplying tau, altitudes and gains not searched

    Returns:
        Tuple of candidates in enumeration order
    """
    base = base or IfdsParams()
    return tuple(
        replace(base, rho=rho, sigma_n=sigma, eta=eta)
        for rho in rhos
        for sigma in sigmas
        for eta in etas
    )


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    mu: tuple[float, float] = (1.0, 1.0)
    gamma_safe: float = 1.2
    candidates: tuple[IfdsParams, ...] = field(default_factory=candidate_grid)
    workers: int = 1
    band_priority: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if any(not 0.0 <= w <= 1.0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must lie in [0, 1] and sum to 1, got {self.weights}")
        if min(self.mu) < 0:
            raise ValueError(f"smoothness weights must be non-negative, got {self.mu}")
        if self.gamma_safe <= 1.0:
            raise ValueError(f"gamma_safe must exceed 1, got {self.gamma_safe}")
        if not self.candidates:
            raise ValueError("candidate grid is empty")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class CostBreakdown:
    """Tracking, obstacle and smoothness terms of one horizon window."""

    tracking: float
    obstacle: float
    smoothness: float
    total: float

    @classmethod
    def compose(
        cls,
        tracking: float,
        obstacle: float,
        smoothness: float,
        weights: tuple[float, float, float],
        feasible: bool = True,
    ) -> "CostBreakdown":
        """Weighted sum; infinite when infeasible or any term is infinite."""
        terms = (tracking, obstacle, smoothness)
        if not feasible or any(math.isinf(term) for term in terms):
            total = math.inf
        else:
            total = sum(w * term for w, term in zip(weights, terms, strict=True))
        return cls(tracking=tracking, obstacle=obstacle, smoothness=smoothness, total=total)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.total)


@dataclass(frozen=True, eq=False)
class Rollout:
    """Predicted states of one candidate over the horizon."""

    points: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    nominal: np.ndarray
    modulated: np.ndarray
    outputs: list[GuidanceOutput]
    error: str | None = None
    dfaa_triggered: bool = False
    clearance: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def completed(self) -> bool:
        return self.error is None

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(points=self.points, psi=self.psi, theta=self.theta)

    def clear_steps(self) -> int:
        """Number of leading predicted points outside every obstacle."""
        inside = np.flatnonzero(self.clearance <= 1.0)
        return int(inside[0]) if inside.size else len(self.clearance)


@dataclass(frozen=True, eq=False)
class StepDecision:
    """Outcome of one receding-horizon step."""

    state: UavState
    params: IfdsParams | None
    index: int
    cost: CostBreakdown
    guidance: GuidanceOutput
    emergency: bool = False


def as_fields(snapshots: Sequence[Snapshot]) -> list[ObstacleField]:
    return [s if isinstance(s, ObstacleField) else ObstacleField(s) for s in snapshots]


def rollout(
    state: UavState,
    candidate: IfdsParams,
    cfg: MpcConfig,
    scenario: RiverScenario,
    snapshots: Sequence[Snapshot],
    t: float,
    limits: KinematicLimits,
) -> Rollout:
    """
    Integrate the guidance law for N steps against predicted obstacles.

    Step i reacts to snapshot i. A guidance error mid-rollout ends the rollout
    early and marks it incomplete. `dfaa_triggered` records whether the descent
    condition held at any step, whatever the candidate's eta.

    Args:
        state: Current UAV state (point 0 of the rollout)
        candidate: Flow parameters under evaluation
        cfg: MPC configuration (horizon)
        scenario: River scenario
        snapshots: N + 1 obstacle snapshots
        t: Current time in seconds
        limits: Kinematic limits

    Returns:
        Rollout of up to N + 1 points
    """
    fields = as_fields(snapshots)
    points, psi, theta = [state.position], [state.psi], [state.theta]
    nominal, modulated, outputs = [], [], []
    error = None
    triggered = False
    current = state
    for i in range(cfg.horizon):
        try:
            position = current.position
            current, output = guided_step(
                current, t + i * limits.dt, scenario, fields[i], candidate, limits
            )
        except (ScenarioError, GeometryError) as e:
            error = str(e)
            break
        triggered = triggered or dfaa_triggered(output.w_eff, candidate, position, limits)
        points.append(current.position)
        psi.append(current.psi)
        theta.append(current.theta)
        nominal.append(output.nominal)
        modulated.append(output.velocity)
        outputs.append(output)
    return Rollout(
        points=np.array(points),
        psi=np.array(psi),
        theta=np.array(theta),
        nominal=np.array(nominal).reshape(-1, 3),
        modulated=np.array(modulated).reshape(-1, 3),
        outputs=outputs,
        error=error,
        dfaa_triggered=triggered,
    )


def tracking_cost(nominal: np.ndarray, modulated: np.ndarray) -> float:
    """
    Sum of (1 - cos) of the angle between nominal and modulated velocities.

    Raises:
        UndefinedAngleError: If any velocity is the zero vector
        ValueError: If the series are empty or differ in length
    """
    nominal = np.atleast_2d(np.asarray(nominal, dtype=float))
    modulated = np.atleast_2d(np.asarray(modulated, dtype=float))
    if nominal.shape != modulated.shape or len(nominal) == 0:
        raise ValueError("velocity series must be non-empty and of equal length")
    norms = np.linalg.norm(nominal, axis=1) * np.linalg.norm(modulated, axis=1)
    if np.any(norms == 0):
        raise UndefinedAngleError("undefined angle")
    cosines = np.clip(np.einsum("ij,ij->i", nominal, modulated) / norms, -1.0, 1.0)
    return float(np.sum(1.0 - cosines))


def penalty_from_gammas(values: np.ndarray, gamma_safe: float) -> float:
    """Barrier penalty of Gamma values: 0 above gamma_safe, 1/(Gamma-1) in the band, inf inside."""
    values = np.asarray(values, dtype=float)
    if np.any(values <= 1.0):
        return math.inf
    band = values[values <= gamma_safe]
    return float(np.sum(1.0 / (band - 1.0)))


def obstacle_penalty(points: np.ndarray, snapshots: Sequence[Snapshot], gamma_safe: float) -> float:
    """
    Barrier penalty summed over every obstacle and every point.

    Args:
        points: (K, 3) points; point i is checked against snapshot i
        snapshots: At least K obstacle snapshots
        gamma_safe: Safety band threshold (> 1)

    Returns:
        Non-negative penalty, or inf if any point lies inside an obstacle
    """
    fields = as_fields(snapshots)
    if len(fields) < len(points):
        raise ValueError("fewer obstacle snapshots than points")
    total = 0.0
    for P, snapshot in zip(points, fields, strict=False):
        total += penalty_from_gammas(snapshot.gammas(P), gamma_safe)
        if math.isinf(total):
            break
    return total


def smoothness_cost(traj: Trajectory, mu1: float, mu2: float) -> float:
    """Weighted sum of absolute wrapped heading and path-angle changes."""
    d_psi = sum(abs(wrap_angle(d)) for d in np.diff(traj.psi))
    d_theta = sum(abs(wrap_angle(d)) for d in np.diff(traj.theta))
    return float(mu1 * d_psi + mu2 * d_theta)


def feasibility(
    traj: Trajectory,
    limits: KinematicLimits,
    snapshots: Sequence[Snapshot],
    gammas: Sequence[np.ndarray] | None = None,
) -> bool:
    """
    Check turn rate, path angle, altitude band and Gamma > 1.

    Point 0 is the already committed state; obstacle clearance is checked for
    every later point i against snapshot i, or read from `gammas` (Gamma values
    of points 1..K) when the caller already has them.
    """
    if kinematic_violations(traj, limits):
        return False
    if gammas is None:
        fields = as_fields(snapshots)
        gammas = [s.gammas(P) for P, s in zip(traj.points[1:], fields[1:], strict=False)]
    return all(not values.size or values.min() > 1.0 for values in gammas)


def evaluate_candidate(
    state: UavState,
    candidate: IfdsParams,
    cfg: MpcConfig,
    scenario: RiverScenario,
    fields: Sequence[ObstacleField],
    t: float,
    limits: KinematicLimits,
) -> tuple[Rollout, CostBreakdown]:
    """
    Roll out one candidate and score it; infeasible rollouts cost inf.

    Gamma is evaluated once per predicted point and shared by the penalty, the
    feasibility check and the rollout's clearance record.
    """
    result = rollout(state, candidate, cfg, scenario, fields, t, limits)
    gammas = [s.gammas(P) for P, s in zip(result.points[1:], fields[1:], strict=False)]
    result = replace(
        result, clearance=np.array([v.min() if v.size else math.inf for v in gammas])
    )
    if not result.completed:
        return result, CostBreakdown(math.inf, math.inf, math.inf, math.inf)
    traj = result.trajectory
    obstacle = 0.0
    for values in gammas:
        obstacle += penalty_from_gammas(values, cfg.gamma_safe)
        if math.isinf(obstacle):
            break
    return result, CostBreakdown.compose(
        tracking_cost(result.nominal, result.modulated),
        obstacle,
        smoothness_cost(traj, *cfg.mu),
        cfg.weights,
        feasible=feasibility(traj, limits, fields, gammas),
    )


def evaluate_candidates(
    state: UavState,
    cfg: MpcConfig,
    scenario: RiverScenario,
    snapshots: Sequence[Snapshot],
    t: float,
    limits: KinematicLimits,
) -> list[tuple[Rollout, CostBreakdown]]:
    """
    Score every candidate of the grid, in grid order.

    Candidates differing only in eta fly the same rollout until the descent
    condition holds, so the first candidate of each such group is rolled out
    first and its result reused by the others when the condition never held.
    Runs on a thread pool when cfg.workers > 1; results keep grid order.
    """
    fields = as_fields(snapshots)
    if len(fields) < cfg.horizon + 1:
        raise ValueError(f"need {cfg.horizon + 1} obstacle snapshots, got {len(fields)}")

    def score(index: int) -> tuple[Rollout, CostBreakdown]:
        return evaluate_candidate(
            state, cfg.candidates[index], cfg, scenario, fields, t, limits
        )

    def score_all(indices: list[int]) -> list[tuple[Rollout, CostBreakdown]]:
        if cfg.workers == 1 or len(indices) < 2:
            return [score(index) for index in indices]
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(score, indices))

    leaders = {}
    for index, candidate in enumerate(cfg.candidates):
        leaders.setdefault(replace(candidate, eta=0.0), index)
    leader_of = [leaders[replace(c, eta=0.0)] for c in cfg.candidates]

    first = sorted(set(leader_of))
    scored = dict(zip(first, score_all(first), strict=True))
    rest = [
        index
        for index, leader in enumerate(leader_of)
        if index not in scored
        and (scored[leader][0].dfaa_triggered or not scored[leader][0].completed)
    ]
    scored.update(zip(rest, score_all(rest), strict=True))
    return [scored.get(index, scored[leader]) for index, leader in enumerate(leader_of)]


def emergency_step(
    state: UavState,
    scenario: RiverScenario,
    snapshot: ObstacleField,
    t: float,
    limits: KinematicLimits,
) -> tuple[UavState, GuidanceOutput]:
    """
    Maximum-rate climbing turn away from the nearest obstacle.

    The turn heads toward the horizontal projection of the nearest obstacle's
    Gamma gradient; without obstacles the heading is held.
    """
    psi_cmd = state.psi
    if len(snapshot):
        _, index = snapshot.nearest(state.position)
        grad = gamma_gradient(state.position, snapshot.obstacles[index])
        if math.hypot(grad[0], grad[1]) > 0:
            psi_cmd = math.atan2(grad[1], grad[0])
    psi, theta = clamp_command(state, psi_cmd, limits.theta_max, limits, limits.v0)
    velocity = limits.v0 * direction(psi, theta)
    output = GuidanceOutput(
        velocity=velocity,
        dfaa_active=False,
        w_eff=effective_width(state.position, t, scenario),
        nominal=velocity,
        psi=psi,
        theta=theta,
    )
    return advance(state, psi, theta, limits.v0, limits.dt), output


def safety_tier(rollout: Rollout, cost: CostBreakdown, gamma_safe: float) -> int:
    """
    Rank a feasible rollout by how well it keeps out of the safety band.

    0: no predicted point enters the band; 1: the committed point clears
    gamma_safe; 2: any other feasible rollout.
    """
    if cost.obstacle == 0.0:
        return 0
    if rollout.clearance.size and rollout.clearance[0] >= gamma_safe:
        return 1
    return 2


def select(costs: Sequence[CostBreakdown], tiers: Sequence[int] | None = None) -> int:
    """
    Index of the lowest (tier, total); lowest index wins ties. -1 if all are infinite.

    Without tiers this is the plain argmin of the total cost.
    """
    tiers = tiers if tiers is not None else [0] * len(costs)
    best, best_key = -1, (math.inf, math.inf)
    for index, (cost, tier) in enumerate(zip(costs, tiers, strict=True)):
        if math.isfinite(cost.total) and (tier, cost.total) < best_key:
            best, best_key = index, (tier, cost.total)
    return best


def fallback_index(rollouts: Sequence[Rollout]) -> int:
    """
    Least-bad rollout when every candidate is infeasible, or -1.

    Only rollouts whose committed point stays outside every predicted obstacle
    qualify; they rank by the number of leading points outside every obstacle,
    then by the Gamma of the committed point.
    """
    best, best_key = -1, (0, 1.0)
    for index, result in enumerate(rollouts):
        if len(result.points) < 2 or not result.clearance.size:
            continue
        key = (result.clear_steps(), float(result.clearance[0]))
        if key[1] > 1.0 and key > best_key:
            best, best_key = index, key
    return best


def optimize_over(
    state: UavState,
    cfg: MpcConfig,
    scenario: RiverScenario,
    snapshots: Sequence[Snapshot],
    t: float,
    limits: KinematicLimits,
) -> StepDecision:
    """
    Pick the best candidate against given obstacle snapshots and commit one step.

    The committed step is the first step of the chosen rollout. With
    `band_priority` the choice prefers rollouts that stay out of the safety band
    (see `safety_tier`); otherwise it is the plain argmin of J. If every
    candidate is infeasible the step is flagged as an emergency: it follows the
    least-bad rollout when one starts outside every obstacle, else a climbing
    turn away from the nearest obstacle.
    """
    fields = as_fields(snapshots)
    scored = evaluate_candidates(state, cfg, scenario, fields, t, limits)
    costs = [cost for _, cost in scored]
    tiers = None
    if cfg.band_priority:
        tiers = [safety_tier(result, cost, cfg.gamma_safe) for result, cost in scored]
    index = select(costs, tiers)
    emergency = index < 0
    if emergency:
        index = fallback_index([result for result, _ in scored])
    if index < 0:
        next_state, output = emergency_step(state, scenario, fields[0], t, limits)
        cost = CostBreakdown(math.inf, math.inf, math.inf, math.inf)
        return StepDecision(next_state, None, -1, cost, output, emergency=True)

    chosen, cost = scored[index]
    next_state = UavState(
        position=chosen.points[1], psi=chosen.psi[1], theta=chosen.theta[1], speed=limits.v0
    )
    return StepDecision(
        next_state, cfg.candidates[index], index, cost, chosen.outputs[0], emergency=emergency
    )


def optimize_step(
    state: UavState,
    cfg: MpcConfig,
    scenario: RiverScenario,
    tracks: Sequence[ObstacleTrack],
    t: float,
    limits: KinematicLimits,
) -> StepDecision:
    """
    One receding-horizon step: predict the tracks over N steps, optimize, commit.

    Args:
        state: Current UAV state
        cfg: MPC configuration
        scenario: River scenario
        tracks: Current obstacle tracks
        t: Current time in seconds
        limits: Kinematic limits

    Returns:
        StepDecision with the next state, chosen candidate and its cost; failure
        is flagged through `emergency`, never raised
    """
    snapshots = predict_obstacles(tracks, cfg.horizon, limits.dt)
    return optimize_over(state, cfg, scenario, snapshots, t, limits)


def executed_cost(
    traj: Trajectory,
    nominal: np.ndarray,
    modulated: np.ndarray,
    gammas: Sequence[np.ndarray],
    cfg: MpcConfig,
) -> CostBreakdown:
    """
    Composite cost of an executed path.

    Args:
        traj: Executed trajectory
        nominal: Reference velocities per executed step
        modulated: Flown velocities per executed step
        gammas: Ground-truth Gamma values of every executed point after the first
        cfg: MPC configuration (weights, smoothness weights, gamma_safe)
    """
    obstacle = 0.0
    for values in gammas:
        obstacle += penalty_from_gammas(values, cfg.gamma_safe)
    return CostBreakdown.compose(
        tracking_cost(nominal, modulated),
        obstacle,
        smoothness_cost(traj, *cfg.mu),
        cfg.weights,
    )
