"""Tests for rollouts, composite costs and the receding-horizon step."""

import math

import numpy as np
import pytest

from src import mpc
from src.environment import Observation, RiverScenario
from src.geometry import SuperEllipsoidObstacle, vec3
from src.ifds import IfdsParams, KinematicLimits, Trajectory, UavState, guided_step
from src.mpc import (
    CostBreakdown,
    MpcConfig,
    UndefinedAngleError,
    candidate_grid,
    evaluate_candidate,
    evaluate_candidates,
    executed_cost,
    feasibility,
    obstacle_penalty,
    optimize_over,
    optimize_step,
    rollout,
    select,
    smoothness_cost,
    tracking_cost,
)
from src.tracking import ObstacleTracker, TrackingConfig

LIMITS = KinematicLimits()


def straight_river() -> RiverScenario:
    points = np.array([[0, 0, 0], [100, 0, 0], [200, 0, 0], [300, 0, 0]], dtype=float)
    return RiverScenario(
        control_points=points,
        half_width=30.0,
        lower=vec3(-50, -100, -10),
        upper=vec3(350, 100, 300),
    )


def sphere(center, radius, inflation=1.0) -> SuperEllipsoidObstacle:
    return SuperEllipsoidObstacle(
        center=np.asarray(center, dtype=float),
        a=radius,
        b=radius,
        c=radius,
        inflation=(inflation, inflation, inflation),
    )


def static(obstacles, horizon=20):
    return [list(obstacles)] * (horizon + 1)


def random_scene(rng):
    obstacles = [
        sphere((rng.uniform(40, 80), rng.uniform(-15, 15), 100), rng.uniform(8, 15), 1.2)
        for _ in range(2)
    ]
    while True:
        state = UavState(position=vec3(rng.uniform(0, 10), rng.uniform(-10, 10), 100), psi=0.0)
        if all(clear_of(o, state.position) for o in obstacles):
            return state, obstacles


def clear_of(obstacle, position) -> bool:
    offset = position - obstacle.center
    return np.sum((offset / obstacle.scaled_axes) ** 2) > 1.5


def test_candidate_grid_order():
    """Test the default grid has 27 candidates, rho outermost and eta innermost."""
    grid = candidate_grid()
    assert len(grid) == 27
    assert (grid[0].rho, grid[0].sigma_n, grid[0].eta) == (1.0, 1.0, 0.0)
    assert (grid[1].rho, grid[1].sigma_n, grid[1].eta) == (1.0, 1.0, 0.3)
    assert (grid[-1].rho, grid[-1].sigma_n, grid[-1].eta) == (2.5, 2.5, 0.6)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"horizon": 0},
        {"weights": (0.5, 0.5, 0.5)},
        {"weights": (1.2, -0.1, -0.1)},
        {"gamma_safe": 1.0},
        {"candidates": ()},
        {"mu": (-1.0, 1.0)},
    ],
)
def test_config_validation(kwargs):
    """Test invalid MPC configurations are rejected."""
    with pytest.raises(ValueError):
        MpcConfig(**kwargs)


def test_cost_composition():
    """Test J is the weighted sum and any infinity makes it infinite."""
    cost = CostBreakdown.compose(1.5, 2.0, 0.25, (0.4, 0.4, 0.2))
    assert cost.total == pytest.approx(0.4 * 1.5 + 0.4 * 2.0 + 0.2 * 0.25, abs=1e-12)
    assert cost.feasible
    assert CostBreakdown.compose(1.0, math.inf, 0.0, (0.4, 0.4, 0.2)).total == math.inf
    assert CostBreakdown.compose(1.0, 0.0, 0.0, (0.0, 1.0, 0.0), feasible=False).total == math.inf


def test_rollout_single_step():
    """Test N = 1 yields two points one Euler step apart."""
    cfg = MpcConfig(horizon=1)
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    result = rollout(state, IfdsParams(), cfg, straight_river(), static([], 1), 0.0, LIMITS)
    assert len(result.points) == 2
    np.testing.assert_allclose(
        result.points[1], result.points[0] + result.modulated[0] * LIMITS.dt, atol=1e-12
    )


def test_rollout_converges_to_centerline():
    """Test an obstacle-free rollout never increases the cross-track error."""
    state = UavState(position=vec3(20, 8, 100), psi=0.0)
    result = rollout(state, IfdsParams(), MpcConfig(), straight_river(), static([]), 0.0, LIMITS)
    assert result.completed
    cross = np.abs(result.points[:, 1])
    assert np.all(np.diff(cross) <= 1e-9)
    assert cross[-1] < cross[0]


def test_rollout_deterministic():
    """Test identical inputs give identical rollouts."""
    state = UavState(position=vec3(20, 3, 100), psi=0.1)
    scene = static([sphere((50, 5, 100), 10, 1.2)])
    first = rollout(state, IfdsParams(), MpcConfig(), straight_river(), scene, 0.0, LIMITS)
    second = rollout(state, IfdsParams(), MpcConfig(), straight_river(), scene, 0.0, LIMITS)
    np.testing.assert_array_equal(first.points, second.points)


def test_rollout_marks_out_of_bounds_incomplete():
    """Test leaving the domain ends the rollout as incomplete."""
    state = UavState(position=vec3(345, 0, 100), psi=0.0)
    result = rollout(state, IfdsParams(), MpcConfig(), straight_river(), static([]), 0.0, LIMITS)
    assert not result.completed
    assert len(result.points) < 21


def test_tracking_cost_examples():
    """Test parallel, perpendicular and anti-parallel velocity pairs."""
    u = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]])
    assert tracking_cost(u, u) == pytest.approx(0.0, abs=1e-12)
    perpendicular = u.copy()
    perpendicular[0] = [0, 5, 0]
    assert tracking_cost(u, perpendicular) == pytest.approx(1.0)
    opposite = u.copy()
    opposite[1] = [0, -1, 0]
    assert tracking_cost(u, opposite) == pytest.approx(2.0)


def test_tracking_cost_zero_vector():
    """Test a zero velocity has no defined angle."""
    with pytest.raises(UndefinedAngleError, match="undefined angle"):
        tracking_cost(np.array([[1.0, 0, 0]]), np.zeros((1, 3)))


def test_obstacle_penalty_examples():
    """Test the zero, band and interior branches of the barrier penalty."""
    obs = sphere((0, 0, 100), 10)
    clear = np.array([[10 * math.sqrt(2), 0, 100]] * 3)
    assert obstacle_penalty(clear, static([obs], 2), 1.2) == 0.0
    band = clear.copy()
    band[1] = [10 * math.sqrt(1.1), 0, 100]
    assert obstacle_penalty(band, static([obs], 2), 1.2) == pytest.approx(10.0)
    inside = clear.copy()
    inside[2] = [10 * math.sqrt(0.9), 0, 100]
    assert obstacle_penalty(inside, static([obs], 2), 1.2) == math.inf


def test_obstacle_penalty_sums_obstacles():
    """Test the penalty sums over every obstacle."""
    point = np.array([[0, 0, 100]], dtype=float)
    offset = 10 * math.sqrt(1.1)
    pair = [sphere((offset, 0, 100), 10), sphere((-offset, 0, 100), 10)]
    assert obstacle_penalty(point, [pair], 1.2) == pytest.approx(20.0)


def test_smoothness_cost_examples():
    """Test the straight, single-turn and wrap-around cases."""
    zeros = np.zeros(5)
    points = np.zeros((5, 3))
    assert smoothness_cost(Trajectory(points, zeros, zeros), 1.0, 1.0) == 0.0
    turn = Trajectory(points, np.array([0, 0, 0.1, 0.1, 0.1]), zeros)
    assert smoothness_cost(turn, 1.0, 0.0) == pytest.approx(0.1)
    wrap = Trajectory(points[:2], np.array([3.1, -3.1]), zeros[:2])
    assert smoothness_cost(wrap, 1.0, 0.0) == pytest.approx(2 * math.pi - 6.2)


def flat_path(count=5, z=100.0, psi=None):
    points = np.column_stack([np.arange(count, dtype=float), np.zeros(count), np.full(count, z)])
    psi = np.zeros(count) if psi is None else np.asarray(psi)
    return Trajectory(points, psi, np.zeros(count))


def test_feasibility_straight_path():
    """Test a straight obstacle-free path in the altitude band is feasible."""
    assert feasibility(flat_path(), LIMITS, static([], 4))


def test_feasibility_below_floor():
    """Test one point under h_min makes the path infeasible."""
    traj = flat_path()
    traj.points[3, 2] = LIMITS.h_min - 1
    assert not feasibility(traj, LIMITS, static([], 4))


def test_feasibility_turn_rate():
    """Test a heading change 1% over the limit is infeasible."""
    traj = flat_path(psi=[0, 0, LIMITS.max_turn * 1.01, LIMITS.max_turn * 1.01, 0.0])
    assert not feasibility(traj, LIMITS, static([], 4))


def test_feasibility_obstacle():
    """Test a predicted point inside an obstacle is infeasible."""
    obs = sphere((3, 0, 100), 0.5)
    assert not feasibility(flat_path(), LIMITS, static([obs], 4))


def test_select_lowest_index_on_ties():
    """Test argmin ties go to the lowest index and all-infinite gives -1."""
    costs = [CostBreakdown(0, 0, 0, total) for total in (3.0, 1.0, 1.0, math.inf)]
    assert select(costs) == 1
    assert select([CostBreakdown(0, 0, 0, math.inf)] * 3) == -1


def test_single_candidate_is_chosen():
    """Test a feasible single-candidate grid picks it."""
    cfg = MpcConfig(candidates=(IfdsParams(),))
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    decision = optimize_over(state, cfg, straight_river(), static([]), 0.0, LIMITS)
    assert decision.index == 0
    assert not decision.emergency


def test_infeasible_candidate_loses_regardless_of_cost(mocker):
    """Test +inf dominance: the feasible candidate wins."""
    cfg = MpcConfig(candidates=(IfdsParams(rho=1.0), IfdsParams(rho=2.5)))
    mocker.patch.object(mpc, "feasibility", side_effect=[False, True])
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    decision = optimize_over(state, cfg, straight_river(), static([]), 0.0, LIMITS)
    assert decision.index == 1
    assert decision.params.rho == 2.5


def test_brute_force_argmin_on_random_scenes():
    """Test the choice is the exhaustive minimum of (safety tier, cost) over the grid."""
    river = straight_river()
    cfg = MpcConfig()
    for seed in range(20):
        state, obstacles = random_scene(np.random.default_rng(seed))
        scene = static(obstacles)
        decision = optimize_over(state, cfg, river, scene, 0.0, LIMITS)
        scored = [
            evaluate_candidate(state, c, cfg, river, mpc.as_fields(scene), 0.0, LIMITS)
            for c in cfg.candidates
        ]
        keys = [
            (mpc.safety_tier(result, cost, cfg.gamma_safe), cost.total) if cost.feasible else None
            for result, cost in scored
        ]
        feasible = [key for key in keys if key is not None]
        if not feasible:
            assert decision.emergency
            continue
        assert decision.index == keys.index(min(feasible))
        assert decision.cost.total == min(feasible)[1]


def test_plain_argmin_without_band_priority():
    """Test disabling band priority picks the lowest total cost."""
    river = straight_river()
    cfg = MpcConfig(band_priority=False)
    for seed in range(5):
        state, obstacles = random_scene(np.random.default_rng(seed))
        scene = static(obstacles)
        decision = optimize_over(state, cfg, river, scene, 0.0, LIMITS)
        totals = [
            evaluate_candidate(state, c, cfg, river, mpc.as_fields(scene), 0.0, LIMITS)[1].total
            for c in cfg.candidates
        ]
        if math.isinf(min(totals)):
            continue
        assert decision.cost.total == min(totals)
        assert decision.index == totals.index(min(totals))


def test_cost_decomposition_recomputes():
    """Test stored terms reproduce the stored total."""
    river = straight_river()
    cfg = MpcConfig()
    state, obstacles = random_scene(np.random.default_rng(99))
    for _, cost in evaluate_candidates(state, cfg, river, static(obstacles), 0.0, LIMITS):
        if cost.feasible:
            terms = (cost.tracking, cost.obstacle, cost.smoothness)
            recomputed = sum(w * c for w, c in zip(cfg.weights, terms, strict=True))
            assert recomputed == pytest.approx(cost.total, abs=1e-12)


def test_argmin_invariant_under_weight_scaling():
    """Test scaling and renormalizing the weights keeps the chosen candidate."""
    river = straight_river()
    for seed in range(5):
        state, obstacles = random_scene(np.random.default_rng(seed))
        scaled = tuple(3.0 * w for w in (0.4, 0.4, 0.2))
        renormalized = tuple(w / sum(scaled) for w in scaled)
        base = optimize_over(state, MpcConfig(), river, static(obstacles), 0.0, LIMITS)
        other = optimize_over(
            state, MpcConfig(weights=renormalized), river, static(obstacles), 0.0, LIMITS
        )
        assert base.index == other.index


def test_one_step_commit():
    """Test every committed step advances exactly V0 * dT."""
    river = straight_river()
    cfg = MpcConfig(horizon=5)
    state = UavState(position=vec3(0, 5, 100), psi=0.0)
    obstacles = [sphere((40, -5, 100), 8, 1.2)]
    for k in range(30):
        decision = optimize_over(state, cfg, river, static(obstacles, 5), k * 0.1, LIMITS)
        step = np.linalg.norm(decision.state.position - state.position)
        assert step == pytest.approx(LIMITS.v0 * LIMITS.dt, rel=1e-12)
        state = decision.state


def test_degenerate_grid_matches_guided_step():
    """Test a one-candidate grid commits exactly the guided step."""
    river = straight_river()
    params = IfdsParams(rho=2.5, eta=0.0)
    cfg = MpcConfig(candidates=(params,))
    state = UavState(position=vec3(10, 4, 100), psi=0.05)
    obstacles = [sphere((45, 0, 100), 10, 1.2)]
    decision = optimize_over(state, cfg, river, static(obstacles), 0.0, LIMITS)
    expected, _ = guided_step(state, 0.0, river, obstacles, params, LIMITS)
    np.testing.assert_array_equal(decision.state.position, expected.position)
    assert decision.state.psi == expected.psi


def test_all_infeasible_triggers_emergency():
    """Test an inescapable scene flags failure and climbs away from the obstacle."""
    river = straight_river()
    state = UavState(position=vec3(100, 5, 100), psi=0.0)
    obstacles = [sphere((100, 0, 100), 20)]
    decision = optimize_over(state, MpcConfig(), river, static(obstacles), 0.0, LIMITS)
    assert decision.emergency
    assert decision.index == -1
    assert decision.params is None
    assert decision.state.psi == pytest.approx(LIMITS.max_turn)
    assert decision.state.position[2] > 100


def test_parallel_evaluation_matches_sequential():
    """Test the thread pool keeps the grid-ordered result."""
    river = straight_river()
    state, obstacles = random_scene(np.random.default_rng(5))
    sequential = optimize_over(state, MpcConfig(), river, static(obstacles), 0.0, LIMITS)
    parallel = optimize_over(state, MpcConfig(workers=4), river, static(obstacles), 0.0, LIMITS)
    assert sequential.index == parallel.index
    np.testing.assert_array_equal(sequential.state.position, parallel.state.position)


def test_optimize_step_with_tracks():
    """Test optimize_step predicts tracks and commits one step."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1)
    tracker.step(
        [Observation(0, vec3(60, 10, 100), 10.0, aspect=1.0, yaw=0.0, exponent=1)]
    )
    state = UavState(position=vec3(0, 0, 100), psi=0.0)
    decision = optimize_step(state, MpcConfig(), straight_river(), tracker.current(), 0.0, LIMITS)
    assert not decision.emergency
    assert np.linalg.norm(decision.state.position - state.position) == pytest.approx(1.0)


def test_executed_cost():
    """Test the executed-path cost composes tracking, clearance and smoothness."""
    traj = flat_path(psi=[0, 0, 0.1, 0.1, 0.1])
    u = np.tile([10.0, 0, 0], (4, 1))
    gammas = [np.array([5.0]), np.array([1.1]), np.array([3.0]), np.array([2.0])]
    cost = executed_cost(traj, u, u, gammas, MpcConfig())
    assert cost.tracking == pytest.approx(0.0, abs=1e-12)
    assert cost.obstacle == pytest.approx(10.0)
    assert cost.smoothness == pytest.approx(0.1)
    assert cost.total == pytest.approx(0.4 * 10.0 + 0.2 * 0.1)


def fake_rollout(clearance, count=None):
    count = len(clearance) + 1 if count is None else count
    return mpc.Rollout(
        points=np.zeros((count, 3)),
        psi=np.zeros(count),
        theta=np.zeros(count),
        nominal=np.zeros((count - 1, 3)),
        modulated=np.zeros((count - 1, 3)),
        outputs=[],
        clearance=np.asarray(clearance, dtype=float),
    )


def test_select_prefers_lower_safety_tier():
    """Test a band-free candidate beats a cheaper one that enters the band."""
    costs = [CostBreakdown(0, 1.0, 0, 1.0), CostBreakdown(0, 0.0, 0, 5.0)]
    assert select(costs, [2, 0]) == 1
    assert select(costs) == 0
    infinite = [CostBreakdown(0, 0, 0, math.inf), CostBreakdown(0, 2.0, 0, 3.0)]
    assert select(infinite, [0, 2]) == 1


def test_safety_tier_levels():
    """Test the tier of clear, committed-safe and band-entering rollouts."""
    in_band = CostBreakdown(0, 4.0, 0, 2.0)
    assert mpc.safety_tier(fake_rollout([3.0, 2.0]), CostBreakdown(0, 0, 0, 1.0), 1.2) == 0
    assert mpc.safety_tier(fake_rollout([1.5, 1.1]), in_band, 1.2) == 1
    assert mpc.safety_tier(fake_rollout([1.1, 1.5]), in_band, 1.2) == 2


def test_fallback_prefers_longest_clear_prefix():
    """Test the fallback ranks rollouts by clear prefix, then committed Gamma."""
    rollouts = [
        fake_rollout([0.8, 2.0, 2.0, 2.0]),
        fake_rollout([1.3, 1.2, 0.9, 0.5]),
        fake_rollout([1.05, 1.1, 1.1, 0.7]),
        fake_rollout([1.4, 1.1, 1.1, 0.9]),
        fake_rollout([], count=1),
    ]
    assert mpc.fallback_index(rollouts) == 3
    assert mpc.fallback_index(rollouts[:1]) == -1


def test_emergency_follows_least_bad_rollout():
    """Test an unavoidable later collision commits the first step of a clear rollout."""
    river = straight_river()
    cfg = MpcConfig()
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    scene = [[]] * 5 + [[sphere((30, 0, 100), 200)]] * 16
    decision = optimize_over(state, cfg, river, scene, 0.0, LIMITS)

    assert decision.emergency
    assert decision.index == 0
    assert decision.params == cfg.candidates[0]
    assert math.isinf(decision.cost.total)
    expected, _ = guided_step(state, 0.0, river, [], cfg.candidates[0], LIMITS)
    np.testing.assert_array_equal(decision.state.position, expected.position)


def test_rollout_records_clearance():
    """Test evaluation stores the minimum Gamma of every predicted point."""
    river = straight_river()
    cfg = MpcConfig(horizon=5)
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    obstacle = sphere((60, 20, 100), 8)
    result, _ = evaluate_candidate(
        state, IfdsParams(), cfg, river, mpc.as_fields(static([obstacle], 5)), 0.0, LIMITS
    )
    assert len(result.clearance) == 5
    for point, value in zip(result.points[1:], result.clearance, strict=True):
        assert value == pytest.approx(float(np.sum(((point - obstacle.center) / 8) ** 2)))


def test_eta_variants_share_rollout_while_corridor_is_wide(mocker):
    """Test candidates differing only in eta reuse one rollout when no descent triggers."""
    river = straight_river()
    cfg = MpcConfig()
    state, obstacles = random_scene(np.random.default_rng(3))
    scene = mpc.as_fields(static(obstacles))
    spy = mocker.spy(mpc, "rollout")

    shared = evaluate_candidates(state, cfg, river, scene, 0.0, LIMITS)

    assert spy.call_count == 9
    for candidate, (_, cost) in zip(cfg.candidates, shared, strict=True):
        _, alone = evaluate_candidate(state, candidate, cfg, river, scene, 0.0, LIMITS)
        assert cost == alone


def test_eta_variants_roll_out_separately_in_narrow_corridor(mocker):
    """Test every eta is rolled out once the corridor is narrower than tau."""
    river = straight_river()
    mocker.patch.object(
        river, "shadow_mask", side_effect=lambda xy, t: np.abs(np.atleast_2d(xy)[:, 1]) < 20
    )
    cfg = MpcConfig(horizon=5)
    state = UavState(position=vec3(20, 0, 100), psi=0.0)
    spy = mocker.spy(mpc, "rollout")

    scored = evaluate_candidates(state, cfg, river, static([], 5), 0.0, LIMITS)

    assert spy.call_count == 27
    assert scored[0][0].dfaa_triggered
    assert scored[1][0].points[-1][2] < scored[0][0].points[-1][2]
