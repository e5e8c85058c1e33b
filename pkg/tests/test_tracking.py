"""Tests for obstacle EKF tracking and horizon prediction."""

import numpy as np
import pytest
from scipy.stats import chi2

from src.environment import Observation
from src.geometry import vec3
from src.tracking import (
    ObstacleTrack,
    ObstacleTracker,
    TrackingConfig,
    TrackingError,
    ekf_predict,
    ekf_update,
    predict_obstacles,
    process_noise,
)


def make_track(mean=None, covariance=None, Q=None, R=None, **kwargs) -> ObstacleTrack:
    mean = np.array([10.0, 20.0, 100.0, 8.0, 0, 0, 0, 0]) if mean is None else np.asarray(mean)
    return ObstacleTrack(
        mean=mean.astype(float),
        covariance=np.diag([1.0, 1.0, 1.0, 0.25, 0, 0, 0, 0]) if covariance is None else covariance,
        Q=np.zeros((8, 8)) if Q is None else Q,
        R=np.eye(4) if R is None else R,
        **kwargs,
    )


def test_predict_static_without_noise():
    """Test zero velocity and zero process noise leave the track unchanged."""
    track = make_track()
    predicted = ekf_predict(track, 0.5)
    np.testing.assert_array_equal(predicted.mean, track.mean)
    np.testing.assert_array_equal(predicted.covariance, track.covariance)


def test_predict_constant_velocity():
    """Test the center advances by velocity times dt."""
    track = make_track(mean=[0, 0, 100, 5, 1, 0, 0, 0])
    predicted = ekf_predict(track, 2.0)
    np.testing.assert_allclose(predicted.center, [2, 0, 100])


def test_predict_grows_covariance_with_noise():
    """Test covariance trace strictly increases when Q has positive trace."""
    track = make_track(Q=process_noise(0.1, 1.0))
    assert np.trace(ekf_predict(track, 0.1).covariance) > np.trace(track.covariance)


def test_predict_clamps_radius():
    """Test a shrinking radius never drops below 0.1 m."""
    track = make_track(mean=[0, 0, 100, 0.5, 0, 0, 0, -1.0])
    assert ekf_predict(track, 2.0).radius == pytest.approx(0.1)


def test_predict_rejects_non_positive_step():
    """Test dt must be positive."""
    with pytest.raises(TrackingError):
        ekf_predict(make_track(), 0.0)


def test_update_with_predicted_observation():
    """Test zero innovation leaves the mean unchanged."""
    track = make_track()
    updated = ekf_update(track, track.center, track.radius)
    np.testing.assert_allclose(updated.mean, track.mean)
    assert updated.nis == pytest.approx(0.0)


def test_update_near_perfect_measurement():
    """Test a tiny R pulls the center onto the observation."""
    track = make_track(R=1e-9 * np.eye(4))
    updated = ekf_update(track, vec3(13, 18, 101), 8.5)
    np.testing.assert_allclose(updated.center, [13, 18, 101], atol=1e-3)


def test_update_shrinks_observed_covariance():
    """Test the posterior is no larger than the prior in the observed subspace."""
    track = make_track(covariance=np.eye(8) * 4.0)
    updated = ekf_update(track, vec3(11, 21, 99), 7.0)
    difference = track.covariance[:4, :4] - updated.covariance[:4, :4]
    assert np.all(np.linalg.eigvalsh(difference) >= -1e-9)


def test_update_singular_innovation():
    """Test an all-zero innovation covariance is rejected."""
    track = make_track(covariance=np.zeros((8, 8)), R=np.zeros((4, 4)))
    with pytest.raises(TrackingError, match="singular innovation"):
        ekf_update(track, vec3(0, 0, 0), 1.0)


def test_static_target_rmse():
    """Test 100 noisy observations of a static target give sub-meter center error."""
    truth = vec3(50.0, -20.0, 100.0)
    errors = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        track = make_track(
            mean=np.concatenate([truth + rng.normal(0, 3, 3), [10.0], np.zeros(4)]),
            covariance=np.diag([9.0, 9.0, 9.0, 9.0, 1e-6, 1e-6, 1e-6, 1e-6]),
            R=9.0 * np.eye(4),
        )
        for _ in range(100):
            track = ekf_predict(track, 0.1)
            track = ekf_update(track, truth + rng.normal(0, 3, 3), 10.0 + rng.normal(0, 3))
        errors.append(np.sum((track.center - truth) ** 2))
    assert np.sqrt(np.mean(errors)) < 1.0


def test_nis_consistency_on_linear_motion():
    """Test NIS stays inside the 95% chi-square band in at least 90% of steps."""
    low, high = chi2.ppf([0.025, 0.975], df=4)
    initial_cov = np.diag([4.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0, 0.01])
    R = np.diag([4.0, 4.0, 4.0, 0.25])
    velocity = np.array([1.0, 0.5, 0.0, 0.05])
    inside = total = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        truth = np.concatenate([[0.0, 0.0, 100.0, 10.0], velocity])
        start = truth + rng.multivariate_normal(np.zeros(8), initial_cov)
        track = make_track(mean=start, covariance=initial_cov, R=R)
        for _ in range(50):
            truth[:4] += 0.1 * truth[4:]
            track = ekf_predict(track, 0.1)
            z = truth[:4] + rng.multivariate_normal(np.zeros(4), R)
            track = ekf_update(track, z[:3], z[3])
            inside += low <= track.nis <= high
            total += 1
    assert inside / total >= 0.90


def test_covariance_stays_symmetric_psd():
    """Test repeated predict/update keeps the covariance symmetric and PSD."""
    rng = np.random.default_rng(1)
    track = make_track(covariance=np.eye(8), Q=process_noise(0.1, 0.5), R=np.eye(4) * 2.0)
    for _ in range(200):
        track = ekf_update(ekf_predict(track, 0.1), rng.normal(10, 2, 3), 8.0)
        np.testing.assert_allclose(track.covariance, track.covariance.T)
        assert np.linalg.eigvalsh(track.covariance).min() >= -1e-9


def test_predict_obstacles_single_step_static():
    """Test a one-step horizon of a static track repeats the geometry."""
    track = make_track()
    snapshots = predict_obstacles([track], horizon=1, dt=0.1)
    assert len(snapshots) == 2
    np.testing.assert_array_equal(snapshots[0][0].center, snapshots[1][0].center)
    assert snapshots[1][0].a == snapshots[0][0].a


def test_predict_obstacles_moving_horizon():
    """Test N=20 steps at 1 m/s and dt=0.1 move the center by 2 m."""
    track = make_track(mean=[0, 0, 100, 5, 1, 0, 0, 0])
    snapshots = predict_obstacles([track], horizon=20, dt=0.1)
    assert len(snapshots) == 21
    assert snapshots[-1][0].center[0] == pytest.approx(2.0)


def test_predict_obstacles_deterministic():
    """Test prediction depends only on the track state."""
    track = make_track(mean=[0, 0, 100, 5, 0.3, -0.2, 0, 0.01], Q=process_noise(0.1, 1.0))
    first = predict_obstacles([track], 10, 0.1)
    second = predict_obstacles([track], 10, 0.1)
    for a, b in zip(first, second, strict=True):
        np.testing.assert_array_equal(a[0].center, b[0].center)


def test_predicted_geometry_uses_aspect():
    """Test predicted obstacles keep the blob aspect ratio and cap the thickness."""
    track = make_track(aspect=0.5, thickness=3.0, inflation=1.2)
    obstacle = predict_obstacles([track], 1, 0.1)[0][0]
    assert obstacle.a == pytest.approx(8.0)
    assert obstacle.b == pytest.approx(4.0)
    assert obstacle.c == pytest.approx(3.0)
    assert obstacle.inflation == (1.2, 1.2, 1.2)


def test_predict_obstacles_requires_horizon():
    """Test the horizon must be at least one step."""
    with pytest.raises(ValueError):
        predict_obstacles([make_track()], 0, 0.1)


def observation(blob_id, x, radius=6.0):
    return Observation(
        blob_id=blob_id, center=vec3(x, 0, 100), radius=radius, aspect=0.8, yaw=0.2, exponent=1
    )


def test_tracker_initializes_and_updates():
    """Test the tracker creates tracks on first sight and updates them afterwards."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1, sigma=0.0)
    tracker.step([observation(3, 10.0), observation(1, 50.0)])
    assert [track.track_id for track in tracker.current()] == [1, 3]
    assert tracker.tracks[3].nis is None

    tracker.step([observation(3, 10.1), observation(1, 50.0)])
    assert tracker.tracks[3].nis is not None
    assert tracker.tracks[3].center[0] > 10.0


def test_tracker_predicts_unobserved_tracks(mocker):
    """Test tracks without an observation are predicted only."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1)
    tracker.step([observation(0, 10.0), observation(1, 30.0)])
    spy = mocker.spy(tracker, "_initialize")
    tracker.step([observation(0, 10.0)])
    assert spy.call_count == 0
    assert tracker.tracks[1].nis is None
    assert tracker.tracks[1].covariance[0, 0] > tracker.R[0, 0]


def test_tracker_obstacles_carry_shape():
    """Test tracker obstacles use the observed aspect and yaw."""
    tracker = ObstacleTracker(TrackingConfig(inflation=1.2), dt=0.1)
    tracker.step([observation(0, 10.0, radius=10.0)])
    obstacle = tracker.obstacles()[0]
    assert obstacle.b == pytest.approx(8.0)
    assert obstacle.yaw == pytest.approx(0.2)
    assert obstacle.inflation == (1.2, 1.2, 1.2)


def anonymous(x, y=0.0, radius=6.0, yaw=0.2):
    return Observation(
        blob_id=-1, center=vec3(x, y, 100), radius=radius, aspect=0.8, yaw=yaw, exponent=1
    )


def test_association_keeps_ids_for_moving_clusters():
    """Test anonymous clusters drifting a little per step stay on their tracks."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1)
    tracker.step([anonymous(10.0), anonymous(60.0, 5.0)])
    assert sorted(tracker.tracks) == [0, 1]
    first = tracker.tracks[0].center[0]

    for k in range(1, 6):
        # Listed in the opposite order to the tracks.
        tracker.step([anonymous(60.0 - 0.3 * k, 5.0), anonymous(10.0 + 0.3 * k)])
    assert sorted(tracker.tracks) == [0, 1]
    assert tracker.tracks[0].center[0] == pytest.approx(11.5, abs=1.0)
    assert tracker.tracks[0].center[0] > first
    assert tracker.tracks[1].center[0] == pytest.approx(58.5, abs=1.0)


def test_association_opens_track_outside_gate():
    """Test a cluster far from every track starts a new track with a fresh id."""
    tracker = ObstacleTracker(TrackingConfig(gate=15.0), dt=0.1)
    tracker.step([anonymous(10.0)])
    tracker.step([anonymous(10.2), anonymous(80.0)])
    assert sorted(tracker.tracks) == [0, 1]
    assert tracker.tracks[1].center[0] == pytest.approx(80.0)
    assert tracker.tracks[1].nis is None


def test_association_updates_shape_from_latest_cluster():
    """Test a matched cluster refreshes the track's aspect and yaw."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1)
    tracker.step([anonymous(10.0, yaw=0.2)])
    tracker.step([anonymous(10.0, yaw=-0.4)])
    assert tracker.tracks[0].yaw == pytest.approx(-0.4)


def test_unobserved_tracks_are_pruned():
    """Test a track missing more than max_misses steps is dropped."""
    tracker = ObstacleTracker(TrackingConfig(max_misses=3), dt=0.1)
    tracker.step([anonymous(10.0), anonymous(60.0)])
    for _ in range(3):
        tracker.step([anonymous(10.0)])
    assert sorted(tracker.tracks) == [0, 1]
    assert tracker.tracks[1].misses == 3
    tracker.step([anonymous(10.0)])
    assert sorted(tracker.tracks) == [0]
    assert tracker.tracks[0].misses == 0


def test_empty_observation_set_only_predicts():
    """Test a step without observations predicts every track and counts a miss."""
    tracker = ObstacleTracker(TrackingConfig(), dt=0.1)
    tracker.step([anonymous(10.0)])
    tracker.step([])
    assert tracker.tracks[0].misses == 1


@pytest.mark.parametrize(
    "kwargs",
    [{"observation": "lidar"}, {"gate": 0.0}, {"max_obstacles": 0}, {"sample_resolution": -1}],
)
def test_tracking_config_validation(kwargs):
    """Test invalid observation settings are rejected."""
    with pytest.raises(ValueError):
        TrackingConfig(**kwargs)
