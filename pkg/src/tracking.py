"""Extended Kalman filter tracking of shadow obstacles and horizon prediction."""

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .environment import Observation
from .geometry import SuperEllipsoidObstacle

STATE_DIM = 8
MEASUREMENT_DIM = 4
MIN_RADIUS = 0.1
MAX_CONDITION = 1e12
OBSERVATION_MODES = ("blobs", "fitted")

# Observation model h(X) = (center, radius).
H = np.hstack([np.eye(MEASUREMENT_DIM), np.zeros((MEASUREMENT_DIM, MEASUREMENT_DIM))])


class TrackingError(RuntimeError):
    """Raised when a Kalman update is numerically undefined."""

    pass


@dataclass(frozen=True)
class TrackingConfig:
    """Noise settings, observation source and track management for obstacle tracks."""

    sigma_a: float = 0.5  # m/s^2, white-noise acceleration
    radius_sigma: float = 0.5
    measurement_floor: float = 0.5
    initial_velocity_sigma: float = 2.0
    thickness: float = 20.0
    inflation: float = 1.2
    observation: str = "blobs"
    sample_resolution: float = 2.0
    max_obstacles: int = 16
    gate: float = 15.0  # m, association distance
    max_misses: int = 10

    def __post_init__(self):
        if self.observation not in OBSERVATION_MODES:
            raise ValueError(
                f"observation must be one of {', '.join(OBSERVATION_MODES)}, "
                f"got {self.observation}"
            )
        if self.sample_resolution <= 0 or self.gate <= 0:
            raise ValueError("sample resolution and gate must be positive")
        if self.max_obstacles < 1 or self.max_misses < 0:
            raise ValueError("max_obstacles must be >= 1 and max_misses >= 0")


@dataclass(frozen=True, eq=False)
class ObstacleTrack:
    """
    EKF state of one obstacle.

    State vector: [x, y, z, r, vx, vy, vz, vr] (center, horizontal radius and
    their rates). Shape metadata (aspect, yaw, exponent) follows the latest
    observation; `misses` counts consecutive steps without one.
    """

    mean: np.ndarray
    covariance: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    aspect: float = 1.0
    yaw: float = 0.0
    exponent: int = 1
    thickness: float = 20.0
    inflation: float = 1.0
    nis: float | None = None
    track_id: int = 0
    misses: int = 0

    @property
    def center(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def radius(self) -> float:
        return float(self.mean[3])

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[4:7]


def transition_matrix(dt: float) -> np.ndarray:
    """Constant-velocity transition for the 8-state model."""
    F = np.eye(STATE_DIM)
    F[:MEASUREMENT_DIM, MEASUREMENT_DIM:] = dt * np.eye(MEASUREMENT_DIM)
    return F


def process_noise(dt: float, sigma_a: float) -> np.ndarray:
    """
    Continuous white-noise acceleration process noise.

    Args:
        dt: Time step in seconds
        sigma_a: Acceleration noise standard deviation

    Returns:
        8x8 covariance coupling each position component with its rate
    """
    Q = np.zeros((STATE_DIM, STATE_DIM))
    block = sigma_a**2 * np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])
    for axis in range(MEASUREMENT_DIM):
        index = [axis, axis + MEASUREMENT_DIM]
        Q[np.ix_(index, index)] = block
    return Q


def _clamp_radius(mean: np.ndarray) -> np.ndarray:
    mean = mean.copy()
    mean[3] = max(mean[3], MIN_RADIUS)
    return mean


def ekf_predict(track: ObstacleTrack, dt: float) -> ObstacleTrack:
    """
    Propagate a track by dt seconds.

    Raises:
        TrackingError: If dt is not positive
    """
    if dt <= 0:
        raise TrackingError(f"prediction step must be positive, got {dt}")
    F = transition_matrix(dt)
    covariance = F @ track.covariance @ F.T + track.Q
    return replace(
        track,
        mean=_clamp_radius(F @ track.mean),
        covariance=0.5 * (covariance + covariance.T),
    )


def ekf_update(track: ObstacleTrack, center: np.ndarray, radius: float) -> ObstacleTrack:
    """
    Correct a track with a (center, radius) observation.

    Uses the Joseph-form covariance update and records the normalized
    innovation squared of the observation.

    Raises:
        TrackingError: If the innovation covariance is singular
    """
    z = np.append(np.asarray(center, dtype=float), radius)
    innovation = z - H @ track.mean
    S = H @ track.covariance @ H.T + track.R
    if not np.all(np.isfinite(S)) or not np.any(S):
        raise TrackingError("singular innovation")
    condition = np.linalg.cond(S)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise TrackingError("singular innovation")

    gain = np.linalg.solve(S, H @ track.covariance).T
    I_KH = np.eye(STATE_DIM) - gain @ H
    covariance = I_KH @ track.covariance @ I_KH.T + gain @ track.R @ gain.T
    nis = float(innovation @ np.linalg.solve(S, innovation))
    return replace(
        track,
        mean=_clamp_radius(track.mean + gain @ innovation),
        covariance=0.5 * (covariance + covariance.T),
        nis=nis,
    )


def track_obstacle(track: ObstacleTrack) -> SuperEllipsoidObstacle:
    """Obstacle geometry of a track's mean state."""
    a = max(track.radius, MIN_RADIUS)
    b = track.aspect * a
    lam = (track.inflation, track.inflation, track.inflation)
    return SuperEllipsoidObstacle(
        center=track.center,
        a=a,
        b=b,
        c=min(track.thickness, b),
        p=track.exponent,
        q=track.exponent,
        r=1,
        inflation=lam,
        yaw=track.yaw,
        velocity=track.velocity,
    )


def predict_obstacles(
    tracks: Sequence[ObstacleTrack], horizon: int, dt: float
) -> list[list[SuperEllipsoidObstacle]]:
    """
    Roll every track forward over the horizon without updates.

    Args:
        tracks: Current track states
        horizon: Number of steps N (>= 1)
        dt: Step length in seconds

    Returns:
        N + 1 obstacle snapshots; index 0 is the current geometry
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    current = list(tracks)
    snapshots = [[track_obstacle(track) for track in current]]
    for _ in range(horizon):
        current = [ekf_predict(track, dt) for track in current]
        snapshots.append([track_obstacle(track) for track in current])
    return snapshots


class ObstacleTracker:
    """
    Maintains one EKF track per observed obstacle.

    Observations carrying a blob identity are associated by it. Anonymous
    observations (blob_id < 0, from fitted shadow clusters) are matched to the
    predicted track centers by a minimum-distance assignment within the gate;
    unmatched ones start new tracks. Tracks without an observation in a step are
    predicted only and dropped after more than `max_misses` such steps.
    """

    def __init__(self, config: TrackingConfig, dt: float, sigma: float = 0.0):
        self.config = config
        self.dt = dt
        position_sigma = max(sigma, config.measurement_floor)
        self.R = np.diag([position_sigma**2] * 3 + [config.radius_sigma**2])
        self.Q = process_noise(dt, config.sigma_a)
        self.tracks: dict[int, ObstacleTrack] = {}
        self._next_id = 0

    def _initialize(self, observation: Observation, track_id: int) -> ObstacleTrack:
        mean = np.concatenate([observation.center, [observation.radius], np.zeros(4)])
        velocity_var = self.config.initial_velocity_sigma**2
        covariance = np.zeros((STATE_DIM, STATE_DIM))
        covariance[:MEASUREMENT_DIM, :MEASUREMENT_DIM] = self.R
        covariance[MEASUREMENT_DIM:, MEASUREMENT_DIM:] = velocity_var * np.eye(MEASUREMENT_DIM)
        self._next_id = max(self._next_id, track_id + 1)
        return ObstacleTrack(
            mean=_clamp_radius(mean),
            covariance=covariance,
            Q=self.Q,
            R=self.R,
            aspect=observation.aspect,
            yaw=observation.yaw,
            exponent=observation.exponent,
            thickness=self.config.thickness,
            inflation=self.config.inflation,
            track_id=track_id,
        )

    def associate(
        self, observations: Sequence[Observation], predicted: dict[int, ObstacleTrack]
    ) -> list[tuple[int, Observation]]:
        """
        Pair anonymous observations with tracks by horizontal center distance.

        Returns:
            (track id, observation) pairs; observations outside the gate of every
            track get fresh ids in observation order
        """
        pairs = []
        unmatched = set(range(len(observations)))
        ids = sorted(predicted)
        if ids and observations:
            centers = np.array([predicted[track_id].center[:2] for track_id in ids])
            seen = np.array([observation.center[:2] for observation in observations])
            distance = np.linalg.norm(centers[:, None, :] - seen[None, :, :], axis=2)
            rows, cols = linear_sum_assignment(distance)
            for row, col in zip(rows, cols, strict=True):
                if distance[row, col] <= self.config.gate:
                    pairs.append((ids[row], observations[col]))
                    unmatched.discard(col)
        for col in sorted(unmatched):
            pairs.append((self._next_id, observations[col]))
            self._next_id += 1
        return pairs

    def step(self, observations: Sequence[Observation]) -> None:
        """Advance all tracks one step and fold in the new observations."""
        predicted = {
            track_id: ekf_predict(track, self.dt) for track_id, track in self.tracks.items()
        }
        if any(observation.blob_id < 0 for observation in observations):
            pairs = self.associate(observations, predicted)
        else:
            pairs = [(observation.blob_id, observation) for observation in observations]

        seen = set()
        for track_id, observation in pairs:
            seen.add(track_id)
            if track_id not in predicted:
                self.tracks[track_id] = self._initialize(observation, track_id)
                continue
            updated = ekf_update(predicted[track_id], observation.center, observation.radius)
            self.tracks[track_id] = replace(
                updated, aspect=observation.aspect, yaw=observation.yaw, misses=0
            )
        for track_id in predicted.keys() - seen:
            track = predicted[track_id]
            if track.misses >= self.config.max_misses:
                del self.tracks[track_id]
            else:
                self.tracks[track_id] = replace(track, misses=track.misses + 1)

    def current(self) -> list[ObstacleTrack]:
        """Tracks ordered by id."""
        return [self.tracks[track_id] for track_id in sorted(self.tracks)]

    def obstacles(self) -> list[SuperEllipsoidObstacle]:
        """Current obstacle snapshot ordered by track id."""
        return [track_obstacle(track) for track in self.current()]
