"""Synthetic river scenarios, dynamic shadow fields, ellipsoid fitting and the reference field."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .geometry import SuperEllipsoidObstacle, vec3
from .utils import write_csv

CENTERLINE_SPACING = 0.5
CONTROL_SPACING = 125.0
MEANDER_AMPLITUDE = 10.0

# Per-preset channel half-width and random blob population.
PRESETS = {
    "clear": {"half_width": 60.0, "shadows": 0, "radius": (0.0, 0.0), "glints": 0},
    "sparse": {"half_width": 60.0, "shadows": 4, "radius": (6.0, 10.0), "glints": 1},
    "dense": {"half_width": 80.0, "shadows": 8, "radius": (12.0, 18.0), "glints": 2},
    "narrow": {"half_width": 40.0, "shadows": 0, "radius": (0.0, 0.0), "glints": 0},
}

# Bank shadow chains of the narrow preset.
BANK_RADIUS = 20.0
BANK_OFFSET = 32.0
BANK_SPACING = 16.0
CORRIDOR_LENGTH = 200.0


class ScenarioError(ValueError):
    """Raised for invalid scenarios or queries outside the mission window."""

    pass


class OutOfBoundsError(ScenarioError):
    """Raised when a query point lies outside the domain bounds."""

    pass


@dataclass(frozen=True, eq=False)
class ShadowBlob:
    """
    A moving, slowly deforming super-ellipse region on the water surface.

    The center drifts at a constant velocity plus a circular wobble; the radius
    pulsates sinusoidally. Glints (sun specular reflections) use the same model.
    """

    center: np.ndarray
    radius: float
    aspect: float = 1.0
    yaw: float = 0.0
    exponent: int = 1
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    wobble: float = 0.0
    wobble_period: float = 60.0
    pulse: float = 0.0
    pulse_period: float = 60.0
    phase: float = 0.0
    kind: str = "shadow"

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        if self.radius <= 0 or not 0 < self.aspect <= 1:
            raise ScenarioError(f"invalid blob shape radius={self.radius} aspect={self.aspect}")
        if self.kind not in ("shadow", "glint"):
            raise ScenarioError(f"unknown blob kind: {self.kind}")

    def center_at(self, t: float) -> np.ndarray:
        angle = 2 * math.pi * t / self.wobble_period + self.phase
        wobble = self.wobble * np.array(
            [math.sin(angle) - math.sin(self.phase), math.cos(angle) - math.cos(self.phase)]
        )
        return self.center + self.velocity * t + wobble

    def velocity_at(self, t: float) -> np.ndarray:
        rate = 2 * math.pi / self.wobble_period
        angle = rate * t + self.phase
        return self.velocity + self.wobble * rate * np.array([math.cos(angle), -math.sin(angle)])

    def radius_at(self, t: float) -> float:
        angle = 2 * math.pi * t / self.pulse_period + self.phase
        return self.radius * (1.0 + self.pulse * math.sin(angle))

    def contains(self, xy: np.ndarray, t: float) -> np.ndarray:
        """Boolean mask of the (M, 2) points covered by the blob at time t."""
        offset = np.atleast_2d(xy) - self.center_at(t)
        cos_yaw, sin_yaw = math.cos(self.yaw), math.sin(self.yaw)
        lx = cos_yaw * offset[:, 0] + sin_yaw * offset[:, 1]
        ly = -sin_yaw * offset[:, 0] + cos_yaw * offset[:, 1]
        a = self.radius_at(t)
        b = self.aspect * a
        power = 2 * self.exponent
        return (np.abs(lx / a) ** power + np.abs(ly / b) ** power) <= 1.0


@dataclass(frozen=True, eq=False)
class ShadowSample:
    """Shadowed water-surface points at one instant."""

    time: float
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Observation:
    """Per-blob obstacle observation fed to the tracker."""

    blob_id: int
    center: np.ndarray
    radius: float
    aspect: float
    yaw: float
    exponent: int


@dataclass(eq=False)
class RiverScenario:
    """
    A spline river channel with a population of shadow blobs.

    The centerline is a cubic spline through the control points, parameterized by
    chord length and densely resampled for nearest-point queries.
    """

    control_points: np.ndarray
    half_width: float
    lower: np.ndarray
    upper: np.ndarray
    seed: int = 0
    blobs: list[ShadowBlob] = field(default_factory=list)
    mission_window: tuple[float, float] = (0.0, 600.0)
    preset: str = "custom"

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float).reshape(3)
        self.upper = np.asarray(self.upper, dtype=float).reshape(3)

        if self.control_points.ndim != 2 or len(self.control_points) < 4:
            raise ScenarioError("a river needs at least 4 centerline control points")
        if self.half_width <= 0:
            raise ScenarioError(f"half-width must be positive, got {self.half_width}")
        if not all(self.contains(point) for point in self.control_points):
            raise ScenarioError("centerline control points must lie inside the domain bounds")

        steps = np.linalg.norm(np.diff(self.control_points[:, :2], axis=0), axis=1)
        if np.any(steps <= 0):
            raise ScenarioError("consecutive control points must be distinct")
        chord = np.concatenate([[0.0], np.cumsum(steps)])
        spline = CubicSpline(chord, self.control_points[:, :2])
        params = np.append(np.arange(0.0, chord[-1], CENTERLINE_SPACING), chord[-1])

        self.samples = spline(params)
        derivative = spline(params, 1)
        self.tangents = derivative / np.linalg.norm(derivative, axis=1)[:, None]
        self.normals = np.column_stack([-self.tangents[:, 1], self.tangents[:, 0]])
        segment = np.linalg.norm(np.diff(self.samples, axis=0), axis=1)
        self.arc = np.concatenate([[0.0], np.cumsum(segment)])
        self.length = float(self.arc[-1])
        self.water_z = float(np.mean(self.control_points[:, 2]))
        self._tree = cKDTree(self.samples)
        self._grids: dict[float, np.ndarray] = {}
        self._snapshots: dict[float, tuple[np.ndarray, ...]] = {}
        self._widths: dict[tuple[int, float, float], float] = {}
        self._last_query: tuple[bytes, tuple[np.ndarray, ...]] | None = None

    def contains(self, P: np.ndarray) -> bool:
        """True if P lies inside the domain bounds."""
        return bool(np.all(P >= self.lower) and np.all(P <= self.upper))

    def channel_coordinates(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Project horizontal points onto the centerline.

        Args:
            xy: (M, 2) horizontal points

        Returns:
            Tuple of (along-track arc length, signed cross-track offset with left
            positive, nearest sample index)
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        # Guidance projects the same single point several times per step.
        key = xy.tobytes() if len(xy) == 1 else None
        last = self._last_query
        if key is not None and last is not None and last[0] == key:
            return last[1]
        _, index = self._tree.query(xy)
        offset = xy - self.samples[index]
        along = self.arc[index] + np.einsum("ij,ij->i", offset, self.tangents[index])
        cross = np.einsum("ij,ij->i", offset, self.normals[index])
        if key is not None:
            self._last_query = (key, (along, cross, index))
        return along, cross, index

    def in_channel(self, xy: np.ndarray) -> np.ndarray:
        along, cross, _ = self.channel_coordinates(xy)
        return (np.abs(cross) <= self.half_width) & (along >= 0) & (along <= self.length)

    def frame_at(self, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Centerline point, unit tangent and left normal at arc length s."""
        s = min(max(s, 0.0), self.length)
        point = np.array(
            [np.interp(s, self.arc, self.samples[:, 0]), np.interp(s, self.arc, self.samples[:, 1])]
        )
        index = min(int(np.searchsorted(self.arc, s)), len(self.arc) - 1)
        return point, self.tangents[index], self.normals[index]

    def start_point(self, altitude: float) -> np.ndarray:
        return vec3(self.samples[0, 0], self.samples[0, 1], self.water_z + altitude)

    def goal_point(self, altitude: float) -> np.ndarray:
        return vec3(self.samples[-1, 0], self.samples[-1, 1], self.water_z + altitude)

    def _blob_state(self, t: float) -> tuple[np.ndarray, ...]:
        """Stacked blob centers, semi-axes and exponents at time t (cached per instant)."""
        if t not in self._snapshots:
            if len(self._snapshots) > 256:
                self._snapshots.clear()
            centers = np.array([blob.center_at(t) for blob in self.blobs]).reshape(-1, 2)
            a = np.array([blob.radius_at(t) for blob in self.blobs])
            b = a * np.array([blob.aspect for blob in self.blobs])
            yaws = np.array([blob.yaw for blob in self.blobs])
            powers = np.array([2.0 * blob.exponent for blob in self.blobs])
            self._snapshots[t] = (centers, a, b, np.cos(yaws), np.sin(yaws), powers)
        return self._snapshots[t]

    def shadow_mask(self, xy: np.ndarray, t: float) -> np.ndarray:
        """Boolean mask of the points covered by any blob at time t."""
        xy = np.atleast_2d(xy)
        if not self.blobs:
            return np.zeros(len(xy), dtype=bool)
        centers, a, b, cos_yaw, sin_yaw, powers = self._blob_state(t)
        offset = xy[None, :, :] - centers[:, None, :]
        lx = cos_yaw[:, None] * offset[..., 0] + sin_yaw[:, None] * offset[..., 1]
        ly = -sin_yaw[:, None] * offset[..., 0] + cos_yaw[:, None] * offset[..., 1]
        power = powers[:, None]
        values = np.abs(lx / a[:, None]) ** power + np.abs(ly / b[:, None]) ** power
        return np.any(values <= 1.0, axis=0)

    def channel_grid(self, resolution: float = 1.0) -> np.ndarray:
        """Cell centers of a regular grid restricted to the channel (cached)."""
        if resolution not in self._grids:
            low = np.floor(self.samples.min(axis=0) - self.half_width)
            high = np.ceil(self.samples.max(axis=0) + self.half_width)
            xs = np.arange(low[0], high[0], resolution) + resolution / 2
            ys = np.arange(low[1], high[1], resolution) + resolution / 2
            grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
            self._grids[resolution] = grid[self.in_channel(grid)]
        return self._grids[resolution]

    def section(self, index: int, resolution: float = 1.0) -> np.ndarray:
        """(K, 2) cell-center points spanning the channel across centerline sample index."""
        count = int(round(2 * self.half_width / resolution))
        offsets = -self.half_width + resolution * (np.arange(count) + 0.5)
        return self.samples[index] + offsets[:, None] * self.normals[index]

    def section_width(self, index: int, t: float, resolution: float = 1.0) -> float:
        """
        Longest unshadowed run across centerline sample index at time t, in meters.

        Cached per (sample, instant, resolution); the samples are dense enough that
        every point projecting onto one sample shares its cross section.
        """
        key = (int(index), float(t), float(resolution))
        width = self._widths.get(key)
        if width is None:
            if len(self._widths) > 8192:
                self._widths.clear()
            clear = ~self.shadow_mask(self.section(key[0], resolution), t)
            edges = np.flatnonzero(np.diff(np.concatenate([[0], clear.astype(np.int8), [0]])))
            runs = edges[1::2] - edges[0::2]
            width = float(runs.max()) * resolution if runs.size else 0.0
            self._widths[key] = width
        return width


def _control_points(rng: np.random.Generator, length: float, meander: float) -> np.ndarray:
    count = max(4, math.ceil(length / CONTROL_SPACING) + 1)
    xs = np.linspace(0.0, length, count)
    ys = rng.uniform(-meander, meander, count)
    ys[0] = ys[-1] = 0.0
    return np.column_stack([xs, ys, np.zeros(count)])


def _random_blob(
    rng: np.random.Generator,
    scenario: RiverScenario,
    radius_range: tuple[float, float],
    kind: str,
) -> ShadowBlob:
    glint = kind == "glint"
    radius = rng.uniform(3.0, 5.0) if glint else rng.uniform(*radius_range)
    s_low = min(80.0, 0.3 * scenario.length)
    s = rng.uniform(s_low, scenario.length - 30.0)
    reach = max(scenario.half_width - 0.5 * radius, 0.0)
    point, _, normal = scenario.frame_at(s)
    center = point + rng.uniform(-reach, reach) * normal
    speed = rng.uniform(1.5, 2.5) if glint else rng.uniform(0.2, 1.0)
    heading = rng.uniform(-math.pi, math.pi)
    return ShadowBlob(
        center=center,
        radius=radius,
        aspect=rng.uniform(0.5, 0.8) if glint else rng.uniform(0.7, 1.0),
        yaw=rng.uniform(-math.pi, math.pi),
        exponent=int(rng.integers(1, 3)),
        velocity=speed * np.array([math.cos(heading), math.sin(heading)]),
        wobble=rng.uniform(0.5, 1.5),
        wobble_period=rng.uniform(30.0, 60.0),
        pulse=rng.uniform(0.0, 0.05),
        pulse_period=rng.uniform(30.0, 60.0),
        phase=rng.uniform(0.0, 2 * math.pi),
        kind=kind,
    )


def _bank_chains(scenario: RiverScenario) -> list[ShadowBlob]:
    """Static bank shadows on both sides leaving a clear corridor narrower than 30 m."""
    corridor = min(CORRIDOR_LENGTH, 0.5 * scenario.length)
    start = 0.3 * scenario.length
    blobs = []
    for s in np.arange(start, start + corridor + 1e-9, BANK_SPACING):
        point, _, normal = scenario.frame_at(float(s))
        for side in (1.0, -1.0):
            blobs.append(ShadowBlob(center=point + side * BANK_OFFSET * normal, radius=BANK_RADIUS))
    return blobs


def build_scenario(
    preset: str, seed: int, length: float = 500.0, mission_time: float = 600.0
) -> RiverScenario:
    """
    Generate a river scenario preset.

    Args:
        preset: One of clear, sparse, dense, narrow
        seed: Scenario seed; every planner given this seed sees the same realization
        length: Approximate channel length in meters
        mission_time: End of the mission window in seconds

    Returns:
        The generated scenario

    Raises:
        ScenarioError: If the preset is unknown
    """
    if preset not in PRESETS:
        raise ScenarioError(f"unknown scenario preset: {preset}")
    layout = PRESETS[preset]
    rng = np.random.default_rng(seed)

    meander = MEANDER_AMPLITUDE if preset != "narrow" else 0.5 * MEANDER_AMPLITUDE
    points = _control_points(rng, length, meander)
    half_width = layout["half_width"]
    margin = half_width + meander + 50.0
    scenario = RiverScenario(
        control_points=points,
        half_width=half_width,
        lower=vec3(-margin, -margin, -10.0),
        upper=vec3(length + margin, margin, 300.0),
        seed=seed,
        mission_window=(0.0, mission_time),
        preset=preset,
    )

    radius = layout["radius"]
    blobs = [_random_blob(rng, scenario, radius, "shadow") for _ in range(layout["shadows"])]
    blobs += [_random_blob(rng, scenario, radius, "glint") for _ in range(layout["glints"])]
    if preset == "narrow":
        blobs += _bank_chains(scenario)
    scenario.blobs = blobs
    return scenario


def sample_shadow_field(scenario: RiverScenario, t: float, resolution: float = 1.0) -> ShadowSample:
    """
    Sample the shadowed water surface on a regular channel grid.

    Args:
        scenario: River scenario
        t: Time in seconds
        resolution: Grid spacing in meters

    Returns:
        ShadowSample with every shadowed grid point at water level

    Raises:
        ScenarioError: If t lies outside the mission window
    """
    start, end = scenario.mission_window
    if not start <= t <= end:
        raise ScenarioError(f"t={t} outside mission window [{start}, {end}]")
    grid = scenario.channel_grid(resolution)
    shadowed = grid[scenario.shadow_mask(grid, t)]
    z = np.full((len(shadowed), 1), scenario.water_z)
    return ShadowSample(time=t, points=np.hstack([shadowed, z]))


def write_shadow_csv(sample: ShadowSample, path: Path) -> Path:
    """Export a shadow snapshot as (t, x, y) rows."""
    rows = ((sample.time, x, y) for x, y in sample.points[:, :2])
    return write_csv(path, ["t", "x", "y"], rows)


def _fit_cluster(
    xy: np.ndarray,
    z: float,
    sigma_scale: float,
    thickness: float,
    inflation: float,
) -> SuperEllipsoidObstacle | None:
    if len(xy) < 3:
        return None
    center = xy.mean(axis=0)
    eigenvalues, eigenvectors = np.linalg.eigh(np.cov(xy.T))
    if eigenvalues[0] <= 1e-9:
        return None

    major = eigenvectors[:, 1]
    yaw = math.atan2(major[1], major[0])
    if yaw <= -math.pi / 2:
        yaw += math.pi
    elif yaw > math.pi / 2:
        yaw -= math.pi

    a = sigma_scale * math.sqrt(eigenvalues[1])
    b = sigma_scale * math.sqrt(eigenvalues[0])
    lam = (inflation, inflation, inflation)
    candidate = SuperEllipsoidObstacle(
        center=vec3(center[0], center[1], z), a=a, b=b, c=min(thickness, b), inflation=lam, yaw=yaw
    )

    # Grow the horizontal axes until 95% of the cluster lies inside.
    offset = xy - center
    lx = math.cos(yaw) * offset[:, 0] + math.sin(yaw) * offset[:, 1]
    ly = -math.sin(yaw) * offset[:, 0] + math.cos(yaw) * offset[:, 1]
    values = (lx / (inflation * a)) ** 2 + (ly / (inflation * b)) ** 2
    worst = float(np.percentile(values, 95, method="higher"))
    if worst > 1.0:
        grow = math.sqrt(worst) * (1.0 + 1e-9)
        candidate = SuperEllipsoidObstacle(
            center=candidate.center,
            a=a * grow,
            b=b * grow,
            c=min(thickness, b * grow),
            inflation=lam,
            yaw=yaw,
        )
    return candidate


def fit_ellipsoids(
    sample: ShadowSample,
    max_count: int,
    *,
    resolution: float = 2.0,
    sigma_scale: float = 2.0,
    thickness: float = 20.0,
    inflation: float = 1.2,
    altitude: float | None = None,
) -> list[SuperEllipsoidObstacle]:
    """
    Cluster shadow points and fit one oriented ellipsoid per cluster by PCA.

    Points are binned on a grid and grouped by 8-connected component labeling.
    Clusters with fewer than 3 points or a degenerate covariance are dropped.

    Args:
        sample: Shadow snapshot (must be non-empty)
        max_count: Keep at most this many clusters, largest first
        resolution: Clustering grid spacing in meters
        sigma_scale: Semi-axis as a multiple of the per-axis standard deviation
        thickness: Vertical semi-axis cap in meters
        inflation: Safety inflation factor applied to every axis
        altitude: Center altitude of the fitted obstacles; water level by default

    Returns:
        Fitted obstacles, largest cluster first
    """
    if max_count < 1:
        raise ScenarioError(f"max_count must be >= 1, got {max_count}")
    if len(sample) == 0:
        raise ScenarioError("empty shadow sample")

    xy = sample.points[:, :2]
    z = float(sample.points[0, 2]) if altitude is None else altitude
    cells = np.floor((xy - xy.min(axis=0)) / resolution).astype(int)
    occupied = np.zeros(cells.max(axis=0) + 1, dtype=bool)
    occupied[cells[:, 0], cells[:, 1]] = True
    labels, count = ndimage.label(occupied, structure=np.ones((3, 3), dtype=int))
    point_labels = labels[cells[:, 0], cells[:, 1]]

    sizes = np.bincount(point_labels, minlength=count + 1)
    order = sorted(range(1, count + 1), key=lambda label: (-sizes[label], label))

    fitted = []
    for label in order:
        obstacle = _fit_cluster(xy[point_labels == label], z, sigma_scale, thickness, inflation)
        if obstacle is not None:
            fitted.append(obstacle)
        if len(fitted) == max_count:
            break
    return fitted


def reference_field(scenario: RiverScenario, P: np.ndarray, k_n: float = 0.05) -> np.ndarray:
    """
    Reference guidance direction: centerline tangent plus a cross-track correction.

    The correction is proportional to the signed cross-track error with gain k_n,
    saturated at a 45 degree blend. The field is horizontal.

    Raises:
        OutOfBoundsError: If P lies outside the domain bounds
    """
    P = np.asarray(P, dtype=float)
    if not scenario.contains(P):
        raise OutOfBoundsError(f"point {P.tolist()} outside domain bounds")
    _, cross, index = scenario.channel_coordinates(P[:2])
    tangent = scenario.tangents[index[0]]
    normal = scenario.normals[index[0]]
    blend = min(max(k_n * cross[0], -1.0), 1.0)
    heading = tangent - blend * normal
    heading = heading / np.linalg.norm(heading)
    return vec3(heading[0], heading[1], 0.0)


def clear_width(scenario: RiverScenario, P: np.ndarray, t: float, resolution: float = 1.0) -> float:
    """Longest unshadowed run of the transect through P, in meters (0 outside the channel)."""
    along, cross, index = scenario.channel_coordinates(np.asarray(P, dtype=float)[:2])
    if abs(cross[0]) > scenario.half_width or not -1e-6 <= along[0] <= scenario.length + 1e-6:
        return 0.0
    return scenario.section_width(int(index[0]), t, resolution)


def corridor_duration(scenario: RiverScenario, tau: float, v0: float, t: float = 0.0) -> float:
    """Longest along-track stretch with clear width below tau, in seconds of flight at v0."""
    longest = run = 0.0
    for s in np.arange(0.0, scenario.length, 1.0):
        point, _, _ = scenario.frame_at(float(s))
        width = clear_width(scenario, vec3(point[0], point[1], scenario.water_z), t)
        run = run + 1.0 if width < tau else 0.0
        longest = max(longest, run)
    return longest / v0


def blob_obstacle(
    blob: ShadowBlob, t: float, altitude: float, thickness: float, inflation: float
) -> SuperEllipsoidObstacle:
    """Ground-truth obstacle geometry of one blob at time t, lifted to the given altitude."""
    center = blob.center_at(t)
    a = blob.radius_at(t)
    b = blob.aspect * a
    velocity = blob.velocity_at(t)
    return SuperEllipsoidObstacle(
        center=vec3(center[0], center[1], altitude),
        a=a,
        b=b,
        c=min(thickness, b),
        p=blob.exponent,
        q=blob.exponent,
        r=1,
        inflation=(inflation, inflation, inflation),
        yaw=blob.yaw,
        velocity=vec3(velocity[0], velocity[1], 0.0),
    )


def blob_obstacles(
    scenario: RiverScenario,
    t: float,
    altitude: float,
    thickness: float = 20.0,
    inflation: float = 1.2,
) -> list[SuperEllipsoidObstacle]:
    """Ground-truth obstacles for every blob at time t (used for collision checks)."""
    return [blob_obstacle(blob, t, altitude, thickness, inflation) for blob in scenario.blobs]


def observe_obstacles(
    scenario: RiverScenario,
    t: float,
    rng: np.random.Generator,
    sigma: float,
    altitude: float,
) -> list[Observation]:
    """
    Observe every blob as a (center, radius) measurement.

    Centers are lifted to the obstacle layer altitude and perturbed with zero-mean
    Gaussian noise of standard deviation sigma per axis.
    """
    observations = []
    for blob_id, blob in enumerate(scenario.blobs):
        center = blob.center_at(t)
        noise = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
        observations.append(
            Observation(
                blob_id=blob_id,
                center=vec3(center[0], center[1], altitude) + noise,
                radius=blob.radius_at(t),
                aspect=blob.aspect,
                yaw=blob.yaw,
                exponent=blob.exponent,
            )
        )
    return observations


def observe_fitted(
    scenario: RiverScenario,
    t: float,
    rng: np.random.Generator,
    sigma: float,
    altitude: float,
    max_count: int = 16,
    resolution: float = 2.0,
) -> list[Observation]:
    """
    Observe the shadow field as anonymous fitted ellipses.

    Samples the shadowed surface, fits one PCA ellipse per cluster and reports
    its (center, semi-major axis, aspect, yaw). Identities are unknown
    (blob_id -1); the tracker associates them by position.
    """
    sample = sample_shadow_field(scenario, t, resolution)
    if len(sample) == 0:
        return []
    fitted = fit_ellipsoids(
        sample, max_count, resolution=resolution, inflation=1.0, altitude=altitude
    )
    observations = []
    for obstacle in fitted:
        noise = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
        observations.append(
            Observation(
                blob_id=-1,
                center=obstacle.center + noise,
                radius=obstacle.a,
                aspect=obstacle.b / obstacle.a,
                yaw=obstacle.yaw,
                exponent=1,
            )
        )
    return observations
