"""Super-ellipsoid shadow obstacles: the Gamma field, its gradient and feasibility queries."""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

# Per-term base ratios are clamped before exponentiation so distant points cannot overflow.
RATIO_CLAMP = 1e6
MAX_EXPONENT = 4


class GeometryError(ValueError):
    """Raised for invalid obstacle definitions or undefined geometric queries."""

    pass


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """Build a 3D point/vector."""
    return np.array([x, y, z], dtype=float)


@dataclass(frozen=True, eq=False)
class SuperEllipsoidObstacle:
    """
    Implicit-surface shadow obstacle with a motion state.

    Gamma(P) <= 1 inside the inflated surface, > 1 in free space. The horizontal
    principal axes are rotated by `yaw` about the vertical axis.
    """

    center: np.ndarray
    a: float
    b: float
    c: float
    p: int = 1
    q: int = 1
    r: int = 1
    inflation: tuple[float, float, float] = (1.0, 1.0, 1.0)
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "velocity", velocity)
        object.__setattr__(self, "inflation", tuple(float(v) for v in self.inflation))

        if not np.all(np.isfinite(center)) or not np.all(np.isfinite(velocity)):
            raise GeometryError("obstacle center and velocity must be finite")
        if min(self.a, self.b, self.c) <= 0:
            raise GeometryError(f"semi-axes must be positive, got {(self.a, self.b, self.c)}")
        if self.c > min(self.a, self.b) + 1e-12:
            raise GeometryError(
                f"vertical semi-axis c={self.c} exceeds horizontal scale {min(self.a, self.b)}"
            )
        for exponent in (self.p, self.q, self.r):
            if int(exponent) != exponent or not 1 <= exponent <= MAX_EXPONENT:
                raise GeometryError(f"exponents must be integers in [1, 4], got {exponent}")
        if min(self.inflation) < 1.0:
            raise GeometryError(f"inflation factors must be >= 1, got {self.inflation}")

    @property
    def scaled_axes(self) -> np.ndarray:
        """Inflated semi-axes (lambda_a*a, lambda_b*b, lambda_c*c)."""
        la, lb, lc = self.inflation
        return np.array([la * self.a, lb * self.b, lc * self.c])

    @property
    def exponents(self) -> np.ndarray:
        return np.array([2 * self.p, 2 * self.q, 2 * self.r], dtype=float)

    def moved(self, dt: float) -> "SuperEllipsoidObstacle":
        """Same obstacle advanced by its velocity over dt seconds."""
        return SuperEllipsoidObstacle(
            center=self.center + self.velocity * dt,
            a=self.a,
            b=self.b,
            c=self.c,
            p=self.p,
            q=self.q,
            r=self.r,
            inflation=self.inflation,
            yaw=self.yaw,
            velocity=self.velocity,
        )


def _to_local(offset: np.ndarray, yaw: float) -> np.ndarray:
    """Rotate a world-frame offset by -yaw into the obstacle frame."""
    cos_yaw, sin_yaw = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            cos_yaw * offset[0] + sin_yaw * offset[1],
            -sin_yaw * offset[0] + cos_yaw * offset[1],
            offset[2],
        ]
    )


def _ratios(P: np.ndarray, obs: SuperEllipsoidObstacle) -> np.ndarray:
    local = _to_local(np.asarray(P, dtype=float) - obs.center, obs.yaw)
    return np.clip(local / obs.scaled_axes, -RATIO_CLAMP, RATIO_CLAMP)


def gamma(P: np.ndarray, obs: SuperEllipsoidObstacle) -> float:
    """
    Evaluate the inflated super-ellipsoid field Gamma(P).

    Args:
        P: Query point
        obs: Obstacle

    Returns:
        Gamma value; 0 at the center, 1 on the inflated surface
    """
    return float(np.sum(_ratios(P, obs) ** obs.exponents))


def gamma_gradient(P: np.ndarray, obs: SuperEllipsoidObstacle) -> np.ndarray:
    """
    Analytic gradient of Gamma (the un-normalized outward normal).

    The gradient at the exact center is the zero vector.

    Args:
        P: Query point
        obs: Obstacle

    Returns:
        Gradient vector in world frame (1/m)
    """
    ratios = _ratios(P, obs)
    exponents = obs.exponents
    local_grad = exponents * ratios ** (exponents - 1) / obs.scaled_axes
    cos_yaw, sin_yaw = math.cos(obs.yaw), math.sin(obs.yaw)
    return np.array(
        [
            cos_yaw * local_grad[0] - sin_yaw * local_grad[1],
            sin_yaw * local_grad[0] + cos_yaw * local_grad[1],
            local_grad[2],
        ]
    )


def is_feasible(P: np.ndarray, obstacles: Sequence[SuperEllipsoidObstacle]) -> bool:
    """True iff P lies strictly outside every inflated obstacle."""
    return all(gamma(P, obs) > 1.0 for obs in obstacles)


def min_gamma(
    P: np.ndarray, obstacles: Sequence[SuperEllipsoidObstacle]
) -> tuple[float, int]:
    """
    Find the obstacle with the smallest Gamma at P.

    Ties resolve to the lowest index.

    Returns:
        Tuple of (smallest Gamma, obstacle index)

    Raises:
        GeometryError: If the obstacle list is empty
    """
    if len(obstacles) == 0:
        raise GeometryError("no obstacles")
    values = [gamma(P, obs) for obs in obstacles]
    index = int(np.argmin(values))
    return values[index], index


def radial_clearance(P: np.ndarray, obs: SuperEllipsoidObstacle) -> float:
    """
    Distance from P to the inflated surface along the ray from the obstacle center.

    Returns 0 for points on or inside the surface.
    """
    offset = np.asarray(P, dtype=float) - obs.center
    if gamma(P, obs) <= 1.0:
        return 0.0
    scale = brentq(lambda s: gamma(obs.center + s * offset, obs) - 1.0, 0.0, 1.0, xtol=1e-10)
    return float((1.0 - scale) * np.linalg.norm(offset))


class ObstacleField:
    """
    Stacked arrays for a list of obstacles, used by the planner hot loops.

    Evaluates Gamma against every obstacle of a snapshot in one numpy pass.
    """

    def __init__(self, obstacles: Sequence[SuperEllipsoidObstacle]):
        self.obstacles = list(obstacles)
        count = len(self.obstacles)
        self.centers = np.array([o.center for o in self.obstacles]).reshape(count, 3)
        self.axes = np.array([o.scaled_axes for o in self.obstacles]).reshape(count, 3)
        self.exponents = np.array([o.exponents for o in self.obstacles]).reshape(count, 3)
        yaws = np.array([o.yaw for o in self.obstacles], dtype=float)
        self.cos_yaw = np.cos(yaws)
        self.sin_yaw = np.sin(yaws)

    def __len__(self) -> int:
        return len(self.obstacles)

    def gammas(self, P: np.ndarray) -> np.ndarray:
        """Gamma of P against every obstacle."""
        if not self.obstacles:
            return np.empty(0)
        offset = np.asarray(P, dtype=float) - self.centers
        local = np.empty_like(offset)
        local[:, 0] = self.cos_yaw * offset[:, 0] + self.sin_yaw * offset[:, 1]
        local[:, 1] = -self.sin_yaw * offset[:, 0] + self.cos_yaw * offset[:, 1]
        local[:, 2] = offset[:, 2]
        ratios = np.clip(local / self.axes, -RATIO_CLAMP, RATIO_CLAMP)
        return np.sum(ratios**self.exponents, axis=1)

    def nearest(self, P: np.ndarray) -> tuple[float, int]:
        """Smallest Gamma and its obstacle index (lowest index on ties)."""
        if not self.obstacles:
            raise GeometryError("no obstacles")
        values = self.gammas(P)
        index = int(np.argmin(values))
        return float(values[index]), index
