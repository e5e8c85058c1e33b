"""Tests for super-ellipsoid obstacle geometry."""

import numpy as np
import pytest

from src.geometry import (
    GeometryError,
    ObstacleField,
    SuperEllipsoidObstacle,
    gamma,
    gamma_gradient,
    is_feasible,
    min_gamma,
    radial_clearance,
    vec3,
)


@pytest.fixture
def sphere():
    """Radius-10 sphere at a non-trivial center."""
    return SuperEllipsoidObstacle(center=vec3(5, -3, 50), a=10, b=10, c=10)


def random_obstacle(rng: np.random.Generator) -> SuperEllipsoidObstacle:
    a = rng.uniform(5, 30)
    b = rng.uniform(5, 30)
    return SuperEllipsoidObstacle(
        center=rng.uniform(-100, 100, 3),
        a=a,
        b=b,
        c=rng.uniform(1, min(a, b)),
        p=int(rng.integers(1, 3)),
        q=int(rng.integers(1, 3)),
        r=int(rng.integers(1, 3)),
        inflation=tuple(rng.uniform(1.0, 1.5, 3)),
        yaw=rng.uniform(-np.pi, np.pi),
    )


def point_in_gamma_band(obs, rng, low=1.0, high=5.0):
    """Sample a point whose Gamma lies in [low, high] by scaling a random ray."""
    while True:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        offset = direction * obs.scaled_axes.max() * 3
        scale = rng.uniform(0.2, 1.0)
        P = obs.center + scale * offset
        if low <= gamma(P, obs) <= high:
            return P


def test_gamma_center_is_zero(sphere):
    """Test Gamma vanishes at the obstacle center."""
    assert gamma(sphere.center, sphere) == 0.0


def test_gamma_on_surface_is_one(sphere):
    """Test Gamma is exactly one on the surface."""
    assert gamma(sphere.center + vec3(10, 0, 0), sphere) == pytest.approx(1.0, abs=1e-12)


def test_gamma_exterior_value(sphere):
    """Test Gamma at twice the radius equals (20/10)^2."""
    assert gamma(sphere.center + vec3(20, 0, 0), sphere) == pytest.approx(4.0, abs=1e-12)


def test_gamma_matches_quadratic_form():
    """Test p=q=r=1 Gamma equals the normalized ellipsoid quadratic form."""
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b = rng.uniform(5, 20, 2)
        c = rng.uniform(1, min(a, b))
        obs = SuperEllipsoidObstacle(center=rng.uniform(-50, 50, 3), a=a, b=b, c=c)
        P = rng.uniform(-80, 80, 3)
        dx, dy, dz = P - obs.center
        expected = (dx / a) ** 2 + (dy / b) ** 2 + (dz / c) ** 2
        assert gamma(P, obs) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_gamma_translation_invariant():
    """Test Gamma is unchanged when point and center move together."""
    rng = np.random.default_rng(11)
    obs = random_obstacle(rng)
    P = obs.center + vec3(12, -7, 3)
    base = gamma(P, obs)
    for _ in range(100):
        shift = rng.uniform(-1000, 1000, 3)
        moved = SuperEllipsoidObstacle(
            center=obs.center + shift,
            a=obs.a,
            b=obs.b,
            c=obs.c,
            p=obs.p,
            q=obs.q,
            r=obs.r,
            inflation=obs.inflation,
            yaw=obs.yaw,
        )
        assert gamma(P + shift, moved) == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_gamma_increases_along_ray(sphere):
    """Test Gamma strictly increases moving outward from the center."""
    direction = np.array([0.3, -0.5, 0.2])
    values = [gamma(sphere.center + s * direction, sphere) for s in np.linspace(0.1, 50, 40)]
    assert all(later > earlier for earlier, later in zip(values, values[1:], strict=False))


def test_inflation_decreases_gamma():
    """Test larger inflation gives smaller Gamma at a fixed exterior point."""
    base = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=8, c=4)
    inflated = SuperEllipsoidObstacle(
        center=vec3(0, 0, 0), a=10, b=8, c=4, inflation=(1.3, 1.0, 1.0)
    )
    P = vec3(15, 6, 1)
    assert gamma(P, inflated) < gamma(P, base)


def test_yaw_rotates_principal_axes():
    """Test a 90 degree yaw swaps the horizontal semi-axes."""
    obs = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=20, b=5, c=5, yaw=np.pi / 2)
    assert gamma(vec3(0, 20, 0), obs) == pytest.approx(1.0, abs=1e-12)
    assert gamma(vec3(5, 0, 0), obs) == pytest.approx(1.0, abs=1e-12)


def test_distant_point_does_not_overflow():
    """Test high exponents far away stay finite."""
    obs = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=1, b=1, c=1, p=4, q=4, r=4)
    value = gamma(vec3(1e12, 0, 0), obs)
    assert np.isfinite(value)
    assert value > 1e40


def test_gradient_on_sphere_surface(sphere):
    """Test the gradient at the +x and +y surface points."""
    np.testing.assert_allclose(
        gamma_gradient(sphere.center + vec3(10, 0, 0), sphere), [0.2, 0, 0], atol=1e-12
    )
    np.testing.assert_allclose(
        gamma_gradient(sphere.center + vec3(0, 10, 0), sphere), [0, 0.2, 0], atol=1e-12
    )


def test_gradient_at_center_is_zero(sphere):
    """Test the gradient at the center is the zero vector."""
    np.testing.assert_array_equal(gamma_gradient(sphere.center, sphere), np.zeros(3))


def test_gradient_points_outward(sphere):
    """Test the sphere gradient has a positive dot product with the radial direction."""
    rng = np.random.default_rng(3)
    for _ in range(100):
        P = sphere.center + rng.uniform(-40, 40, 3)
        assert np.dot(gamma_gradient(P, sphere), P - sphere.center) > 0


def test_gradient_matches_finite_differences():
    """Test the analytic gradient against central differences over random obstacles."""
    rng = np.random.default_rng(2024)
    step = 1e-5
    for _ in range(1000):
        obs = random_obstacle(rng)
        P = point_in_gamma_band(obs, rng)
        analytic = gamma_gradient(P, obs)
        numeric = np.array(
            [
                (gamma(P + step * e, obs) - gamma(P - step * e, obs)) / (2 * step)
                for e in np.eye(3)
            ]
        )
        error = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
        assert error < 1e-6


def test_is_feasible_empty_list():
    """Test an empty obstacle list is always feasible."""
    assert is_feasible(vec3(0, 0, 0), [])


def test_is_feasible_inside_one(sphere):
    """Test a point inside one of two obstacles is infeasible."""
    other = SuperEllipsoidObstacle(center=vec3(500, 0, 0), a=10, b=10, c=10)
    assert not is_feasible(sphere.center + vec3(1, 0, 0), [other, sphere])


def test_is_feasible_just_outside():
    """Test Gamma slightly above one is feasible."""
    obs = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=10, c=10)
    P = vec3(10 * np.sqrt(1.05), 0, 0)
    assert gamma(P, obs) == pytest.approx(1.05)
    assert is_feasible(P, [obs])


def test_min_gamma_single(sphere):
    """Test a single obstacle returns its own value and index 0."""
    P = sphere.center + vec3(20, 0, 0)
    value, index = min_gamma(P, [sphere])
    assert index == 0
    assert value == pytest.approx(4.0)


def test_min_gamma_tie_break():
    """Test coincident obstacles resolve to the lowest index."""
    obs = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=10, c=10)
    twin = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=10, c=10)
    assert min_gamma(vec3(30, 0, 0), [obs, twin])[1] == 0


def test_min_gamma_two_spheres():
    """Test the nearer sphere wins with hand-evaluated values."""
    first = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=10, c=10)
    second = SuperEllipsoidObstacle(center=vec3(100, 0, 0), a=10, b=10, c=10)
    P = vec3(30, 0, 0)
    assert gamma(P, second) == pytest.approx(49.0)
    value, index = min_gamma(P, [first, second])
    assert value == pytest.approx(9.0)
    assert index == 0


def test_min_gamma_empty_raises():
    """Test min_gamma refuses an empty list."""
    with pytest.raises(GeometryError, match="no obstacles"):
        min_gamma(vec3(0, 0, 0), [])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"a": -1, "b": 10, "c": 1},
        {"a": 10, "b": 10, "c": 20},
        {"a": 10, "b": 10, "c": 5, "p": 0},
        {"a": 10, "b": 10, "c": 5, "q": 5},
        {"a": 10, "b": 10, "c": 5, "inflation": (0.9, 1.0, 1.0)},
    ],
)
def test_invalid_obstacles_rejected(kwargs):
    """Test obstacle invariants are enforced at construction."""
    with pytest.raises(GeometryError):
        SuperEllipsoidObstacle(center=vec3(0, 0, 0), **kwargs)


def test_radial_clearance_sphere(sphere):
    """Test clearance along the ray equals distance minus radius."""
    assert radial_clearance(sphere.center + vec3(0, 25, 0), sphere) == pytest.approx(15.0)
    assert radial_clearance(sphere.center + vec3(3, 0, 0), sphere) == 0.0


def test_radial_clearance_respects_inflation():
    """Test clearance is measured to the inflated surface."""
    obs = SuperEllipsoidObstacle(center=vec3(0, 0, 0), a=10, b=10, c=10, inflation=(1.2, 1.2, 1.2))
    assert radial_clearance(vec3(30, 0, 0), obs) == pytest.approx(18.0)


def test_obstacle_field_matches_scalar():
    """Test the vectorised field agrees with per-obstacle gamma."""
    rng = np.random.default_rng(5)
    obstacles = [random_obstacle(rng) for _ in range(6)]
    field = ObstacleField(obstacles)
    for _ in range(50):
        P = rng.uniform(-120, 120, 3)
        expected = [gamma(P, obs) for obs in obstacles]
        np.testing.assert_allclose(field.gammas(P), expected, rtol=1e-12)
        assert field.nearest(P) == pytest.approx(min_gamma(P, obstacles))


def test_obstacle_field_empty():
    """Test an empty field has no values and refuses nearest()."""
    field = ObstacleField([])
    assert len(field) == 0
    assert field.gammas(vec3(0, 0, 0)).size == 0
    with pytest.raises(GeometryError):
        field.nearest(vec3(0, 0, 0))


def test_moved_advances_center():
    """Test moved() translates the center by velocity times dt."""
    obs = SuperEllipsoidObstacle(
        center=vec3(0, 0, 0), a=5, b=5, c=1, velocity=vec3(1, 2, 0)
    )
    np.testing.assert_allclose(obs.moved(2.0).center, [2, 4, 0])
