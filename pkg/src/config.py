"""Experiment configuration: flat dotted keys loaded from a dotenv-style text file."""

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dotenv import dotenv_values, set_key

from .baselines import PidGains
from .environment import PRESETS
from .ifds import IfdsParams, KinematicLimits
from .metrics import CameraModel
from .mpc import MpcConfig, candidate_grid
from .tracking import TrackingConfig

PLANNERS = ("pid", "ifds", "ifds_mpc")


class ConfigError(ValueError):
    """Raised for unknown configuration keys or invalid values; lists every offending key."""

    def __init__(self, problems: Mapping[str, str]):
        self.problems = dict(sorted(problems.items()))
        details = "; ".join(f"{key}: {reason}" for key, reason in self.problems.items())
        super().__init__(f"invalid configuration ({details})")


def _floats(text: str) -> tuple[float, ...]:
    values = tuple(float(part) for part in text.split(",") if part.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(value) for value in _names(text))


def _names(text: str) -> tuple[str, ...]:
    values = tuple(part.strip() for part in text.split(",") if part.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text}")


# key -> (parser, default)
REGISTRY: dict[str, tuple[Callable[[str], Any], Any]] = {
    "scenario.preset": (str, "dense"),
    "scenario.length": (float, 500.0),
    "scenario.mission_time": (float, 600.0),
    "harness.planner": (str, "ifds_mpc"),
    "harness.planners": (_names, ("pid", "ifds", "ifds_mpc")),
    "harness.runs": (int, 50),
    "harness.seed": (int, 0),
    "harness.noise_sigma": (float, 0.0),
    "harness.sigmas": (_floats, (0.0, 1.0, 3.0)),
    "harness.horizons": (_ints, (5, 10, 15, 20, 25, 30)),
    "harness.output": (str, "runs"),
    "harness.workers": (int, 1),
    "harness.budget_factor": (float, 3.0),
    "harness.goal_tolerance": (float, 5.0),
    "harness.obstacle_altitude": (float, 100.0),
    "harness.coverage_resolution": (float, 1.0),
    "harness.plots": (_bool, True),
    "kinematics.dt": (float, 0.1),
    "kinematics.v0": (float, 10.0),
    "kinematics.omega_max": (float, 0.5),
    "kinematics.theta_min": (float, -0.35),
    "kinematics.theta_max": (float, 0.35),
    "kinematics.h_min": (float, 40.0),
    "kinematics.h_max": (float, 120.0),
    "kinematics.h_cruise": (float, 100.0),
    "ifds.rho": (float, 1.5),
    "ifds.sigma_n": (float, 1.5),
    "ifds.eta": (float, 0.3),
    "ifds.tau": (float, 30.0),
    "ifds.dfaa_altitude": (float, 55.0),
    "ifds.altitude_gain": (float, 0.3),
    "ifds.k_n": (float, 0.05),
    "mpc.N": (int, 20),
    "mpc.w1": (float, 0.4),
    "mpc.w2": (float, 0.4),
    "mpc.w3": (float, 0.2),
    "mpc.mu1": (float, 1.0),
    "mpc.mu2": (float, 1.0),
    "mpc.gamma_safe": (float, 1.2),
    "mpc.rho_grid": (_floats, (1.0, 1.5, 2.5)),
    "mpc.sigma_grid": (_floats, (1.0, 1.5, 2.5)),
    "mpc.eta_grid": (_floats, (0.0, 0.3, 0.6)),
    "mpc.workers": (int, 1),
    "mpc.band_priority": (_bool, True),
    "pid.kp": (float, 0.02),
    "pid.ki": (float, 0.0001),
    "pid.kd": (float, 0.02),
    "pid.integral_clamp": (float, 200.0),
    "pid.kp_alt": (float, 0.01),
    "pid.kd_alt": (float, 0.05),
    "pid.warning_gamma": (float, 2.0),
    "pid.speed_cut": (float, 0.3),
    "tracking.sigma_a": (float, 0.5),
    "tracking.radius_sigma": (float, 0.5),
    "tracking.measurement_floor": (float, 0.5),
    "tracking.initial_velocity_sigma": (float, 2.0),
    "tracking.thickness": (float, 20.0),
    "tracking.inflation": (float, 1.2),
    "tracking.observation": (str, "blobs"),
    "tracking.sample_resolution": (float, 2.0),
    "tracking.max_obstacles": (int, 16),
    "tracking.gate": (float, 15.0),
    "tracking.max_misses": (int, 10),
    "camera.fov_deg": (float, 60.0),
    "camera.gsd_slope": (float, 0.0015),
    "lyapunov.radius": (float, 0.0),
    "lyapunov.tolerance": (float, 1e-6),
}


def format_value(value: Any) -> str:
    """Render a config value the way the parsers read it back."""
    if isinstance(value, tuple):
        return ",".join(format_value(item) for item in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Resolved experiment settings.

    Holds every registry key with its parsed value and builds the typed
    parameter objects of the planners from them.
    """

    values: Mapping[str, Any] = field(
        default_factory=lambda: {key: default for key, (_, default) in REGISTRY.items()}
    )

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def preset(self) -> str:
        return self.values["scenario.preset"]

    @property
    def planner(self) -> str:
        return self.values["harness.planner"]

    @property
    def runs(self) -> int:
        return self.values["harness.runs"]

    @property
    def seed(self) -> int:
        return self.values["harness.seed"]

    @property
    def noise_sigma(self) -> float:
        return self.values["harness.noise_sigma"]

    @property
    def output(self) -> Path:
        return Path(self.values["harness.output"])

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Copy with already-typed values replaced; raises ConfigError on unknown keys."""
        unknown = {key: "unknown key" for key in overrides if key not in REGISTRY}
        if unknown:
            raise ConfigError(unknown)
        config = ExperimentConfig({**self.values, **overrides})
        config.validate()
        return config

    def limits(self) -> KinematicLimits:
        v = self.values
        return KinematicLimits(
            omega_max=v["kinematics.omega_max"],
            theta_min=v["kinematics.theta_min"],
            theta_max=v["kinematics.theta_max"],
            h_min=v["kinematics.h_min"],
            h_max=v["kinematics.h_max"],
            v0=v["kinematics.v0"],
            dt=v["kinematics.dt"],
            h_cruise=v["kinematics.h_cruise"],
        )

    def ifds_params(self) -> IfdsParams:
        v = self.values
        return IfdsParams(
            rho=v["ifds.rho"],
            sigma_n=v["ifds.sigma_n"],
            eta=v["ifds.eta"],
            tau=v["ifds.tau"],
            dfaa_altitude=v["ifds.dfaa_altitude"],
            altitude_gain=v["ifds.altitude_gain"],
            k_n=v["ifds.k_n"],
        )

    def mpc_config(self) -> MpcConfig:
        v = self.values
        return MpcConfig(
            horizon=v["mpc.N"],
            weights=(v["mpc.w1"], v["mpc.w2"], v["mpc.w3"]),
            mu=(v["mpc.mu1"], v["mpc.mu2"]),
            gamma_safe=v["mpc.gamma_safe"],
            candidates=candidate_grid(
                v["mpc.rho_grid"], v["mpc.sigma_grid"], v["mpc.eta_grid"], self.ifds_params()
            ),
            workers=v["mpc.workers"],
            band_priority=v["mpc.band_priority"],
        )

    def pid_gains(self) -> PidGains:
        return PidGains(**{key[4:]: value for key, value in self._namespace("pid").items()})

    def tracking_config(self) -> TrackingConfig:
        return TrackingConfig(
            **{key[9:]: value for key, value in self._namespace("tracking").items()}
        )

    def camera(self) -> CameraModel:
        return CameraModel(
            fov=math.radians(self.values["camera.fov_deg"]),
            gsd_slope=self.values["camera.gsd_slope"],
        )

    def _namespace(self, prefix: str) -> dict[str, Any]:
        return {key: value for key, value in self.values.items() if key.startswith(prefix + ".")}

    def validate(self) -> None:
        """
        Check cross-key constraints by building every parameter object.

        Raises:
            ConfigError: Listing every namespace or key that fails
        """
        problems: dict[str, str] = {}
        v = self.values
        if v["harness.runs"] < 1:
            problems["harness.runs"] = "must be >= 1"
        if v["harness.noise_sigma"] < 0:
            problems["harness.noise_sigma"] = "must be >= 0"
        if min(v["harness.sigmas"]) < 0:
            problems["harness.sigmas"] = "must be >= 0"
        if min(v["harness.horizons"]) < 1:
            problems["harness.horizons"] = "every horizon must be >= 1"
        if v["harness.workers"] < 1:
            problems["harness.workers"] = "must be >= 1"
        if v["harness.budget_factor"] <= 0:
            problems["harness.budget_factor"] = "must be positive"
        if v["harness.coverage_resolution"] <= 0:
            problems["harness.coverage_resolution"] = "must be positive"
        if v["harness.planner"] not in PLANNERS:
            problems["harness.planner"] = f"must be one of {', '.join(PLANNERS)}"
        unknown = [name for name in v["harness.planners"] if name not in PLANNERS]
        if unknown:
            problems["harness.planners"] = f"unknown planners {', '.join(unknown)}"
        if v["scenario.preset"] not in PRESETS:
            problems["scenario.preset"] = f"must be one of {', '.join(PRESETS)}"

        builders = {
            "kinematics": self.limits,
            "ifds": self.ifds_params,
            "mpc": self.mpc_config,
            "pid": self.pid_gains,
            "tracking": self.tracking_config,
            "camera": self.camera,
        }
        for namespace, build in builders.items():
            try:
                build()
            except ValueError as e:
                problems[f"{namespace}.*"] = str(e)
        if problems:
            raise ConfigError(problems)


def parse_values(raw: Mapping[str, str | None]) -> dict[str, Any]:
    """
    Parse raw key/value text against the registry.

    Raises:
        ConfigError: Listing every unknown key and every unparsable value
    """
    problems: dict[str, str] = {}
    parsed: dict[str, Any] = {}
    for key, text in raw.items():
        if key not in REGISTRY:
            problems[key] = "unknown key"
            continue
        parser, _ = REGISTRY[key]
        if text is None or not text.strip():
            problems[key] = "missing value"
            continue
        try:
            parsed[key] = parser(text.strip())
        except ValueError:
            problems[key] = f"cannot parse {text!r}"
    if problems:
        raise ConfigError(problems)
    return parsed


def load_config(
    path: Path | None = None, overrides: Mapping[str, str] | None = None
) -> ExperimentConfig:
    """
    Load a configuration file on top of the registry defaults.

    Args:
        path: Flat `key = value` file with dotted keys, or None for defaults only
        overrides: Raw text values (e.g. from CLI flags) applied after the file

    Returns:
        The validated configuration

    Raises:
        ConfigError: If the file is missing or holds unknown or invalid keys
    """
    raw: dict[str, str | None] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError({str(path): "configuration file not found"})
        raw.update(dotenv_values(path, interpolate=False))
    raw.update(overrides or {})
    config = ExperimentConfig().with_overrides(parse_values(raw))
    return config


def write_resolved(config: ExperimentConfig, path: Path) -> Path:
    """Write every resolved key in registry order, loadable by load_config."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    for key in REGISTRY:
        set_key(path, key, format_value(config[key]), quote_mode="never")
    return path
