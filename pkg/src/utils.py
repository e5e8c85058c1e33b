"""Utility functions shared by the planners and the experiment harness."""

import csv
import hashlib
import math
from collections.abc import Iterable, Sequence
from datetime import datetime
from pathlib import Path

import numpy as np


def log(message: str) -> None:
    """
    Print a timestamped log message.

    Args:
        message: The message to log
    """
    timestamp = datetime.now().strftime("[%d/%m %H:%M:%S]")
    print(f"{timestamp} {message}")


def wrap_angle(angle: float) -> float:
    """
    Wrap an angle to the interval (-pi, pi].

    Args:
        angle: Angle in radians

    Returns:
        Equivalent angle in (-pi, pi]
    """
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def heading_pitch(vector: np.ndarray) -> tuple[float, float]:
    """
    Get heading (psi) and flight path angle (theta) of a velocity vector.

    Args:
        vector: 3D vector

    Returns:
        Tuple of (psi, theta) in radians
    """
    horizontal = math.hypot(vector[0], vector[1])
    return math.atan2(vector[1], vector[0]), math.atan2(vector[2], horizontal)


def direction(psi: float, theta: float) -> np.ndarray:
    """Unit vector for a heading and flight path angle."""
    cos_theta = math.cos(theta)
    return np.array([cos_theta * math.cos(psi), cos_theta * math.sin(psi), math.sin(theta)])


def fmt(value: float | int | bool | str | None) -> str:
    """
    Format a value for CSV output.

    Floats use a fixed significant-digit format so reruns are byte-identical.
    """
    if value is None:
        return ""
    if isinstance(value, bool | np.bool_):
        return "1" if value else "0"
    if isinstance(value, float | np.floating):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(float(value), ".10g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """
    Write rows to a UTF-8 CSV file with a header row.

    Args:
        path: Destination file
        header: Column names
        rows: Row values, formatted with fmt()

    Returns:
        The written path
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(value) for value in row])
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    """Read a CSV file into a list of row dicts."""
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def sha256_file(path: Path) -> str:
    """Get the hex SHA-256 digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()
