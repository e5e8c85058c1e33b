"""Wall-clock tracking of planner steps against the control period."""

import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .utils import write_csv


class StepTimer:
    """
    Records the compute time of each planner step.

    Args:
        budget_ms: The control period; steps slower than this overrun the budget
    """

    def __init__(self, budget_ms: float):
        if budget_ms <= 0:
            raise ValueError(f"timing budget must be positive, got {budget_ms}")
        self.budget_ms = budget_ms
        self.samples: list[float] = []

    @contextmanager
    def measure(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.samples.append((time.perf_counter() - start) * 1000.0)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.samples)) if self.samples else 0.0

    @property
    def p95_ms(self) -> float:
        if not self.samples:
            return 0.0
        return float(np.percentile(self.samples, 95, method="higher"))

    @property
    def max_ms(self) -> float:
        return max(self.samples, default=0.0)

    @property
    def overruns(self) -> int:
        """Number of steps slower than the budget."""
        return sum(1 for sample in self.samples if sample > self.budget_ms)

    def within_budget(self) -> bool:
        """True when both the mean and the 95th percentile fit the budget."""
        return self.mean_ms < self.budget_ms and self.p95_ms < self.budget_ms

    def write(self, path: Path) -> Path:
        """Per-step times in milliseconds; values differ from run to run."""
        return write_csv(path, ["step", "compute_ms"], enumerate(self.samples))
