"""Monte Carlo feasibility fractions and confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import InsufficientRuns


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    method: str
    n: int
    ci: tuple[float, float] | None = None
    seed: int | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.ci is not None and not (self.ci[0] - 1e-15 <= self.value <= self.ci[1] + 1e-15):
            raise ValueError("confidence interval does not contain the estimate")

    def as_dict(self) -> dict:
        return {"method": self.method, "N": self.n, "seed": self.seed, "value": self.value,
                "ci": list(self.ci) if self.ci is not None else None}


def wald_interval(p_hat: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Single-run normal interval ``p +- z sqrt(p(1-p)/N)``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2)
    half = z * math.sqrt(max(p_hat * (1 - p_hat), 0.0) / n)
    return p_hat - half, p_hat + half


def runs_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Student-t interval for the mean of repeated estimates."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    values = np.asarray(values, dtype=float)
    k = values.size
    if k < 2:
        raise InsufficientRuns("need at least two runs")
    mean = values.mean()
    half = stats.t.ppf(0.5 + level / 2, k - 1) * values.std(ddof=1) / math.sqrt(k)
    return float(mean - half), float(mean + half)


def confidence_interval(values=None, *, p_hat: float | None = None, n: int | None = None,
                        level: float = 0.95) -> tuple[float, float]:
    """Across-run interval for ``values``, otherwise the single-run Wald interval."""
    if values is not None:
        return runs_interval(values, level)
    if p_hat is None or n is None:
        raise ValueError("give either run values or p_hat and n")
    return wald_interval(p_hat, n, level)


def mc_probability(samples, predicate: Callable[[np.ndarray], np.ndarray] | None = None,
                   seed: int | None = None, level: float = 0.95) -> ProbabilityEstimate:
    """Fraction of samples satisfying ``predicate`` (or of a boolean mask)."""
    if predicate is None:
        mask = np.asarray(samples, dtype=bool)
    else:
        mask = np.asarray(predicate(samples), dtype=bool)
    n = mask.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    p = float(np.count_nonzero(mask)) / n
    lo, hi = wald_interval(p, n, level)
    return ProbabilityEstimate(p, "mc", n, (lo, hi), seed, level)
