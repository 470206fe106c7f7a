"""Monte Carlo summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import TooFewSamples


@dataclass(frozen=True)
class MCStats:
    mean: float
    std_error: float
    n: int

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        """Normal-approximation interval for the mean."""
        half = float(norm.ppf(0.5 + level / 2.0)) * self.std_error
        return self.mean - half, self.mean + half

    def z_score(self, target: float) -> float:
        diff = self.mean - target
        if self.std_error > 0.0:
            return diff / self.std_error
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)


def mc_stats(samples) -> MCStats:
    """Sample mean and its standard error (unbiased variance).

    Raises:
        TooFewSamples: fewer than two samples.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.size}")
    return MCStats(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))


def residual_fraction_se(y, residual) -> tuple[float, float]:
    """r = mean(e^2) / var(y) and its delta-method standard error."""
    y = np.asarray(y, dtype=float)
    e = np.asarray(residual, dtype=float)
    n = y.size
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    dy2 = (y - y.mean()) ** 2
    var = dy2.mean()
    # a constant target has zero variance up to roundoff in its mean
    if var <= 1e-24 * float((y ** 2).mean()) or var == 0.0:
        return 0.0, 0.0
    r = float((e ** 2).mean() / var)
    influence = (e ** 2 - r * dy2) / var
    return r, float(influence.std(ddof=1) / math.sqrt(n))
