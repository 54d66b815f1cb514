"""Monte Carlo estimates and their confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ValidationError


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo point estimate with a two-sided confidence interval."""

    value: float
    ci_low: float
    ci_high: float
    replicas: int
    seed: Optional[int] = None
    level: float = 0.95
    count: Optional[int] = None

    def __post_init__(self):
        if not self.ci_low <= self.value <= self.ci_high:
            raise ValidationError(f"CI [{self.ci_low}, {self.ci_high}] excludes {self.value}")

    @property
    def p_hat(self) -> float:
        return self.value

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValidationError("Wilson interval needs at least one trial")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def proportion_estimate(successes: int, trials: int, level: float = 0.95,
                        seed: Optional[int] = None) -> MCEstimate:
    lo, hi = wilson_interval(successes, trials, level)
    p = successes / trials
    # binomtest rounds; keep the interval bracketing the point estimate exactly
    return MCEstimate(p, min(lo, p), max(hi, p), trials, seed, level, int(successes))


def jackknife_variance(samples: np.ndarray, level: float = 0.95, axis: int = 0):
    """Sample variance with leave-one-out jackknife confidence half-widths.

    Returns ``(variance, half_width)`` reduced along ``axis``.  The
    leave-one-out variances have a closed form, so this costs O(n).
    """
    x = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    n = x.shape[0]
    if n < 3:
        raise ValidationError("jackknife needs at least 3 samples")
    mean = x.mean(axis=0)
    dev2 = (x - mean) ** 2
    ss = dev2.sum(axis=0)
    var = ss / (n - 1)
    loo = (ss - dev2 * n / (n - 1)) / (n - 2)
    se = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    z = stats.norm.ppf(0.5 + level / 2)
    return var, z * se


def fit_log_slope(z: np.ndarray, p_hat: np.ndarray, counts: np.ndarray, replicas: int):
    """Weighted least-squares slope of ``-log p`` against ``z``.

    Points with no exceedances are dropped; weights are the inverse delta-method
    variances ``(1 - p) / (n p)`` of ``log p``.  Returns ``(slope, stderr, used)``.
    """
    z = np.asarray(z, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    used = np.asarray(counts) > 0
    if used.sum() < 2:
        raise ValidationError("slope fit needs at least two thresholds with exceedances")
    zu, pu = z[used], p_hat[used]
    var = np.maximum((1 - pu) / (replicas * pu), 1e-300)
    w = 1 / var
    X = np.column_stack([np.ones_like(zu), zu])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * -np.log(pu)))
    cov = np.linalg.inv(A)
    return float(beta[1]), float(np.sqrt(cov[1, 1])), used
