"""Gaussian goodness-of-fit primitives for a fully specified null.

The limit laws under test fix both mean and variance, so neither test
estimates parameters (no Lilliefors-type correction).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .errors import TooFewSamples

__all__ = [
    "normal_cdf",
    "normal_quantile",
    "kolmogorov_sf",
    "ks_test_gaussian",
    "anderson_darling_normal",
    "moment_summary",
    "AD_CRITICAL_1PCT",
]

MIN_SAMPLES = 20
# fully specified null, 1% level
AD_CRITICAL_1PCT = 3.857
_SERIES_TERMS = 100


def normal_cdf(x, mean=0.0, var=1.0):
    return special.ndtr((np.asarray(x, dtype=float) - mean) / math.sqrt(var))


def normal_quantile(p, mean=0.0, var=1.0):
    return mean + math.sqrt(var) * special.ndtri(p)


def kolmogorov_sf(x: float) -> float:
    """``P(K > x)`` for the Kolmogorov distribution, 100-term series.

    Uses ``2 sum (-1)^{k-1} exp(-2 k^2 x^2)`` for ``x >= 1`` and the
    Jacobi-theta form ``1 - sqrt(2 pi)/x sum exp(-(2k-1)^2 pi^2 / (8 x^2))``
    below, where the alternating series converges too slowly.
    """
    if x <= 0:
        return 1.0
    k = np.arange(1, _SERIES_TERMS + 1, dtype=float)
    if x >= 1.0:
        terms = np.exp(-2.0 * k * k * x * x)
        signs = np.where(k % 2 == 1, 1.0, -1.0)
        return float(min(1.0, max(0.0, 2.0 * np.sum(signs * terms))))
    terms = np.exp(-np.square(2.0 * k - 1.0) * math.pi ** 2 / (8.0 * x * x))
    cdf = math.sqrt(2.0 * math.pi) / x * np.sum(terms)
    return float(min(1.0, max(0.0, 1.0 - cdf)))


class KSResult(NamedTuple):
    statistic: float
    pvalue: float


def ks_test_gaussian(samples, mean: float = 0.0, var: float = 1.0) -> KSResult:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {n}")
    cdf = normal_cdf(x, mean, var)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return KSResult(d, kolmogorov_sf(math.sqrt(n) * d))


class ADResult(NamedTuple):
    statistic: float
    reject_at_1pct: bool


def anderson_darling_normal(samples, mean: float = 0.0, var: float = 1.0) -> ADResult:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {n}")
    z = (x - mean) / math.sqrt(var)
    log_cdf = special.log_ndtr(z)
    log_sf = special.log_ndtr(-z)
    i = np.arange(1, n + 1)
    a2 = -n - np.sum((2 * i - 1) * (log_cdf + log_sf[::-1])) / n
    a2 = float(a2)
    return ADResult(a2, a2 > AD_CRITICAL_1PCT)


class MomentSummary(NamedTuple):
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    se_mean: float
    se_variance: float
    se_skewness: float
    se_kurtosis: float


def moment_summary(samples) -> MomentSummary:
    """Unbiased moments with their usual large-sample standard errors.

    Skewness needs ``n >= 3`` and kurtosis ``n >= 4``; otherwise (or for a
    constant sample) they are NaN.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise TooFewSamples("need at least 2 samples")
    mean = math.fsum(x) / n
    var = float(np.var(x, ddof=1))
    degenerate = var == 0.0
    skew = float(stats.skew(x, bias=False)) if n >= 3 and not degenerate else math.nan
    kurt = float(stats.kurtosis(x, bias=False)) if n >= 4 and not degenerate else math.nan
    se_skew = math.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3))) if n >= 3 else math.nan
    se_kurt = (2.0 * se_skew * math.sqrt((n * n - 1.0) / ((n - 3) * (n + 5)))) if n >= 4 else math.nan
    return MomentSummary(
        mean=mean,
        variance=var,
        skewness=skew,
        excess_kurtosis=kurt,
        se_mean=math.sqrt(var / n),
        se_variance=var * math.sqrt(2.0 / (n - 1)),
        se_skewness=se_skew,
        se_kurtosis=se_kurt,
    )
