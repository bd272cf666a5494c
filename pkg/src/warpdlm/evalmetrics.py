"""Probabilistic forecast evaluation for count predictions.

Calibration via the randomized probability integral transform and
sharpness via the logarithmic score, plus the uniformity test and
score-comparison summaries used in rolling-origin studies.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstest

__all__ = [
    "LOG_SCORE_FLOOR",
    "ForecastRecord",
    "rpit",
    "log_score",
    "uniformity_pvalue",
    "score_comparison",
    "uniform_envelope",
]

LOG_SCORE_FLOOR = 1e-4


@dataclass(frozen=True)
class ForecastRecord:
    """One forecast distribution next to the count it tried to predict.

    from_draws marks pmf values as empirical frequencies, which turns on
    the log-score mass floor.
    """

    t: int
    observed: int
    support: np.ndarray
    pmf: np.ndarray
    from_draws: bool = False
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int)
        pmf = np.asarray(self.pmf, dtype=float)
        if support.shape != pmf.shape or support.ndim != 1:
            raise ValueError("support and pmf must be matching 1-d arrays")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(pmf < 0):
            raise ValueError("pmf values must be non-negative")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "cdf", np.cumsum(pmf))

    @classmethod
    def from_draws(cls, t, observed, draws, support=None):
        """Record built from sampled forecasts; pmf holds frequencies."""
        draws = np.asarray(draws, dtype=int).reshape(-1)
        if draws.size == 0:
            raise ValueError("need at least one forecast draw")
        hi = max(int(draws.max()), int(observed))
        if support is None:
            support = np.arange(hi + 1)
        else:
            support = np.asarray(support, dtype=int)
        counts = np.bincount(np.clip(draws, 0, None), minlength=support[-1] + 1)
        pmf = counts[support] / draws.size
        return cls(t, int(observed), support, pmf, from_draws=True)

    def _cdf_at(self, y):
        """Cumulative mass at integer y, with zero mass below the support."""
        idx = np.searchsorted(self.support, y, side="right") - 1
        if idx < 0:
            return 0.0
        return float(self.cdf[idx])

    def mass_at(self, y):
        hit = np.nonzero(self.support == y)[0]
        return float(self.pmf[hit[0]]) if hit.size else 0.0


def rpit(record, rng):
    """Randomized PIT draw, uniform between the cdf just below and at y."""
    rng = np.random.default_rng(rng)
    y = record.observed
    lo = 0.0 if y == 0 else record._cdf_at(y - 1)
    hi = record._cdf_at(y)
    if hi < lo:
        raise ValueError("cdf decreased; invalid record")
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def log_score(record):
    """Negative log mass at the observed count.

    Draw-based records floor the mass at 1e-4; exact pmfs are used as is
    unless the mass is zero, where the same floor applies.
    """
    p = record.mass_at(record.observed)
    if record.from_draws or p == 0.0:
        p = max(p, LOG_SCORE_FLOOR)
    return float(-np.log(p))


def uniformity_pvalue(rpits):
    """One-sample Kolmogorov-Smirnov p-value against Uniform(0,1)."""
    vals = np.asarray(rpits, dtype=float).reshape(-1)
    if vals.size < 10:
        raise ValueError(f"need at least 10 values, got {vals.size}")
    return float(kstest(vals, "uniform").pvalue)


def score_comparison(scores_by_model, baseline):
    """Percent difference of mean log score against a baseline model.

    Negative numbers mean better than the baseline.  Values may be
    scalars or per-series arrays; arrays are averaged first.
    """
    if baseline not in scores_by_model:
        raise ValueError(f"baseline {baseline!r} missing from the score table")
    means = {
        name: float(np.mean(np.asarray(vals, dtype=float)))
        for name, vals in scores_by_model.items()
    }
    base = means[baseline]
    if base == 0.0:
        raise ValueError("baseline mean score is zero; percent difference undefined")
    return {name: 100.0 * (m - base) / base for name, m in means.items()}


def uniform_envelope(n, nsamples=100, rng=None):
    """Order-statistic envelope from repeated sorted uniform samples.

    Returns (quantiles, lower, upper): the plotting positions i/(n+1)
    and the pointwise min/max of nsamples sorted Uniform(0,1) samples,
    the reference band for sorted-rPIT calibration figures.
    """
    rng = np.random.default_rng(rng)
    sims = np.sort(rng.uniform(size=(nsamples, n)), axis=1)
    grid = np.arange(1, n + 1) / (n + 1)
    return grid, sims.min(axis=0), sims.max(axis=0)
