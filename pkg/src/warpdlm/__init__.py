"""Warped dynamic linear models for count time series.

A count series is modeled as a rounded, monotonically transformed Gaussian
dynamic linear model. The package provides exact filtering, smoothing and
forecasting through the selection normal family, a Gibbs sampler, an optimal
particle filter, simulation generators for benchmark count processes, and
probabilistic-forecast evaluation, plus a config-driven CLI.
"""

from .mvn import (
    MvnParams,
    Rectangle,
    chol_pd,
    mvn_logpdf,
    rect_logprob,
    rect_prob,
    sample_tmvn,
    sample_tn,
    sample_tn_1d,
)

__version__ = "0.1.0"
