"""Synthetic count-series generators for the simulation experiments.

Three data-generating processes live here: a zero-inflated Poisson with a
reflected random-walk mean and a hard cap, an INGARCH(p, q) feedback
recursion, and a multivariate Poisson model driven by a shared scaled-Beta
state. Each generator is a pure function of the supplied RNG, so the same
seed reproduces the same series bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = ["CountSeries", "gen_zip_bounded", "gen_ingarch", "gen_mpsb"]


@dataclass(frozen=True)
class CountSeries:
    """A simulated count series together with the path that produced it.

    ``y`` holds the counts, shape ``(T,)`` for the univariate generators and
    ``(T, n)`` for the multivariate one. ``latent`` is the mean path aligned
    with the rows of ``y``: the Poisson rate for the univariate processes,
    the shared positive state for the multivariate one. ``params`` records
    every parameter the generator used, including the values it drew itself,
    so a run can be reconstructed from this record and the seed alone.
    """

    y: np.ndarray
    latent: np.ndarray
    params: dict


def gen_zip_bounded(
    T: int,
    rng: np.random.Generator,
    pi: Optional[float] = None,
    lam_init: Optional[float] = None,
    walk_var: float = 0.2,
    cap: int = 24,
) -> CountSeries:
    """Zero-inflated Poisson counts with a wandering mean, capped at ``cap``.

    The rate follows a reflected random walk: ``lam[t+1] = |lam[t] + e|``
    with ``e`` normal, mean zero, variance ``walk_var``. Reflection keeps
    the rate nonnegative, which the recursion itself does not guarantee.
    The starting rate is uniform on [5, 15] unless ``lam_init`` is given.
    Each count is replaced by zero with probability ``pi`` (drawn uniformly
    from [0.1, 0.3] when not given), and any value above ``cap`` is rounded
    down to ``cap``.

    Note ``walk_var`` is a variance, not a standard deviation; the metadata
    records that reading explicitly.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if walk_var < 0:
        raise ValueError("walk_var must be nonnegative")
    pi_v = float(rng.uniform(0.1, 0.3)) if pi is None else float(pi)
    if not 0.0 <= pi_v <= 1.0:
        raise ValueError(f"zero-inflation probability {pi_v} is outside [0, 1]")
    lam0 = float(rng.uniform(5.0, 15.0)) if lam_init is None else float(lam_init)

    lam = np.empty(T)
    lam[0] = abs(lam0)
    if T > 1:
        steps = rng.normal(0.0, np.sqrt(walk_var), size=T - 1)
        for t in range(1, T):
            lam[t] = abs(lam[t - 1] + steps[t - 1])
    y = rng.poisson(lam)
    y = np.where(rng.random(T) < pi_v, 0, y)
    y = np.minimum(y, int(cap)).astype(np.int64)

    params = dict(
        kind="zip_bounded",
        T=int(T),
        pi=pi_v,
        lam_init=lam0,
        walk_var=float(walk_var),
        walk_var_unit="variance",
        cap=int(cap),
    )
    return CountSeries(y=y, latent=lam, params=params)


def gen_ingarch(
    T: int,
    rng: np.random.Generator,
    beta0: float = 0.3,
    betas: Sequence[float] = (0.6,),
    alphas: Sequence[float] = (0.2,),
    burnin: int = 50,
) -> CountSeries:
    """Simulate an INGARCH(p, q) count series.

    Counts are conditionally Poisson with rate

        lam[t] = beta0 + sum_k betas[k] * y[t-1-k] + sum_l alphas[l] * lam[t-1-l].

    The recursion starts from the stationary mean beta0 / (1 - sum(betas)
    - sum(alphas)) with the presample counts set to its floor, and the
    first ``burnin`` steps are discarded. When the weights sum to one or
    more there is no stationary mean; a warning is issued and the start
    value falls back to ``beta0``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if burnin < 0:
        raise ValueError("burnin must be nonnegative")
    b = np.asarray(betas, dtype=float).ravel()
    a = np.asarray(alphas, dtype=float).ravel()
    if beta0 < 0 or (b < 0).any() or (a < 0).any():
        raise ValueError("INGARCH coefficients must be nonnegative")
    s = float(b.sum() + a.sum())
    if s >= 1.0:
        warnings.warn(
            f"feedback weights sum to {s:.3f}, so the count recursion has no "
            "stationary mean; starting from beta0 instead",
            RuntimeWarning,
        )
        lam_start = float(beta0)
    else:
        lam_start = float(beta0) / (1.0 - s)

    p, q = b.size, a.size
    ylag = [int(np.floor(lam_start))] * p  # most recent first
    llag = [lam_start] * q
    total = int(burnin) + int(T)
    ys = np.empty(total, dtype=np.int64)
    lams = np.empty(total)
    for t in range(total):
        lam_t = float(beta0)
        for k in range(p):
            lam_t += b[k] * ylag[k]
        for l in range(q):
            lam_t += a[l] * llag[l]
        y_t = int(rng.poisson(lam_t))
        ys[t] = y_t
        lams[t] = lam_t
        if p:
            ylag = [y_t] + ylag[: p - 1]
        if q:
            llag = [lam_t] + llag[: q - 1]

    params = dict(
        kind="ingarch",
        T=int(T),
        beta0=float(beta0),
        betas=tuple(float(x) for x in b),
        alphas=tuple(float(x) for x in a),
        burnin=int(burnin),
        init="stationary-mean",
        weight_sum=s,
    )
    return CountSeries(y=ys[burnin:], latent=lams[burnin:], params=params)


def gen_mpsb(
    T: int,
    rng: np.random.Generator,
    n: Optional[int] = None,
    lambdas: Optional[Sequence[float]] = None,
    gamma: float = 0.93,
    alpha0: float = 100.0,
    beta0: float = 100.0,
    theta0: Optional[float] = None,
) -> CountSeries:
    """Multivariate Poisson counts sharing one scaled-Beta state.

    Coordinate j of row t is Poisson with rate ``lambdas[j] * theta[t]``.
    The state starts at ``theta0`` when given, otherwise at a draw from
    Gamma(alpha0, rate beta0), and between rows evolves by

        theta <- (theta / gamma) * eps,  eps ~ Beta(gamma * w, (1 - gamma) * w),

    where the information weight w follows ``w <- gamma * w + sum_j y[t, j]``
    after every emitted row, from ``w = alpha0``. The first row is drawn at
    the initial state itself, so a degenerate start gives exact Poisson
    counts there; evolution applies between consecutive rows only.

    A long stretch of all-zero rows shrinks w geometrically. If it
    underflows, the Beta parameters hit zero and the generator raises
    rather than emit from an undefined evolution.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if lambdas is None:
        if n is None or n == 5:
            lambdas = (2.0, 2.5, 3.0, 3.5, 4.0)
        else:
            raise ValueError("lambdas must be given when n != 5")
    lam = np.asarray(lambdas, dtype=float).ravel()
    if n is None:
        n = lam.size
    if lam.size != n:
        raise ValueError(f"lambdas has length {lam.size}, expected n = {n}")
    if (lam <= 0).any():
        raise ValueError("all lambdas must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly between 0 and 1")
    if alpha0 <= 0 or beta0 <= 0:
        raise ValueError("alpha0 and beta0 must be positive")
    if theta0 is not None and theta0 <= 0:
        raise ValueError("theta0 must be positive")

    th = float(theta0) if theta0 is not None else float(rng.gamma(alpha0, 1.0 / beta0))
    ys = np.empty((int(T), int(n)), dtype=np.int64)
    ths = np.empty(int(T))
    w = float(alpha0)
    for t in range(int(T)):
        if t > 0:
            ba = gamma * w
            bb = (1.0 - gamma) * w
            if not (ba > 0.0 and bb > 0.0):
                raise ValueError(
                    f"information weight underflowed at t={t}; the series has "
                    "collapsed and the Beta evolution is undefined"
                )
            eps = float(rng.beta(ba, bb))
            th = (th / gamma) * eps
        ths[t] = th
        ys[t] = rng.poisson(lam * th)
        w = gamma * w + float(ys[t].sum())

    params = dict(
        kind="mpsb",
        T=int(T),
        n=int(n),
        lambdas=tuple(float(x) for x in lam),
        gamma=float(gamma),
        alpha0=float(alpha0),
        beta0=float(beta0),
        theta0=float(ths[0]),
    )
    return CountSeries(y=ys, latent=ths, params=params)
