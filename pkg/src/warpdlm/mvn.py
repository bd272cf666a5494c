"""Multivariate normal primitives.

Cholesky with a one-shot jitter policy, log density, Gaussian rectangle
probabilities (exact in 1-d, randomized quasi Monte Carlo separation of
variables for d >= 2), and truncated normal sampling: exact univariate draws
and a coordinate-wise Gibbs chain for rectangles in several dimensions.
Intervals use IEEE infinities for unbounded ends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import qmc

__all__ = [
    "Rectangle",
    "MvnParams",
    "chol_pd",
    "cho_solve_lower",
    "mvn_logpdf",
    "rect_prob",
    "rect_logprob",
    "rect_logprob_many",
    "sov_prefix_paths",
    "sample_gaussian",
    "sample_tn",
    "sample_tn_1d",
    "sample_tmvn",
    "TmvnGibbsChain",
]

# Intervals whose log mass falls below this are treated as numerically empty.
_LOG_MASS_FLOOR = -700.0


@dataclass(frozen=True)
class Rectangle:
    """Product of per-coordinate intervals, ends possibly infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError("rectangle bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise ValueError("rectangle bounds may not be NaN")
        if not np.all(lo < up):
            bad = int(np.argmin(lo < up))
            raise ValueError(f"empty interval at coordinate {bad}: [{lo[bad]}, {up[bad]}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def is_unbounded(self) -> bool:
        return bool(np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper)))

    def shift(self, x) -> "Rectangle":
        """Rectangle translated by -x (the region for the centered variable)."""
        return Rectangle(self.lower - x, self.upper - x)

    def stack(self, other: "Rectangle") -> "Rectangle":
        return Rectangle(
            np.concatenate([self.lower, other.lower]),
            np.concatenate([self.upper, other.upper]),
        )

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    @staticmethod
    def unbounded(d: int) -> "Rectangle":
        return Rectangle(np.full(d, -np.inf), np.full(d, np.inf))


@dataclass(frozen=True)
class MvnParams:
    """Mean vector and SPD covariance of a multivariate normal."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.shape[0]}")
        scale = float(np.max(np.abs(cov))) if cov.size else 1.0
        if cov.size and np.max(np.abs(cov - cov.T)) > 1e-10 * max(scale, 1e-300):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def chol_pd(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding 1e-10*trace/d to the diagonal once on failure."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        d = cov.shape[0]
        jitter = 1e-10 * np.trace(cov) / d
        if jitter <= 0.0:
            raise
        return np.linalg.cholesky(cov + jitter * np.eye(d))


def cho_solve_lower(L, b):
    """Solve A x = b given the lower Cholesky factor L of A."""
    return cho_solve((L, True), b)


def mvn_logpdf(x, p: MvnParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != p.dim:
        raise ValueError(f"x has length {x.shape[0]}, expected {p.dim}")
    L = chol_pd(p.cov)
    w = solve_triangular(L, x - p.mean, lower=True)
    halflogdet = np.sum(np.log(np.diag(L)))
    return float(-0.5 * p.dim * np.log(2.0 * np.pi) - halflogdet - 0.5 * w @ w)


def sample_gaussian(mean, cov, ndraws: int, rng) -> np.ndarray:
    """Draws from N(mean, cov), tolerating exactly-zero rows/columns in cov."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    out = np.tile(mean, (ndraws, 1))
    active = np.diag(cov) > 0.0
    if np.any(active):
        L = chol_pd(cov[np.ix_(active, active)])
        k = int(np.count_nonzero(active))
        out[:, active] += rng.standard_normal((ndraws, k)) @ L.T
    return out


def _logdiffexp(a, b):
    """log(exp(a) - exp(b)) elementwise for a >= b; -inf where the gap vanishes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.full(np.broadcast_shapes(a.shape, b.shape), -np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        gap = b - a
        ok = (gap < 0.0) & np.isfinite(a)
        out = np.where(ok, a + np.log1p(-np.exp(np.where(ok, gap, -1.0))), out)
    return out


def log_interval_prob(alpha, beta):
    """log P(alpha < X < beta) for standard normal X, accurate in both tails.

    Intervals sitting in the upper tail are reflected so the CDF difference is
    always taken where the values are small.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    with np.errstate(invalid="ignore"):
        flip = alpha + beta > 0.0  # NaN from inf-inf compares False: keep side as is
    a = np.where(flip, -beta, alpha)
    b = np.where(flip, -alpha, beta)
    return _logdiffexp(log_ndtr(b), log_ndtr(a))


def _marginal_order(lower, upper, sd):
    """Coordinate permutation for integration: narrowest standardized interval first."""
    with np.errstate(invalid="ignore"):
        mass = ndtr(upper / sd) - ndtr(lower / sd)
    return np.argsort(mass, kind="stable")


def _cond_trunc_normal(a, b, u):
    """Inverse-CDF position u within the standard normal interval (a, b)."""
    pa = ndtr(a)
    pb = ndtr(b)
    arg = np.clip(pa + u * (pb - pa), 1e-300, 1.0 - 1e-16)
    return ndtri(arg)


def _sov_log_estimates(lower, upper, L, n_points, n_rand, rng):
    """Randomized-QMC log estimates of P(lower < L xi < upper), xi iid N(0,1).

    One estimate per independent scrambling; each integrates the separation of
    variables integrand over n_points Sobol points in d-1 dimensions.
    """
    d = L.shape[0]
    diag = np.diag(L)
    if d > 1:
        u = np.vstack([
            qmc.Sobol(d - 1, scramble=True, seed=rng).random(n_points)
            for _ in range(n_rand)
        ])
    else:
        u = np.zeros((n_rand, 0))
    npts = u.shape[0] // n_rand
    logw = np.zeros(u.shape[0])
    cond = np.zeros((u.shape[0], d))
    for i in range(d):
        a = (lower[i] - cond[:, i]) / diag[i]
        b = (upper[i] - cond[:, i]) / diag[i]
        logw += log_interval_prob(a, b)
        if i < d - 1:
            z = _cond_trunc_normal(a, b, u[:, i])
            cond[:, i + 1 :] += z[:, None] * L[i + 1 :, i][None, :]
    ests = np.empty(n_rand)
    for r in range(n_rand):
        block = logw[r * npts : (r + 1) * npts]
        m = np.max(block)
        ests[r] = m + np.log(np.mean(np.exp(block - m))) if np.isfinite(m) else -np.inf
    return ests


def _exact_1d_logprob(lower, upper, mean, var):
    sd = np.sqrt(var)
    return float(log_interval_prob((lower - mean) / sd, (upper - mean) / sd))


def _check_rect_args(rect, p, tol):
    if rect.dim != p.dim:
        raise ValueError(f"rectangle dim {rect.dim} does not match distribution dim {p.dim}")
    if tol <= 0.0:
        raise ValueError("tol must be positive")


def rect_logprob(
    rect: Rectangle,
    p: MvnParams,
    tol: float = 1e-3,
    rng=None,
    n_points: int = 256,
    n_rand: int = 8,
    max_points: int = 2**14,
):
    """Log of P(X in rect) for X ~ N(mean, cov) with a log-scale error estimate.

    Exact for d=1. For d >= 2 the Sobol sample size doubles until three
    standard errors across scramblings fall below ``tol`` (log scale) or
    ``max_points`` is reached. Returns ``(logprob, err)``.
    """
    _check_rect_args(rect, p, tol)
    if rect.is_unbounded():
        return 0.0, 0.0
    if p.dim == 1:
        return _exact_1d_logprob(rect.lower[0], rect.upper[0], p.mean[0], p.cov[0, 0]), 1e-15
    rng = np.random.default_rng(rng)
    lo = rect.lower - p.mean
    up = rect.upper - p.mean
    perm = _marginal_order(lo, up, np.sqrt(np.diag(p.cov)))
    L = chol_pd(p.cov[np.ix_(perm, perm)])
    npts = n_points
    while True:
        ests = _sov_log_estimates(lo[perm], up[perm], L, npts, n_rand, rng)
        if not np.any(np.isfinite(ests)):
            return -np.inf, np.inf
        m = np.max(ests)
        logp = m + np.log(np.mean(np.exp(ests - m)))
        err = 3.0 * np.std(ests) / np.sqrt(n_rand)
        if err <= tol or npts >= max_points:
            return float(logp), float(err)
        npts *= 2


def rect_prob(
    rect: Rectangle,
    p: MvnParams,
    tol: float = 1e-4,
    rng=None,
    n_points: int = 256,
    n_rand: int = 8,
    max_points: int = 2**14,
):
    """P(X in rect) with an absolute error estimate below ``tol`` when reachable.

    d=1 is computed exactly from the normal CDF; d >= 2 uses the randomized
    QMC scheme of :func:`rect_logprob`. Returns ``(prob, err_est)``.
    """
    _check_rect_args(rect, p, tol)
    if rect.is_unbounded():
        return 1.0, 0.0
    if p.dim == 1:
        lp = _exact_1d_logprob(rect.lower[0], rect.upper[0], p.mean[0], p.cov[0, 0])
        return float(np.exp(lp)), 1e-15
    rng = np.random.default_rng(rng)
    lo = rect.lower - p.mean
    up = rect.upper - p.mean
    perm = _marginal_order(lo, up, np.sqrt(np.diag(p.cov)))
    L = chol_pd(p.cov[np.ix_(perm, perm)])
    npts = n_points
    while True:
        ests = np.exp(_sov_log_estimates(lo[perm], up[perm], L, npts, n_rand, rng))
        prob = float(np.mean(ests))
        err = float(3.0 * np.std(ests) / np.sqrt(n_rand))
        if err <= tol or npts >= max_points:
            return prob, err
        npts *= 2


def rect_logprob_many(rect: Rectangle, means, cov, rng=None, n_points: int = 128, n_rand: int = 4):
    """Log rectangle probabilities for a batch of means sharing rect and cov.

    Serves the particle weights: thousands of shifted copies of one small
    Gaussian. QMC points are shared across the batch. Returns shape (S,).
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = rect.dim
    if means.shape[1] != d:
        raise ValueError("means must have one row per batch element, row length rect.dim")
    if d == 1:
        sd = np.sqrt(float(np.asarray(cov).reshape(())))
        return log_interval_prob(
            (rect.lower[0] - means[:, 0]) / sd, (rect.upper[0] - means[:, 0]) / sd
        )
    rng = np.random.default_rng(rng)
    L = chol_pd(np.asarray(cov, dtype=float))
    diag = np.diag(L)
    S = means.shape[0]
    lo = rect.lower[None, :] - means
    up = rect.upper[None, :] - means
    acc = None
    for _ in range(n_rand):
        u = qmc.Sobol(d - 1, scramble=True, seed=rng).random(n_points)
        npts = u.shape[0]
        logw = np.zeros((npts, S))
        cond = np.zeros((npts, S, d))
        for i in range(d):
            a = (lo[None, :, i] - cond[:, :, i]) / diag[i]
            b = (up[None, :, i] - cond[:, :, i]) / diag[i]
            logw += log_interval_prob(a, b)
            if i < d - 1:
                z = _cond_trunc_normal(a, b, u[:, i, None])
                cond[:, :, i + 1 :] += z[:, :, None] * L[i + 1 :, i][None, None, :]
        m = np.max(logw, axis=0)
        m = np.where(np.isfinite(m), m, 0.0)
        part = m + np.log(np.mean(np.exp(logw - m[None, :]), axis=0) + 1e-300)
        acc = part if acc is None else np.logaddexp(acc, part)
    return acc - np.log(n_rand)


def sov_prefix_paths(lower, upper, L, n_points: int = 256, n_rand: int = 8, rng=None):
    """Separation-of-variables paths through all but the last coordinate.

    For the triangular system L xi with per-coordinate intervals, samples
    conditional paths over coordinates 0..d-2 and returns

    - logw: per-path log product of the first d-1 interval probabilities,
    - mu_last: per-path conditional mean of the final coordinate,
    - sd_last: its conditional standard deviation (a scalar).

    The final coordinate's interval is ignored here; callers score any number
    of candidate cells against the returned conditionals. Coordinates are not
    reordered, so the caller controls which coordinate comes last.
    """
    d = L.shape[0]
    if d < 2:
        raise ValueError("need at least two coordinates")
    rng = np.random.default_rng(rng)
    diag = np.diag(L)
    u = np.vstack([
        qmc.Sobol(d - 1, scramble=True, seed=rng).random(n_points)
        for _ in range(n_rand)
    ])
    logw = np.zeros(u.shape[0])
    cond = np.zeros((u.shape[0], d))
    for i in range(d - 1):
        a = (lower[i] - cond[:, i]) / diag[i]
        b = (upper[i] - cond[:, i]) / diag[i]
        logw += log_interval_prob(a, b)
        z = _cond_trunc_normal(a, b, u[:, i])
        cond[:, i + 1 :] += z[:, None] * L[i + 1 :, i][None, :]
    return logw, cond[:, d - 1], float(diag[d - 1])


def sample_tn(lower, upper, mean, sd, rng):
    """Vectorized exact draws from N(mean, sd^2) restricted to (lower, upper).

    Inverse CDF after reflecting upper-tail intervals to the left tail; cells
    lying entirely beyond 6 sd fall back to one-sided exponential rejection.
    Raises on intervals of numerically zero mass.
    """
    lower, upper, mean, sd = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (lower, upper, mean, sd))
    )
    shape = lower.shape
    lower = np.atleast_1d(lower).ravel()
    upper = np.atleast_1d(upper).ravel()
    mean = np.atleast_1d(mean).ravel()
    sd = np.atleast_1d(sd).ravel()
    alpha = (lower - mean) / sd
    beta = (upper - mean) / sd
    with np.errstate(invalid="ignore"):
        flip = alpha + beta > 0.0
    a = np.where(flip, -beta, alpha)
    b = np.where(flip, -alpha, beta)
    logmass = _logdiffexp(log_ndtr(b), log_ndtr(a))
    if np.any(logmass < _LOG_MASS_FLOOR):
        k = int(np.argmin(logmass))
        raise ValueError(
            f"truncation interval [{lower[k]}, {upper[k]}] has numerically zero "
            f"mass under N({mean[k]}, {sd[k]}^2)"
        )
    x = np.empty_like(a)
    tail = b <= -6.0
    bulk = ~tail
    if np.any(bulk):
        u = rng.random(int(np.count_nonzero(bulk)))
        x[bulk] = _cond_trunc_normal(a[bulk], b[bulk], u)
    if np.any(tail):
        x[tail] = -_tail_rejection(-b[tail], -a[tail], rng)
    x = np.where(flip, -x, x)
    return np.clip(mean + sd * x, lower, upper).reshape(shape)


def _tail_rejection(lo, hi, rng):
    """Exponential-proposal rejection for standard normal on [lo, hi], lo >= 6."""
    out = np.empty_like(lo)
    todo = np.ones(lo.shape, dtype=bool)
    lam = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    while np.any(todo):
        k = int(np.count_nonzero(todo))
        draw = lo[todo] + rng.exponential(size=k) / lam[todo]
        accept = (draw <= hi[todo]) & (np.log(rng.random(k)) <= -0.5 * (draw - lam[todo]) ** 2)
        idx = np.flatnonzero(todo)[accept]
        out[idx] = draw[accept]
        todo[idx] = False
    return out


def sample_tn_1d(lower: float, upper: float, mean: float, sd: float, rng) -> float:
    """One exact draw from the univariate truncated normal on (lower, upper)."""
    if not lower < upper:
        raise ValueError(f"empty interval [{lower}, {upper}]")
    if sd <= 0.0:
        raise ValueError("sd must be positive")
    return float(sample_tn(lower, upper, mean, sd, rng))


def _feasible_start(lower, upper, mean, sd):
    """Deterministic interior point: midpoint after pulling infinite ends to mean +/- 6 sd."""
    lo = np.where(np.isinf(lower), np.minimum(mean - 6.0 * sd, upper - sd), lower)
    up = np.where(np.isinf(upper), np.maximum(mean + 6.0 * sd, lower + sd), upper)
    start = 0.5 * (lo + up)
    if not np.all((start > lower) & (start < upper)):
        raise ValueError("no feasible start point inside the rectangle")
    return start


class TmvnGibbsChain:
    """Coordinate-wise Gibbs chain targeting N(mean, cov) restricted to a rectangle.

    Runs ``nchains`` independent chains in lockstep so one numpy call updates a
    coordinate across all of them. Bounds may be shared (shape (d,)) or
    per-chain (shape (nchains, d)); the latter serves the particle filter,
    where every particle truncates the same Gaussian to a different box.
    Burn-in sweeps run before the first draw; afterwards the chain state is
    reused across consecutive draws.
    """

    def __init__(
        self,
        rect_or_bounds,
        p: MvnParams,
        nchains: int = 1,
        burnin: int = 50,
        thin: int = 1,
    ):
        if isinstance(rect_or_bounds, Rectangle):
            lower, upper = rect_or_bounds.lower, rect_or_bounds.upper
        else:
            lower, upper = rect_or_bounds
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.p = p
        self.d = p.dim
        self.nchains = nchains
        self.burnin = burnin
        self.thin = max(1, thin)
        prec = cho_solve((chol_pd(p.cov), True), np.eye(self.d))
        self._prec = prec
        self._cond_sd = 1.0 / np.sqrt(np.diag(prec))
        self.state = np.array(
            _feasible_start(
                np.broadcast_to(self.lower, (nchains, self.d)),
                np.broadcast_to(self.upper, (nchains, self.d)),
                p.mean,
                np.sqrt(np.diag(p.cov)),
            )
        )
        self._burned = False

    def _bounds(self, i):
        if self.lower.ndim == 1:
            return self.lower[i], self.upper[i]
        return self.lower[:, i], self.upper[:, i]

    def sweep(self, rng):
        prec = self._prec
        mean = self.p.mean
        delta = self.state - mean
        for i in range(self.d):
            r = delta @ prec[:, i] - prec[i, i] * delta[:, i]
            m = mean[i] - r / prec[i, i]
            lo, up = self._bounds(i)
            xi = sample_tn(lo, up, m, self._cond_sd[i], rng)
            self.state[:, i] = xi
            delta[:, i] = xi - mean[i]

    def draw(self, rng) -> np.ndarray:
        """One state per chain after burn-in or ``thin`` fresh sweeps; shape (nchains, d)."""
        if not self._burned:
            for _ in range(self.burnin):
                self.sweep(rng)
            self._burned = True
        else:
            for _ in range(self.thin):
                self.sweep(rng)
        assert np.all(self.state >= np.atleast_2d(self.lower)) and np.all(
            self.state <= np.atleast_2d(self.upper)
        )
        return self.state.copy()

    def draw_n(self, ndraws: int, rng) -> np.ndarray:
        """ndraws states cycling over the chains; shape (ndraws, d)."""
        out = np.empty((ndraws, self.d))
        got = 0
        while got < ndraws:
            batch = self.draw(rng)
            take = min(self.nchains, ndraws - got)
            out[got : got + take] = batch[:take]
            got += take
        return out


def sample_tmvn(rect: Rectangle, p: MvnParams, sweeps: int = 50, rng=None) -> np.ndarray:
    """One approximate draw from N(mean, cov) restricted to rect via Gibbs sweeps."""
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    rng = np.random.default_rng(rng)
    return TmvnGibbsChain(rect, p, nchains=1, burnin=sweeps).draw(rng)[0]
