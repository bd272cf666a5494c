"""Selection normal distributions.

The law of theta given that a jointly Gaussian z landed in a rectangle
C.  Six parameters: the marginal moments of z and theta, the cross
covariance, and the selection rectangle.  The family is closed under
affine maps of theta and under marginalization, and it admits an exact
constructive sampler: draw the truncated Gaussian part first, then add
independent Gaussian residual noise and the regression term.

A plain Gaussian is the degenerate member with no selection
coordinates; it is represented here by d1 = 0 and an empty rectangle.
"""

from dataclasses import InitVar, dataclass

import numpy as np
from scipy.linalg import cho_solve

from .mvn import (
    _LOG_MASS_FLOOR,
    MvnParams,
    Rectangle,
    TmvnGibbsChain,
    chol_pd,
    mvn_logpdf,
    rect_logprob,
    sample_gaussian,
)

__all__ = [
    "SelectionNormal",
    "slctn_logpdf",
    "slctn_sample",
    "slctn_sample_many",
    "slctn_affine",
    "slctn_marginal",
    "slctn_moments_mc",
]

_DEFAULT_CHAINS = 256
_BURNIN = 50
_THIN = 2


@dataclass(frozen=True)
class SelectionNormal:
    """Parameters (mu_z, mu_theta, Sigma_z, Sigma_theta, Sigma_ztheta, C).

    Sigma_ztheta has shape (d1, d2).  Pass validate=False to skip the
    joint positive-definiteness check when the caller has already
    established it (the sequential filter builds thousands of these).
    """

    mu_z: np.ndarray
    mu_theta: np.ndarray
    Sigma_z: np.ndarray
    Sigma_theta: np.ndarray
    Sigma_ztheta: np.ndarray
    C: Rectangle
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        mu_z = np.asarray(self.mu_z, dtype=float).reshape(-1)
        mu_theta = np.asarray(self.mu_theta, dtype=float).reshape(-1)
        d1, d2 = mu_z.size, mu_theta.size
        if d2 < 1:
            raise ValueError("theta block must have at least one coordinate")
        Sigma_z = np.asarray(self.Sigma_z, dtype=float).reshape(d1, d1)
        Sigma_theta = np.asarray(self.Sigma_theta, dtype=float).reshape(d2, d2)
        Sigma_ztheta = np.asarray(self.Sigma_ztheta, dtype=float).reshape(d1, d2)
        C = self.C
        if C is None and d1 == 0:
            C = Rectangle.unbounded(0)
        if not isinstance(C, Rectangle):
            raise TypeError("C must be a Rectangle")
        if C.dim != d1:
            raise ValueError(f"C has dimension {C.dim}, expected {d1}")
        if validate:
            if not np.allclose(Sigma_z, Sigma_z.T, atol=1e-10 * (1 + np.abs(Sigma_z).max(initial=0.0))):
                raise ValueError("Sigma_z must be symmetric")
            if not np.allclose(Sigma_theta, Sigma_theta.T, atol=1e-10 * (1 + np.abs(Sigma_theta).max())):
                raise ValueError("Sigma_theta must be symmetric")
            joint = np.block([[Sigma_z, Sigma_ztheta], [Sigma_ztheta.T, Sigma_theta]])
            chol_pd(joint)  # raises if not PD up to jitter
        object.__setattr__(self, "mu_z", mu_z)
        object.__setattr__(self, "mu_theta", mu_theta)
        object.__setattr__(self, "Sigma_z", 0.5 * (Sigma_z + Sigma_z.T))
        object.__setattr__(self, "Sigma_theta", 0.5 * (Sigma_theta + Sigma_theta.T))
        object.__setattr__(self, "Sigma_ztheta", Sigma_ztheta)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "_cache", {})

    @property
    def d1(self):
        return self.mu_z.size

    @property
    def d2(self):
        return self.mu_theta.size

    @classmethod
    def gaussian(cls, mu_theta, Sigma_theta):
        """The no-selection member N(mu_theta, Sigma_theta)."""
        mu_theta = np.asarray(mu_theta, dtype=float).reshape(-1)
        d2 = mu_theta.size
        return cls(
            np.empty(0), mu_theta, np.empty((0, 0)), Sigma_theta,
            np.empty((0, d2)), Rectangle.unbounded(0),
        )


def _prep(sn):
    """Factorizations shared by sampling and density work, cached on sn."""
    cache = sn._cache
    if "prep" not in cache:
        Lz = chol_pd(sn.Sigma_z)
        M = cho_solve((Lz, True), sn.Sigma_ztheta)  # Sigma_z^{-1} Sigma_ztheta
        cov_v1 = sn.Sigma_theta - sn.Sigma_ztheta.T @ M
        cov_v1 = 0.5 * (cov_v1 + cov_v1.T)
        cache["prep"] = (Lz, M, cov_v1, sn.C.shift(sn.mu_z))
    return cache["prep"]


def _chain(sn, nchains):
    cache = sn._cache
    key = ("chain", nchains)
    if key not in cache:
        _, _, _, rect0 = _prep(sn)
        p0 = MvnParams(np.zeros(sn.d1), sn.Sigma_z)
        cache[key] = TmvnGibbsChain(rect0, p0, nchains=nchains, burnin=_BURNIN, thin=_THIN)
    return cache[key]


def slctn_logpdf(sn, theta, tol=1e-3):
    """Log density at theta.

    The density is the Gaussian factor for theta times the ratio of two
    rectangle probabilities; both are evaluated to the requested
    tolerance (exactly when d1 = 1).
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != sn.d2:
        raise ValueError(f"theta has {theta.size} coordinates, expected {sn.d2}")
    base = mvn_logpdf(theta, MvnParams(sn.mu_theta, sn.Sigma_theta))
    if sn.d1 == 0:
        return float(base)
    denom, _ = rect_logprob(sn.C, MvnParams(sn.mu_z, sn.Sigma_z), tol=tol)
    if denom < _LOG_MASS_FLOOR:
        raise ValueError("selection event has numerically zero mass")
    Lt = chol_pd(sn.Sigma_theta)
    u = cho_solve((Lt, True), theta - sn.mu_theta)
    cond_mean = sn.mu_z + sn.Sigma_ztheta @ u
    cond_cov = sn.Sigma_z - sn.Sigma_ztheta @ cho_solve((Lt, True), sn.Sigma_ztheta.T)
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    numer, _ = rect_logprob(sn.C, MvnParams(cond_mean, cond_cov), tol=tol)
    return float(base + numer - denom)


def slctn_sample_many(sn, ndraws, rng, nchains=None):
    """Draw ndraws samples, shape (ndraws, d2).

    The truncated Gaussian part runs on a bank of coordinate-wise
    chains persisted on sn, so consecutive calls skip the burn-in.
    """
    if ndraws < 1:
        raise ValueError("ndraws must be at least 1")
    if rng is None:
        rng = np.random.default_rng()
    if sn.d1 == 0:
        return sample_gaussian(sn.mu_theta, sn.Sigma_theta, ndraws, rng)
    _, M, cov_v1, _ = _prep(sn)
    if nchains is None:
        nchains = min(ndraws, _DEFAULT_CHAINS)
    v0 = _chain(sn, nchains).draw_n(ndraws, rng)
    v1 = sample_gaussian(np.zeros(sn.d2), cov_v1, ndraws, rng)
    return sn.mu_theta[None, :] + v1 + v0 @ M


def slctn_sample(sn, rng):
    """One draw, shape (d2,)."""
    return slctn_sample_many(sn, 1, rng, nchains=1)[0]


def slctn_affine(sn, A, mu_a=None, Sigma_a=None):
    """Law of A theta + a with a ~ N(mu_a, Sigma_a) independent."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    q = A.shape[0]
    if A.shape[1] != sn.d2:
        raise ValueError(f"A has {A.shape[1]} columns, expected {sn.d2}")
    mu_a = np.zeros(q) if mu_a is None else np.asarray(mu_a, dtype=float).reshape(q)
    Sigma_a = np.zeros((q, q)) if Sigma_a is None else np.asarray(Sigma_a, dtype=float).reshape(q, q)
    return SelectionNormal(
        sn.mu_z,
        A @ sn.mu_theta + mu_a,
        sn.Sigma_z,
        A @ sn.Sigma_theta @ A.T + Sigma_a,
        sn.Sigma_ztheta @ A.T,
        sn.C,
    )


def slctn_marginal(sn, block):
    """Marginal over a subset of theta coordinates; z parameters stay."""
    idx = np.arange(sn.d2)[block] if isinstance(block, slice) else np.asarray(block, dtype=int)
    idx = np.atleast_1d(idx)
    if idx.size == 0:
        raise ValueError("empty coordinate block")
    if np.any(idx < 0) or np.any(idx >= sn.d2):
        raise ValueError(f"block indices must lie in 0..{sn.d2 - 1}")
    return SelectionNormal(
        sn.mu_z,
        sn.mu_theta[idx],
        sn.Sigma_z,
        sn.Sigma_theta[np.ix_(idx, idx)],
        sn.Sigma_ztheta[:, idx],
        sn.C,
        validate=False,
    )


def slctn_moments_mc(sn, ndraws, rng):
    """Monte Carlo mean, covariance, and per-coordinate standard errors.

    With a single draw the standard errors come back NaN to flag that
    they carry no information.
    """
    draws = slctn_sample_many(sn, ndraws, rng)
    mean = draws.mean(axis=0)
    if ndraws == 1:
        nan_cov = np.full((sn.d2, sn.d2), np.nan)
        return mean, nan_cov, np.full(sn.d2, np.nan)
    cov = np.cov(draws, rowvar=False).reshape(sn.d2, sn.d2)
    mc_se = draws.std(axis=0, ddof=1) / np.sqrt(ndraws)
    return mean, cov, mc_se


def _log_mgf(sn, s, tol=1e-4):
    """Log moment generating function, for moment checks in tests only."""
    s = np.asarray(s, dtype=float).reshape(sn.d2)
    quad = float(s @ sn.mu_theta + 0.5 * s @ sn.Sigma_theta @ s)
    if sn.d1 == 0:
        return quad
    shifted = MvnParams(sn.mu_z + sn.Sigma_ztheta @ s, sn.Sigma_z)
    num, _ = rect_logprob(sn.C, shifted, tol=tol)
    den, _ = rect_logprob(sn.C, MvnParams(sn.mu_z, sn.Sigma_z), tol=tol)
    return quad + num - den
