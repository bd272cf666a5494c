"""Latent Gaussian dynamic linear models.

A system is the quadruple {F_t, G_t, V_t, W_t} with initial moments
(a0, R0) for the state at time zero:

    z_t     = F_t theta_t + v_t,      v_t ~ N(0, V_t)
    theta_t = G_t theta_{t-1} + w_t,  w_t ~ N(0, W_t)

Matrices are supplied as functions of t (1-based) so time-varying
designs work; the canned constructors below wrap constants.  The joint
prior over the stacked state theta_{1:t} has mean blocks G_{1:t} a0,
diagonal blocks R_t from the usual recursion, and lower cross blocks
Sigma[t, q] = G_{q+1:t} R_q.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mvn import sample_gaussian

__all__ = [
    "DlmSystem",
    "JointPrior",
    "build_joint_prior",
    "simulate_latent",
    "make_local_level",
    "make_linear_growth_sutse",
    "make_fourier_seasonal",
]


@dataclass(frozen=True)
class DlmSystem:
    """State space system over a fixed horizon T."""

    T: int
    n: int
    p: int
    F: Callable[[int], np.ndarray]
    G: Callable[[int], np.ndarray]
    V: Callable[[int], np.ndarray]
    W: Callable[[int], np.ndarray]
    a0: np.ndarray
    R0: np.ndarray

    def __post_init__(self):
        for name in ("T", "n", "p"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        R0 = np.atleast_2d(np.asarray(self.R0, dtype=float))
        if a0.shape != (self.p,):
            raise ValueError(f"a0 has shape {a0.shape}, expected ({self.p},)")
        if R0.shape != (self.p, self.p):
            raise ValueError(f"R0 has shape {R0.shape}, expected ({self.p}, {self.p})")
        if not np.allclose(R0, R0.T):
            raise ValueError("R0 must be symmetric")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "R0", 0.5 * (R0 + R0.T))
        # fail fast on an inconsistent system rather than mid-recursion
        self.F_at(1), self.G_at(1), self.V_at(1), self.W_at(1)

    def _mat(self, fn, t, shape, name):
        m = np.atleast_2d(np.asarray(fn(t), dtype=float))
        if m.shape != shape:
            raise ValueError(f"{name}({t}) has shape {m.shape}, expected {shape}")
        return m

    def F_at(self, t):
        return self._mat(self.F, t, (self.n, self.p), "F")

    def G_at(self, t):
        return self._mat(self.G, t, (self.p, self.p), "G")

    def V_at(self, t):
        return self._mat(self.V, t, (self.n, self.n), "V")

    def W_at(self, t):
        return self._mat(self.W, t, (self.p, self.p), "W")


@dataclass(frozen=True)
class JointPrior:
    """Stacked prior moments of theta_{1:t} plus block-diagonal F and V."""

    mu_theta: np.ndarray
    Sigma_theta: np.ndarray
    Fcal: np.ndarray
    Vcal: np.ndarray


def build_joint_prior(sys, upto):
    """Joint prior moments of the states through time ``upto``.

    Parameters
    ----------
    sys : DlmSystem
    upto : int
        Last time index to include, between 1 and sys.T.
    """
    if int(upto) != upto or not 1 <= upto <= sys.T:
        raise ValueError(f"upto must lie in 1..{sys.T}, got {upto!r}")
    upto = int(upto)
    p, n = sys.p, sys.n
    G_list = [sys.G_at(t) for t in range(1, upto + 1)]

    mu = np.zeros(p * upto)
    Fcal = np.zeros((n * upto, p * upto))
    Vcal = np.zeros((n * upto, n * upto))
    R_blocks = []
    x = sys.a0
    R = sys.R0
    for t in range(1, upto + 1):
        G = G_list[t - 1]
        x = G @ x
        R = G @ R @ G.T + sys.W_at(t)
        R = 0.5 * (R + R.T)
        R_blocks.append(R)
        sl_p = slice((t - 1) * p, t * p)
        sl_n = slice((t - 1) * n, t * n)
        mu[sl_p] = x
        Fcal[sl_n, sl_p] = sys.F_at(t)
        Vcal[sl_n, sl_n] = sys.V_at(t)

    Sigma = np.zeros((p * upto, p * upto))
    for q in range(1, upto + 1):
        sq = slice((q - 1) * p, q * p)
        Sigma[sq, sq] = R_blocks[q - 1]
        B = R_blocks[q - 1]
        for t in range(q + 1, upto + 1):
            B = G_list[t - 1] @ B
            st = slice((t - 1) * p, t * p)
            Sigma[st, sq] = B
            Sigma[sq, st] = B.T
    return JointPrior(mu, Sigma, Fcal, Vcal)


def simulate_latent(sys, rng):
    """Draw one path (states, z) from the system; shapes (p, T) and (n, T)."""
    states = np.zeros((sys.p, sys.T))
    z = np.zeros((sys.n, sys.T))
    theta = sample_gaussian(sys.a0, sys.R0, 1, rng)[0]
    for t in range(1, sys.T + 1):
        theta = sample_gaussian(sys.G_at(t) @ theta, sys.W_at(t), 1, rng)[0]
        states[:, t - 1] = theta
        z[:, t - 1] = sample_gaussian(sys.F_at(t) @ theta, sys.V_at(t), 1, rng)[0]
    return states, z


def _cov_matrix(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
        return float(v) * np.eye(n)
    v = np.atleast_2d(v)
    if v.shape != (n, n):
        raise ValueError(f"{name} has shape {v.shape}, expected ({n}, {n})")
    if not np.allclose(v, v.T):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (v + v.T)


def _state_vector(a, p, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(p, float(a))
    a = np.atleast_1d(a)
    if a.shape != (p,):
        raise ValueError(f"{name} has shape {a.shape}, expected ({p},)")
    return a


def make_local_level(T, n=1, v=1.0, w=1.0, a0=0.0, r0=1.0):
    """Random-walk mean model: F = G = I_n, scalar arguments spread to I."""
    V = _cov_matrix(v, n, "v")
    W = _cov_matrix(w, n, "w")
    R0 = _cov_matrix(r0, n, "r0")
    a = _state_vector(a0, n, "a0")
    I = np.eye(n)
    return DlmSystem(T, n, n, lambda t: I, lambda t: I, lambda t: V, lambda t: W, a, R0)


def make_linear_growth_sutse(T, n, V, Wmu, Wbeta, a0=0.0, R0=1.0):
    """Linear growth with coupled series: level and slope blocks per series.

    The state stacks the n levels then the n slopes, so

        G = [[I, I],
             [0, I]],    F = [I, 0],    W = blockdiag(Wmu, Wbeta),

    with V, Wmu, Wbeta each (n, n) covariances coupling the series (or
    scalars spread along the diagonal).
    """
    p = 2 * n
    Vm = _cov_matrix(V, n, "V")
    Wm = _cov_matrix(Wmu, n, "Wmu")
    Wb = _cov_matrix(Wbeta, n, "Wbeta")
    I = np.eye(n)
    Z = np.zeros((n, n))
    G = np.block([[I, I], [Z, I]])
    F = np.hstack([I, Z])
    W = np.block([[Wm, Z], [Z, Wb]])
    a = _state_vector(a0, p, "a0")
    R = _cov_matrix(R0, p, "R0")
    return DlmSystem(T, n, p, lambda t: F, lambda t: G, lambda t: Vm, lambda t: W, a, R)


def make_fourier_seasonal(T, period, harmonics, v=1.0, w_gamma=0.0, a0=0.0, r0=1.0):
    """Univariate trigonometric seasonal model.

    Each harmonic j contributes a planar rotation by lambda_j =
    2 pi j / period and the observation picks the first coordinate of
    every plane.  w_gamma defaults to 0, freezing the seasonal pattern.
    """
    if int(harmonics) != harmonics or harmonics < 1:
        raise ValueError(f"harmonics must be a positive integer, got {harmonics!r}")
    harmonics = int(harmonics)
    if period <= 0:
        raise ValueError(f"period must be positive, got {period!r}")
    if harmonics > int(np.floor(period / 2)):
        raise ValueError(
            f"harmonics={harmonics} exceeds floor(period/2)={int(np.floor(period / 2))}"
        )
    p = 2 * harmonics
    blocks = []
    for j in range(1, harmonics + 1):
        lam = 2.0 * np.pi * j / period
        c, s = np.cos(lam), np.sin(lam)
        blocks.append(np.array([[c, s], [-s, c]]))
    G = np.zeros((p, p))
    for j, b in enumerate(blocks):
        G[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = b
    F = np.zeros((1, p))
    F[0, ::2] = 1.0
    Vm = _cov_matrix(v, 1, "v")
    Wm = _cov_matrix(w_gamma, p, "w_gamma")
    a = _state_vector(a0, p, "a0")
    R = _cov_matrix(r0, p, "r0")
    return DlmSystem(T, 1, p, lambda t: F, lambda t: G, lambda t: Vm, lambda t: Wm, a, R)
