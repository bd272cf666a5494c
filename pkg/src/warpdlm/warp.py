"""Warping between counts and the latent Gaussian scale.

A count vector y is tied to a latent Gaussian vector z through
y = h(g^{-1}(z)), where h is the floor operator with a zero
modification (everything below 1 on the data scale rounds to 0) and an
optional upper bound, and g is a strictly increasing transformation
applied coordinate by coordinate.  Everything downstream only needs the
z-scale threshold ladder t_j = g(j): observing y = j pins z into
[t_j, t_{j+1}), the zero cell is (-inf, t_1), and a bounded support
turns the top cell into [t_ymax, inf).

The parametric transforms are anchored so that g(1) = 0, which makes
the zero cell read (-inf, 0) for every kind.  The log already does this
on its own; identity and sqrt are replaced below y* = 2 by the straight
line through (1, 0) and (2, g(2)), which keeps them strictly increasing
on the whole line.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtri

from .mvn import Rectangle

__all__ = [
    "RoundingOperator",
    "Transformation",
    "Warp",
    "fit_nonparametric",
    "count_to_rect",
    "latent_to_count",
    "latent_to_count_many",
    "transform_to_text",
    "transform_from_text",
]

_KINDS = ("identity", "log", "sqrt", "nonparametric")
_SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class RoundingOperator:
    """Floor with zero modification; ``y_max`` bounds the support if set."""

    y_max: int | None = None

    def __post_init__(self):
        if self.y_max is None:
            return
        y_max = self.y_max
        if int(y_max) != y_max or y_max < 1:
            raise ValueError(f"y_max must be a positive integer, got {y_max!r}")
        object.__setattr__(self, "y_max", int(y_max))


class Transformation:
    """Strictly increasing map g from the data scale to the latent z scale.

    Parametric kinds ("identity", "log", "sqrt") take no further data.
    The "nonparametric" kind carries a table of knots (a_j, g(a_j)) on
    which a monotone piecewise cubic is built, with linear extrapolation
    past either end using the secant slope of the two outermost knots.
    """

    def __init__(self, kind, knots=None, support_max=None):
        if kind not in _KINDS:
            raise ValueError(f"unknown transformation kind {kind!r}")
        self.kind = kind
        if support_max is not None:
            if int(support_max) != support_max or support_max < 1:
                raise ValueError(f"support_max must be a positive integer, got {support_max!r}")
            support_max = int(support_max)
        self.support_max = support_max
        if kind != "nonparametric":
            if knots is not None:
                raise ValueError(f"{kind} transform takes no knots")
            self.knots = None
            return
        if knots is None:
            raise ValueError("nonparametric transform needs a knot table")
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
            raise ValueError("knots must be an (m, 2) array with m >= 2")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")
        x, z = knots[:, 0], knots[:, 1]
        if np.any(np.diff(x) <= 0.0) or np.any(np.diff(z) <= 0.0):
            raise ValueError("knots must be strictly increasing in both columns")
        self.knots = knots
        self._kx = x
        self._kz = z
        self._pchip = PchipInterpolator(x, z, extrapolate=False)
        self._slope_lo = (z[1] - z[0]) / (x[1] - x[0])
        self._slope_hi = (z[-1] - z[-2]) / (x[-1] - x[-2])

    def __repr__(self):
        if self.kind == "nonparametric":
            return f"Transformation('nonparametric', {self.knots.shape[0]} knots)"
        return f"Transformation({self.kind!r})"

    def g(self, ystar):
        """Evaluate the transform at points on the data scale."""
        x = np.asarray(ystar, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if self.kind == "identity":
            out = np.where(x >= 2.0, x, 2.0 * (x - 1.0))
        elif self.kind == "log":
            if np.any(x <= 0.0):
                raise ValueError("log transform is only defined for positive values")
            out = np.log(x)
        elif self.kind == "sqrt":
            out = np.empty_like(x)
            hi = x >= 2.0
            out[hi] = np.sqrt(x[hi])
            out[~hi] = _SQRT2 * (x[~hi] - 1.0)
        else:
            out = np.empty_like(x)
            lo = x < self._kx[0]
            hi = x > self._kx[-1]
            mid = ~(lo | hi)
            out[lo] = self._kz[0] + self._slope_lo * (x[lo] - self._kx[0])
            out[hi] = self._kz[-1] + self._slope_hi * (x[hi] - self._kx[-1])
            out[mid] = self._pchip(x[mid])
        return float(out[0]) if scalar else out

    def g_inv(self, z):
        """Inverse of :meth:`g`."""
        zz = np.asarray(z, dtype=float)
        scalar = zz.ndim == 0
        zz = np.atleast_1d(zz)
        if self.kind == "identity":
            out = np.where(zz >= 2.0, zz, zz / 2.0 + 1.0)
        elif self.kind == "log":
            out = np.exp(zz)
        elif self.kind == "sqrt":
            out = np.empty_like(zz)
            hi = zz >= _SQRT2
            out[hi] = zz[hi] ** 2
            out[~hi] = zz[~hi] / _SQRT2 + 1.0
        else:
            out = np.array([self._inv_one(v) for v in zz])
        return float(out[0]) if scalar else out

    def _inv_one(self, z):
        if z <= self._kz[0]:
            return self._kx[0] + (z - self._kz[0]) / self._slope_lo
        if z >= self._kz[-1]:
            return self._kx[-1] + (z - self._kz[-1]) / self._slope_hi
        roots = self._pchip.solve(z, extrapolate=False)
        if roots.size == 0:
            # fell between pieces through rounding; nudge via the knot grid
            k = int(np.searchsorted(self._kz, z))
            return float(self._kx[max(k - 1, 0)])
        return float(roots[0])

    def thresholds(self, j_hi):
        """Ladder t_1 .. t_{j_hi} of cell boundaries on the z scale."""
        if j_hi < 1:
            raise ValueError("j_hi must be at least 1")
        return self.g(np.arange(1, j_hi + 1, dtype=float))


@dataclass(frozen=True)
class Warp:
    """A rounding operator plus one transformation per series coordinate."""

    rounding: RoundingOperator
    transforms: tuple

    def __post_init__(self):
        tr = self.transforms
        if isinstance(tr, Transformation):
            tr = (tr,)
        else:
            tr = tuple(tr)
        if not tr:
            raise ValueError("need at least one transformation")
        for t in tr:
            if not isinstance(t, Transformation):
                raise TypeError(f"expected Transformation, got {type(t).__name__}")
        object.__setattr__(self, "transforms", tr)

    @property
    def n(self):
        return len(self.transforms)


def fit_nonparametric(y, support_max=None):
    """Fit the data-driven transform of a single count series.

    Knots are placed at a_{j+1} = j + 1 for each distinct observed count
    j, with latent value ybar + s_y * Phi^{-1}(Ftilde(j)) where Ftilde is
    the empirical CDF rescaled by T + 1 so it never reaches one.
    """
    y = np.asarray(y, dtype=float)
    y = y[~np.isnan(y)]
    if y.size < 2:
        raise ValueError("need at least two observed counts")
    if np.any(y < 0) or np.any(y != np.floor(y)) or not np.all(np.isfinite(y)):
        raise ValueError("counts must be non-negative integers")
    distinct = np.unique(y)
    if distinct.size < 2:
        raise ValueError("series is constant; transform would be degenerate")
    m = int(distinct[-1])
    if support_max is None:
        support_max = int(min(4 * m, 10_000))
    if m > support_max:
        raise ValueError(f"observed count {m} exceeds support_max {support_max}")
    T = y.size
    ybar = float(np.mean(y))
    sy = float(np.std(y, ddof=1))
    cdf = np.array([np.count_nonzero(y <= c) for c in distinct], dtype=float) / (T + 1)
    gz = ybar + sy * ndtri(cdf)
    knots = np.column_stack([distinct + 1.0, gz])
    return Transformation("nonparametric", knots=knots, support_max=support_max)


def count_to_rect(warp, y):
    """Latent rectangle {z : h(g^{-1}(z)) = y}; NaN coordinates are missing."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != warp.n:
        raise ValueError(f"count vector has {y.size} coordinates, warp has {warp.n}")
    y_max = warp.rounding.y_max
    lower = np.empty(warp.n)
    upper = np.empty(warp.n)
    for i, (tr, yi) in enumerate(zip(warp.transforms, y)):
        if np.isnan(yi):
            lower[i], upper[i] = -np.inf, np.inf
            continue
        if not np.isfinite(yi) or yi < 0 or yi != np.floor(yi):
            raise ValueError(f"count must be a non-negative integer, got {yi!r}")
        j = int(yi)
        if y_max is not None and j > y_max:
            raise ValueError(f"count {j} exceeds the support bound {y_max}")
        if j == 0:
            lower[i] = -np.inf
            upper[i] = tr.g(1.0)
        elif y_max is not None and j == y_max:
            lower[i] = tr.g(float(j))
            upper[i] = np.inf
        else:
            lower[i] = tr.g(float(j))
            upper[i] = tr.g(j + 1.0)
    return Rectangle(lower, upper)


def latent_to_count(warp, z):
    """Map a latent vector through h(g^{-1}(.)) to a count vector."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != warp.n:
        raise ValueError(f"latent vector has {z.size} coordinates, warp has {warp.n}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent values must be finite")
    y_max = warp.rounding.y_max
    out = np.empty(warp.n, dtype=np.int64)
    for i, (tr, zi) in enumerate(zip(warp.transforms, z)):
        out[i] = _cell_index(tr, float(zi), y_max)
    return out


def latent_to_count_many(warp, z):
    """Vectorized latent_to_count over the leading axes of z (..., n).

    Builds each coordinate's threshold ladder once and bins by
    searchsorted, which lands on the same half-open cells as the
    scalar walk in latent_to_count.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != warp.n:
        raise ValueError(f"last axis has {z.shape[-1]} coordinates, warp has {warp.n}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent values must be finite")
    y_max = warp.rounding.y_max
    out = np.empty(z.shape, dtype=np.int64)
    for i, tr in enumerate(warp.transforms):
        zi = z[..., i]
        if y_max is not None:
            j_hi = y_max
        else:
            top = float(tr.g_inv(zi.max())) if zi.size else 1.0
            j_hi = max(1, int(np.ceil(top)) + 1)
        ladder = tr.thresholds(j_hi)
        counts = np.searchsorted(ladder, zi, side="right")
        if y_max is not None:
            counts = np.minimum(counts, y_max)
        out[..., i] = counts
    return out


def _cell_index(tr, z, y_max):
    if z < tr.g(1.0):
        return 0
    if y_max is not None and z >= tr.g(float(y_max)):
        return y_max
    ystar = tr.g_inv(z)
    if not np.isfinite(ystar):
        raise ValueError(f"latent value {z} maps beyond any representable count")
    j = max(1, int(np.floor(ystar)))
    # g_inv is float work; settle boundary cases against exact thresholds
    while j > 1 and z < tr.g(float(j)):
        j -= 1
    while z >= tr.g(j + 1.0):
        j += 1
    return j


def transform_to_text(tr):
    """Serialize a transformation to a small text table."""
    lines = ["# transform table v1", f"kind {tr.kind}"]
    if tr.support_max is not None:
        lines.append(f"support_max {tr.support_max}")
    if tr.kind == "nonparametric":
        for x, z in tr.knots:
            lines.append(f"{x:.17g} {z:.17g}")
    return "\n".join(lines) + "\n"


def transform_from_text(text):
    """Rebuild a transformation from :func:`transform_to_text` output."""
    kind = None
    support_max = None
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "kind":
            kind = parts[1]
        elif parts[0] == "support_max":
            support_max = int(parts[1])
        else:
            if len(parts) != 2:
                raise ValueError(f"bad knot row: {raw!r}")
            rows.append((float(parts[0]), float(parts[1])))
    if kind is None:
        raise ValueError("transform table has no kind line")
    knots = np.array(rows) if rows else None
    return Transformation(kind, knots=knots, support_max=support_max)
