"""Space-filling designs and quantization of the uncertain-input law."""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist
from scipy.stats import qmc

SOBOL_MAX_DIM = 21201


class UnsupportedDimensionError(ValueError):
    pass


class DistributionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple
    upper: tuple
    names: tuple = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("box bounds must satisfy lower < upper component-wise")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"u{i + 1}" for i in range(lo.size)))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    @property
    def widths(self):
        return self.hi - self.lo

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def from_unit(self, unit):
        return self.lo + np.asarray(unit) * self.widths

    def uniform(self, n, rng):
        return self.from_unit(rng.uniform(size=(n, self.dim)))

    def product(self, other):
        return BoxDomain(self.lower + other.lower, self.upper + other.upper, self.names + other.names)


@dataclass
class WeightedSGrid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != self.points.shape[0]:
            raise ValueError("one weight per grid point is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("grid weights must be nonnegative and sum to one")

    def __len__(self):
        return self.points.shape[0]

    def average(self, values):
        return np.tensordot(np.asarray(values), self.weights, axes=([-1], [0]))

    def subsample(self, m, rng):
        idx = rng.choice(len(self), size=m, replace=False)
        w = self.weights[idx]
        return WeightedSGrid(self.points[idx], w / w.sum())


def latin_hypercube(n, d, rng):
    """Plain LHS in [0,1]^d: one jittered point per stratum per dimension."""
    perms = np.argsort(rng.uniform(size=(d, n)), axis=1).T
    return (perms + rng.uniform(size=(n, d))) / n


def maximin_lhs(n, domain, trials, rng):
    """Best of ``trials`` Latin hypercubes under the maximin criterion.

    Distances are measured in the unit cube so that dimensions with large
    physical ranges do not dominate.
    """
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be positive")
    best, best_dist = None, -np.inf
    for _ in range(trials):
        cand = latin_hypercube(n, domain.dim, rng)
        dist = pdist(cand).min() if n > 1 else 0.0
        if dist > best_dist:
            best, best_dist = cand, dist
    return domain.from_unit(best)


def sobol_points(m, d):
    """First m points of the unscrambled Sobol sequence, skipping index 0."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    if d > SOBOL_MAX_DIM:
        raise UnsupportedDimensionError(f"Sobol direction numbers support at most {SOBOL_MAX_DIM} dimensions")
    eng = qmc.Sobol(d, scramble=False)
    eng.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return eng.random(m)


# ---------------------------------------------------------------------------
# Marginal inverse CDFs


def uniform_icdf(a, b):
    return lambda u: a + (b - a) * np.asarray(u)


def arcsine_icdf(c, d):
    """Beta(1/2, 1/2) rescaled to [c, d]."""
    return lambda u: c + (d - c) * np.sin(0.5 * math.pi * np.asarray(u)) ** 2


def beta_icdf(a, b, lo, hi):
    dist = stats.beta(a, b)
    return lambda u: lo + (hi - lo) * dist.ppf(u)


def truncnorm_icdf(mean, var, lo, hi):
    sd = math.sqrt(var)
    dist = stats.truncnorm((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd)
    return lambda u: dist.ppf(u)


def quantize_ps(unit_points, marginals, domain=None):
    """Map unit-cube points coordinate-wise through inverse CDFs and give
    them equal weights."""
    unit = np.atleast_2d(np.asarray(unit_points, dtype=float))
    if unit.shape[1] != len(marginals):
        raise ValueError("one inverse CDF per S-dimension is required")
    pts = np.column_stack([icdf(unit[:, j]) for j, icdf in enumerate(marginals)])
    if domain is not None:
        tol = 1e-12 * domain.widths
        if np.any(pts < domain.lo - tol) or np.any(pts > domain.hi + tol) or not np.all(np.isfinite(pts)):
            raise DistributionMismatchError("inverse CDF produced values outside S")
        pts = np.clip(pts, domain.lo, domain.hi)
    m = pts.shape[0]
    return WeightedSGrid(pts, np.full(m, 1.0 / m))


def sample_ps(n, marginals, rng):
    """Plain Monte Carlo draws from the product of the marginals."""
    return np.column_stack([icdf(rng.uniform(size=n)) for icdf in marginals])


def write_design_csv(path, points, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.atleast_2d(points):
            w.writerow(["%.17g" % v for v in row])
