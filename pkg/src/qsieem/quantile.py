"""Critical regions, plug-in / relaxed quantile-set estimators and the
posterior membership probability on discrete grids."""

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

from .gp import IllConditionedError

KINDS = ("lower", "upper", "band")
_TIE = 1e-12


class CalibrationError(RuntimeError):
    """Raised when the relaxed estimator cannot be calibrated."""


@dataclass(frozen=True)
class RegionFamily:
    """Monotone family {C_theta} of critical output regions.

    lower : C = (-inf, theta] on output ``output``; grows with theta.
    upper : C = [theta, +inf); grows as theta decreases.
    band  : C = {z : |z_j - b_j| / |b_j| > theta for some j}; grows as the
            tolerance theta decreases.

    ``terminal`` is the parameter of the true target region.
    """

    kind: str
    theta: float
    terminal: float
    baselines: tuple = ()
    output: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.kind == "band" and not self.baselines:
            raise ValueError("band regions need baselines")

    @property
    def direction(self):
        """+1 if C grows with theta, -1 if it shrinks."""
        return 1 if self.kind == "lower" else -1

    def at(self, theta):
        return replace(self, theta=float(theta))

    def at_terminal(self):
        return self.at(self.terminal)

    def _band(self):
        b = np.asarray(self.baselines, dtype=float)
        return b, np.abs(b)

    def contains(self, values):
        """values (..., q) -> bool (...)."""
        values = np.asarray(values, dtype=float)
        if self.kind == "lower":
            return values[..., self.output] <= self.theta
        if self.kind == "upper":
            return values[..., self.output] >= self.theta
        b, ab = self._band()
        dev = np.abs(values[..., : b.size] - b) / ab
        return np.any(dev > self.theta, axis=-1)

    def empty_parameter(self, values):
        """A parameter for which C contains none of ``values``."""
        values = np.asarray(values, dtype=float)
        if self.kind == "lower":
            lo = float(values[..., self.output].min())
            return lo - 1.0 - abs(lo)
        if self.kind == "upper":
            hi = float(values[..., self.output].max())
            return hi + 1.0 + abs(hi)
        b, ab = self._band()
        dev = np.abs(values[..., : b.size] - b) / ab
        return float(dev.max()) + 1.0

    def relax(self, mean, sd, zq):
        """Quantile-shifted mean moved away from C by sd * zq (zq >= 0)."""
        mean = np.asarray(mean, dtype=float)
        sd = np.asarray(sd, dtype=float)
        out = mean.copy()
        j = self.output
        if self.kind == "lower":
            out[..., j] = mean[..., j] + sd[..., j] * zq
            return out
        if self.kind == "upper":
            out[..., j] = mean[..., j] - sd[..., j] * zq
            return out
        b, ab = self._band()
        m = mean[..., : b.size]
        s = sd[..., : b.size]
        below = m < b - self.theta * ab
        above = m > b + self.theta * ab
        shifted = np.where(below, np.minimum(m + s * zq, b), m)
        shifted = np.where(above, np.maximum(m - s * zq, b), shifted)
        out[..., : b.size] = shifted
        return out

    def probability(self, mean, sd):
        """P(xi(u) in C) for independent Gaussian outputs, shape (...)."""
        mean = np.asarray(mean, dtype=float)
        sd = np.asarray(sd, dtype=float)
        if self.kind in ("lower", "upper"):
            m, s = mean[..., self.output], sd[..., self.output]
            diff = self.theta - m if self.kind == "lower" else m - self.theta
            with np.errstate(divide="ignore", invalid="ignore"):
                p = ndtr(diff / np.where(s > 0, s, 1.0))
            return np.where(s > 0, p, (diff >= 0).astype(float))
        b, ab = self._band()
        m, s = mean[..., : b.size], sd[..., : b.size]
        hi = b + self.theta * ab
        lo = b - self.theta * ab
        safe = np.where(s > 0, s, 1.0)
        inside = ndtr((hi - m) / safe) - ndtr((lo - m) / safe)
        inside = np.where(s > 0, inside, ((m >= lo) & (m <= hi)).astype(float))
        return 1.0 - np.prod(inside, axis=-1)


@dataclass
class GridPrediction:
    """Posterior mean and standard deviation over X-points x S-grid, each
    of shape (n_x, n_s, q)."""

    mean: np.ndarray
    sd: np.ndarray

    @property
    def n_x(self):
        return self.mean.shape[0]

    def subset(self, idx):
        return GridPrediction(self.mean[idx], self.sd[idx])


def predict_grid(bundle, xs, sgrid):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    mean, var = bundle.predict_product(xs, sgrid.points)
    return GridPrediction(mean, np.sqrt(var))


def prob_in_c(values, weights, region):
    """Weighted fraction of grid outputs in C; values (..., n_s, q)."""
    inside = region.contains(values)
    return inside.astype(float) @ np.asarray(weights, dtype=float)


def is_member(p, alpha):
    return p <= alpha + _TIE


def plugin_member(pred, sgrid, region, alpha):
    """x in the plug-in estimator iff sum_s w(s) 1_C(mu_n(x, s)) <= alpha."""
    return is_member(prob_in_c(pred.mean, sgrid.weights, region), alpha)


def _check_beta(beta):
    if not 0.5 <= beta < 1.0:
        raise ValueError(f"beta must lie in [1/2, 1), got {beta}")


def relaxed_member(pred, sgrid, region, alpha, beta):
    """Membership under the beta-quantile-shifted mean."""
    _check_beta(beta)
    zq = float(ndtri(beta))
    values = region.relax(pred.mean, pred.sd, zq)
    return is_member(prob_in_c(values, sgrid.weights, region), alpha)


def plugin_member_bundle(bundle, xs, sgrid, region, alpha):
    return plugin_member(predict_grid(bundle, xs, sgrid), sgrid, region, alpha)


def relaxed_member_bundle(bundle, xs, sgrid, region, alpha, beta):
    return relaxed_member(predict_grid(bundle, xs, sgrid), sgrid, region, alpha, beta)


BETA_MAX = 1.0 - 1e-6


def calibrate_beta(pred, sgrid, region, alpha, kappa, iters=40):
    """Smallest beta whose relaxed/plug-in member-count ratio over the
    population reaches ``kappa`` (or the largest achievable ratio).

    Returns (beta, relaxed_count, plugin_count).
    """
    n_plug = int(plugin_member(pred, sgrid, region, alpha).sum())
    if n_plug == 0:
        raise CalibrationError("no plug-in member in the population")

    def count(beta):
        return int(relaxed_member(pred, sgrid, region, alpha, beta).sum())

    target = min(kappa * n_plug, count(BETA_MAX))
    if count(0.5) >= target:
        return 0.5, count(0.5), n_plug
    lo, hi = 0.5, BETA_MAX
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if count(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi, count(hi), n_plug


# ---------------------------------------------------------------------------
# Posterior membership pi_n(x) by conditional simulation


def _psd_sqrt(cov, scale):
    n = cov.shape[0]
    for jitter in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            return linalg.cholesky(cov + jitter * scale * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
    vals, vecs = linalg.eigh(cov)
    if vals.min() < -1e-8 * scale:
        raise IllConditionedError("grid covariance is not positive semidefinite")
    return vecs * np.sqrt(np.maximum(vals, 0.0))


def sample_grid_paths(bundle, x, sgrid, n_paths, rng):
    """Joint posterior draws of xi over {x} x S~, shape (n_paths, n_s, q)."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.column_stack([np.repeat(x[None], len(sgrid), axis=0), sgrid.points])
    out = np.empty((n_paths, len(sgrid), bundle.q))
    for j, post in enumerate(bundle):
        mean, _ = post.predict(u)
        root = _psd_sqrt(post.cov(u, u), post.prior_variance)
        out[:, :, j] = mean + rng.standard_normal((n_paths, root.shape[1])) @ root.T
    return out


def pi_n_estimate(bundle, x, sgrid, region, alpha, n_paths, rng):
    """Monte Carlo estimate of P_n(x in Gamma(xi))."""
    paths = sample_grid_paths(bundle, x, sgrid, n_paths, rng)
    return float(is_member(prob_in_c(paths, sgrid.weights, region), alpha).mean())
