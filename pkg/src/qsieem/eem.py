"""Expected-estimator-modification acquisition for quantile sets.

The criterion measures how much the discretized plug-in estimator is
expected to change once a batch is observed. Under the current posterior
the future mean is mu_n + kappa_n * Z with a single standard normal Z,
so the expectation over Z is a one-dimensional Gauss-Hermite sum.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg

from .gp import DegenerateBatchError, batch_kappa, cov_matrix, thin_batch
from .quantile import is_member, prob_in_c

DUPLICATE_TOL = 1e-9


@dataclass(frozen=True)
class GaussHermiteRule:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def standard(cls, n=10):
        """n-node rule for E[g(Z)], Z ~ N(0, 1)."""
        z, w = hermegauss(n)
        return cls(z, w / w.sum())

    def expect(self, g):
        return sum(w * g(z) for z, w in zip(self.nodes, self.weights))


@dataclass
class CandidatePool:
    points: np.ndarray   # (G, d) joint candidates in U
    weights: np.ndarray  # misclassification weights in [0, 1/2]

    def sample(self, m, rng):
        """Up to m distinct indices drawn without replacement with
        probability proportional to the weights."""
        pos = np.flatnonzero(self.weights > 0)
        if pos.size == 0:
            return pos
        if pos.size <= m:
            return pos[np.argsort(-self.weights[pos], kind="stable")]
        p = self.weights[pos] / self.weights[pos].sum()
        return rng.choice(pos, size=m, replace=False, p=p)


def product_points(xs, ss):
    """Rows (x_i, s_j) of the product grid, x-major."""
    xs = np.atleast_2d(xs)
    ss = np.atleast_2d(ss)
    return np.column_stack([np.repeat(xs, ss.shape[0], axis=0), np.tile(ss, (xs.shape[0], 1))])


def misclass_weight(mean, sd, region):
    """min(p, 1 - p) with p = P_n(xi(u) in C) from the Gaussian marginals."""
    p = region.probability(mean, sd)
    return np.minimum(p, 1.0 - p)


def _members(values, weights, region, alpha):
    return is_member(prob_in_c(values, weights, region), alpha)


def perturbed_membership(bundle, batch, xs, sgrid, region, alpha, z):
    """Membership of each x in the plug-in set obtained with mean
    mu_n + kappa_n * z, all outputs sharing the same z."""
    xs = np.atleast_2d(xs)
    u = product_points(xs, sgrid.points)
    shape = (xs.shape[0], len(sgrid))
    values = []
    for post in bundle:
        mean, _ = post.predict(u)
        kap = batch_kappa(post, batch, u)
        values.append((mean + kap * z).reshape(shape))
    return _members(np.stack(values, axis=-1), sgrid.weights, region, alpha)


class _OutputState:
    """Sequential Cholesky bookkeeping of one output for a partial batch."""

    def __init__(self, G):
        self.points = np.zeros((0, 0))
        self.L = np.zeros((0, 0))
        self.A = np.zeros((0, G))   # L_B^{-1} k_n(B, grid)
        self.kappa2 = np.zeros(G)


class BatchState:
    def __init__(self, q, G, d):
        self.points = np.zeros((0, d))
        self.outputs = [_OutputState(G) for _ in range(q)]


class EemCriterion:
    """Psi~ over a fixed product grid X~ x S~ with cached current memberships.

    Batches are grown one point at a time; ``values`` scores many one-point
    extensions of a partial batch at once.
    """

    def __init__(self, bundle, x_grid, sgrid, region, alpha, rule):
        self.bundle = bundle
        self.x_grid = np.atleast_2d(x_grid)
        self.sgrid = sgrid
        self.region = region
        self.alpha = alpha
        self.rule = rule
        self.n_x, self.n_s = self.x_grid.shape[0], len(sgrid)
        self.G = self.n_x * self.n_s
        self.d = self.x_grid.shape[1] + sgrid.points.shape[1]
        self.means, self.vars, self.whitened = [], [], []
        for post in bundle:
            m, v, w = post.predict_product(self.x_grid, sgrid.points, return_whitened=True)
            self.means.append(m.ravel())
            self.vars.append(v.ravel())
            self.whitened.append(w)
        self.mean = np.stack(self.means, axis=-1)          # (G, q)
        self.sd = np.sqrt(np.stack(self.vars, axis=-1))
        grid_vals = self.mean.reshape(self.n_x, self.n_s, -1)
        self.current = _members(grid_vals, sgrid.weights, region, alpha)

    # -- pool ------------------------------------------------------------

    def pool(self):
        pts = product_points(self.x_grid, self.sgrid.points)
        return CandidatePool(pts, misclass_weight(self.mean, self.sd, self.region))

    # -- kappa bookkeeping -----------------------------------------------

    def new_state(self):
        return BatchState(self.bundle.q, self.G, self.d)

    def _cross(self, j, cands):
        """k_n(cands, grid) for output j, shape (m, G)."""
        post = self.bundle[j]
        prior = post.product_cross_prior(cands, self.x_grid, self.sgrid.points)
        if post.n == 0:
            return prior
        wc = post.whiten(_cov(post, post.points, cands))
        return prior - wc.T @ self.whitened[j]

    def _increments(self, state, cands):
        """Per-output kappa^2 increments (m, G) and duplicate flags."""
        cands = np.atleast_2d(cands)
        incs = []
        dup = np.zeros(cands.shape[0], dtype=bool)
        for j, post in enumerate(self.bundle):
            st = state.outputs[j]
            cross = self._cross(j, cands)
            var_c = _diag_cov(post, cands)
            if st.points.shape[0]:
                k_cb = post.cov(cands, st.points)
                a = linalg.solve_triangular(st.L, k_cb.T, lower=True)
                cross = cross - a.T @ st.A
                resid = var_c + post.obs_var - np.einsum("ij,ij->j", a, a)
                var_b = np.diag(post.cov(st.points, st.points))
                denom = np.sqrt(np.maximum(var_c, 0)[:, None] * np.maximum(var_b, 0)[None, :])
                with np.errstate(divide="ignore", invalid="ignore"):
                    corr = np.where(denom > 0, k_cb / denom, 0.0)
                dup |= np.any(corr > 1.0 - DUPLICATE_TOL, axis=1)
            else:
                resid = var_c + post.obs_var
            resid = np.maximum(resid, 1e-300)
            incs.append(cross * cross / resid[:, None])
        for inc in incs:
            inc[dup] = 0.0
        return incs, dup

    def add(self, state, point):
        """New state with ``point`` appended (ignored if a near-duplicate)."""
        point = np.asarray(point, dtype=float).reshape(1, -1)
        _, dup = self._increments(state, point)
        new = BatchState(self.bundle.q, self.G, self.d)
        new.points = np.vstack([state.points, point])
        if dup[0]:
            new.outputs = state.outputs
            return new
        for j, post in enumerate(self.bundle):
            st = state.outputs[j]
            ns = _OutputState(self.G)
            ns.points = point if st.points.shape[0] == 0 else np.vstack([st.points, point])
            cross = self._cross(j, point)[0]
            var_c = post.cov(point, point)[0, 0] + post.obs_var
            if st.points.shape[0]:
                k_cb = post.cov(point, st.points)[0]
                a = linalg.solve_triangular(st.L, k_cb, lower=True)
                diag = var_c - a @ a
                if diag <= 0:
                    raise DegenerateBatchError("batch covariance lost positive definiteness")
                dval = np.sqrt(diag)
                ns.L = np.block([[st.L, np.zeros((st.L.shape[0], 1))], [a[None], np.array([[dval]])]])
                row = (cross - a @ st.A) / dval
            else:
                dval = np.sqrt(var_c)
                ns.L = np.array([[dval]])
                row = cross / dval
            ns.A = np.vstack([st.A, row[None]])
            ns.kappa2 = st.kappa2 + row * row
            new.outputs[j] = ns
        return new

    # -- criterion -------------------------------------------------------

    def psi_from_kappa(self, kappa):
        """kappa (..., G, q) -> Psi~ (...)."""
        lead = kappa.shape[:-2]
        total = np.zeros(lead)
        for z, w in zip(self.rule.nodes, self.rule.weights):
            vals = (self.mean + kappa * z).reshape(lead + (self.n_x, self.n_s, self.bundle.q))
            flipped = _members(vals, self.sgrid.weights, self.region, self.alpha) != self.current
            total = total + w * flipped.mean(axis=-1)
        return total

    def values(self, state, cands):
        """Psi~ of state + {c} for every row c of ``cands``."""
        incs, _ = self._increments(state, cands)
        kappa = np.stack(
            [np.sqrt(st.kappa2[None, :] + inc) for st, inc in zip(state.outputs, incs)], axis=-1
        )
        return self.psi_from_kappa(kappa)

    def state_value(self, state):
        kappa = np.stack([np.sqrt(st.kappa2) for st in state.outputs], axis=-1)
        return float(self.psi_from_kappa(kappa))

    def value(self, batch):
        state = self.new_state()
        for u in np.atleast_2d(batch):
            state = self.add(state, u)
        return self.state_value(state)


def _cov(post, a, b):
    return cov_matrix(a, b, post.spec)


def _diag_cov(post, pts):
    _, var = post.predict(pts)
    return var


def psi_tilde(bundle, batch, x_grid, sgrid, region, alpha, rule):
    """Discretized expected-estimator-modification criterion of ``batch``."""
    return EemCriterion(bundle, x_grid, sgrid, region, alpha, rule).value(batch)


# ---------------------------------------------------------------------------
# Batch selection


def pattern_search(f, x0, f0, lo, hi, budget, step0=0.1):
    """Coordinate pattern search maximizing f inside the box [lo, hi].

    Only strict improvements are accepted, so the returned value is never
    below f0. Steps halve after an unsuccessful sweep.
    """
    x, fx = np.array(x0, dtype=float), float(f0)
    step = step0 * (hi - lo)
    evals = 0
    while evals < budget and np.any(step > 1e-9 * (hi - lo)):
        improved = False
        for i in range(x.size):
            for sign in (1.0, -1.0):
                if evals >= budget:
                    break
                y = x.copy()
                y[i] = np.clip(x[i] + sign * step[i], lo[i], hi[i])
                if y[i] == x[i]:
                    continue
                fy = float(f(y))
                evals += 1
                if fy > fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step = step / 2.0
    return x, fx


@dataclass
class BatchChoice:
    points: np.ndarray
    psi: float
    fallback: bool
    start_psi: list


def greedy_batch_select(criterion, r, rng, lower, upper, n_starts=100, local_budget=50):
    """Choose r points one at a time, each maximizing the partial criterion
    with the earlier picks held fixed.

    Starts are pool points sampled by misclassification weight; the best
    start is refined by pattern search inside the box U. When every pool
    weight is zero the pool points of largest posterior variance are used.
    """
    pool = criterion.pool()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not np.any(pool.weights > 0):
        total_var = (criterion.sd ** 2).sum(axis=-1)
        order = np.argsort(-total_var, kind="stable")[:r]
        pts = pool.points[order]
        return BatchChoice(pts, criterion.value(pts), True, [])
    state = criterion.new_state()
    start_vals = []
    for _ in range(r):
        idx = pool.sample(n_starts, rng)
        # ties go to the start with the larger weight
        idx = idx[np.argsort(-pool.weights[idx], kind="stable")]
        vals = criterion.values(state, pool.points[idx])
        b = int(np.argmax(vals))
        start, best = pool.points[idx[b]], float(vals[b])
        start_vals.append(best)
        if local_budget > 0:
            def f(u, _state=state):
                return criterion.values(_state, u[None])[0]
            start, best = pattern_search(f, start, best, lower, upper, local_budget)
        state = criterion.add(state, start)
    return BatchChoice(state.points, criterion.state_value(state), False, start_vals)


# ---------------------------------------------------------------------------
# Stopping metric


def _kappa2_product(post, batch, xs, ss, chunk):
    """kappa^2 over the product grid for a (thinned) batch, shape (n_x, n_s)."""
    keep = thin_batch(post, batch, DUPLICATE_TOL)
    batch = batch[keep]
    sig = post.cov(batch, batch)
    sig[np.diag_indices_from(sig)] += post.obs_var
    try:
        Lb = linalg.cholesky(sig, lower=True)
    except linalg.LinAlgError:
        raise DegenerateBatchError("inducing-set covariance is singular after thinning") from None
    Lb_inv = linalg.solve_triangular(Lb, np.eye(Lb.shape[0]), lower=True)
    wb = post.whiten(_cov(post, post.points, batch)) if post.n else None
    out = np.empty((xs.shape[0], ss.shape[0]))
    for start in range(0, xs.shape[0], chunk):
        xc = xs[start:start + chunk]
        cross = post.product_cross_prior(batch, xc, ss)
        if post.n:
            _, _, w = post.predict_product(xc, ss, return_whitened=True)
            cross -= wb.T @ w
        a = Lb_inv @ cross
        out[start:start + chunk] = np.einsum("ij,ij->j", a, a).reshape(xc.shape[0], -1)
    return out


def xi_stopping(bundle, inducing, xs, sgrid, region, alpha, rule, chunk=32):
    """Expected number of membership flips per current plug-in member when
    the whole inducing set is observed. +inf if there is no member."""
    xs = np.atleast_2d(xs)
    inducing = np.atleast_2d(inducing)
    means, kappas = [], []
    for post in bundle:
        m, _ = post.predict_product(xs, sgrid.points)
        means.append(m)
        kappas.append(np.sqrt(_kappa2_product(post, inducing, xs, sgrid.points, chunk)))
    mean = np.stack(means, axis=-1)
    kappa = np.stack(kappas, axis=-1)
    current = _members(mean, sgrid.weights, region, alpha)
    frac = current.mean()
    if frac == 0:
        return float("inf")
    psi = 0.0
    for z, w in zip(rule.nodes, rule.weights):
        flipped = _members(mean + kappa * z, sgrid.weights, region, alpha) != current
        psi += w * flipped.mean()
    return float(psi / frac)
