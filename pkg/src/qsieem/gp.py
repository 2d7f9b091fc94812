"""Gaussian-process machinery: Matérn covariances, ReML fitting, exact
posterior prediction and batch-conditioned mean perturbations.

Each scalar output is an independent GP with a constant mean and an
anisotropic Matérn covariance with smoothness in {1/2, 3/2, 5/2, inf}.
Prediction is simple kriging with the ReML estimate of the mean plugged
in, so conditioning on extra data is exactly a Matheron update.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

NU_GRID = (0.5, 1.5, 2.5, math.inf)
RELATIVE_NUGGET = 1e-6
_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


class IllConditionedError(RuntimeError):
    """The training covariance cannot be factorized."""


class DegenerateBatchError(RuntimeError):
    """The posterior covariance of a candidate batch is singular."""


@dataclass(frozen=True)
class KernelSpec:
    smoothness: float
    variance: float
    lengthscales: tuple

    def __post_init__(self):
        if self.smoothness not in NU_GRID:
            raise ValueError(f"smoothness must be one of {NU_GRID}, got {self.smoothness}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim != 1 or np.any(~np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be a vector of positive numbers")
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in ls))

    @property
    def dim(self):
        return len(self.lengthscales)


@dataclass(frozen=True)
class GpHyperParams:
    mean: float
    kernel: KernelSpec
    nugget: float = RELATIVE_NUGGET
    reml_nll: float = float("nan")
    degenerate: bool = False

    @property
    def nugget_variance(self):
        return self.nugget * self.kernel.variance


@dataclass
class Dataset:
    """Evaluated points in U = X x S with (n, q) observations.

    ``lower``/``upper`` describe the box U. ``noise_cov`` is the q x q
    observation noise covariance; only its diagonal is used since the
    output components are modelled independently.
    """

    points: np.ndarray
    observations: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    noise_cov: np.ndarray = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        d = self.lower.size
        self.points = np.asarray(self.points, dtype=float).reshape(-1, d)
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        self.observations = obs.reshape(self.points.shape[0], obs.shape[1] if obs.ndim == 2 else -1)
        q = self.observations.shape[1]
        if self.noise_cov is None:
            self.noise_cov = np.zeros((q, q))
        self.noise_cov = np.asarray(self.noise_cov, dtype=float).reshape(q, q)
        if self.points.shape[0] != self.observations.shape[0]:
            raise ValueError("points and observations lengths differ")
        tol = 1e-12 * (self.upper - self.lower)
        if np.any(self.points < self.lower - tol) or np.any(self.points > self.upper + tol):
            raise ValueError("dataset points must lie inside the declared box")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def q(self):
        return self.observations.shape[1]

    @property
    def widths(self):
        return self.upper - self.lower

    def append(self, points, observations):
        points = np.asarray(points, dtype=float).reshape(-1, self.lower.size)
        obs = np.asarray(observations, dtype=float).reshape(points.shape[0], self.q)
        return Dataset(
            np.vstack([self.points, points]),
            np.vstack([self.observations, obs]),
            self.lower,
            self.upper,
            self.noise_cov,
        )


# ---------------------------------------------------------------------------
# Covariance functions


def correlation(r, nu):
    """Matérn correlation C_nu(r) for the supported closed forms."""
    r = np.asarray(r, dtype=float)
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        t = _SQRT3 * r
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        t = _SQRT5 * r
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    if nu == math.inf:
        return np.exp(-0.5 * r * r)
    raise ValueError(f"unsupported smoothness {nu}")


def _slope_over_r(r, nu):
    """-C'(r)/r, used for lengthscale derivatives (zero where r == 0)."""
    if nu == 0.5:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, np.exp(-r) / np.where(r > 0, r, 1.0), 0.0)
        return out
    if nu == 1.5:
        return 3.0 * np.exp(-_SQRT3 * r)
    if nu == 2.5:
        t = _SQRT5 * r
        return (5.0 / 3.0) * (1.0 + t) * np.exp(-t)
    if nu == math.inf:
        return np.exp(-0.5 * r * r)
    raise ValueError(f"unsupported smoothness {nu}")


def scaled_sqdist(a, b, lengthscales):
    """Squared scaled distances between rows of a (n, d) and b (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ls = np.asarray(lengthscales, dtype=float)
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(ls.size):
        diff = (a[:, i, None] - b[None, :, i]) / ls[i]
        out += diff * diff
    return out


def cov_matrix(a, b, spec):
    r2 = scaled_sqdist(a, b, spec.lengthscales)
    return spec.variance * correlation(np.sqrt(r2), spec.smoothness)


def matern_cov(a, b, spec):
    """Covariance between two single points of U."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != spec.dim or b.size != spec.dim:
        raise ValueError("point dimensions do not match the lengthscales")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input to matern_cov")
    return float(cov_matrix(a[None], b[None], spec)[0, 0])


# ---------------------------------------------------------------------------
# Posterior


def _offending_pair(points, spec):
    if points.shape[0] < 2:
        return (0, 0)
    k = cov_matrix(points, points, spec) / spec.variance
    np.fill_diagonal(k, -np.inf)
    i, j = np.unravel_index(np.argmax(k), k.shape)
    return (int(min(i, j)), int(max(i, j)))


class GpPosterior:
    """Posterior of one scalar GP output given its training data.

    Immutable after construction. ``noise_var`` is the known observation
    noise variance of this output (zero for deterministic simulators).
    """

    def __init__(self, points, values, hyper, noise_var=0.0):
        self.hyper = hyper
        self.spec = hyper.kernel
        self.noise_var = float(noise_var)
        self.points = np.asarray(points, dtype=float).reshape(-1, self.spec.dim)
        self.values = np.asarray(values, dtype=float).ravel()
        n = self.points.shape[0]
        self.obs_var = hyper.nugget_variance + self.noise_var
        if n == 0:
            self.L = np.zeros((0, 0))
            self.Linv = np.zeros((0, 0))
            self.coef = np.zeros(0)
            self.white_resid = np.zeros(0)
            return
        K = cov_matrix(self.points, self.points, self.spec)
        K[np.diag_indices(n)] += self.obs_var
        try:
            self.L = linalg.cholesky(K, lower=True)
        except linalg.LinAlgError:
            i, j = _offending_pair(self.points, self.spec)
            raise IllConditionedError(
                f"training covariance not positive definite; points {i} and {j} "
                "are nearly indistinguishable under the fitted kernel"
            ) from None
        self.Linv = linalg.solve_triangular(self.L, np.eye(n), lower=True)
        self.white_resid = self.Linv @ (self.values - hyper.mean)
        self.coef = self.Linv.T @ self.white_resid

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def prior_variance(self):
        return self.spec.variance

    def whiten(self, kxu):
        """Map k(X, U) of shape (n, m) to L^{-1} k(X, U)."""
        return self.Linv @ kxu

    def _clamp(self, var):
        floor = -1e-12 * self.spec.variance
        if var.size and var.min() < floor:
            raise IllConditionedError(
                f"negative predictive variance {var.min():.3e} below tolerance"
            )
        return np.maximum(var, 0.0)

    def predict(self, u, return_whitened=False):
        """Posterior mean and variance at the rows of u."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.n == 0:
            mean = np.full(u.shape[0], self.hyper.mean)
            var = np.full(u.shape[0], self.spec.variance)
            w = np.zeros((0, u.shape[0]))
            return (mean, var, w) if return_whitened else (mean, var)
        kxu = cov_matrix(self.points, u, self.spec)
        mean = self.hyper.mean + kxu.T @ self.coef
        w = self.Linv @ kxu
        var = self._clamp(self.spec.variance - np.einsum("ij,ij->j", w, w))
        return (mean, var, w) if return_whitened else (mean, var)

    def cov(self, a, b):
        """Posterior covariance k_n(a, b) of the latent process."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        kab = cov_matrix(a, b, self.spec)
        if self.n == 0:
            return kab
        wa = self.Linv @ cov_matrix(self.points, a, self.spec)
        wb = self.Linv @ cov_matrix(self.points, b, self.spec)
        return kab - wa.T @ wb

    # -- product grids {x} x S~ -------------------------------------------

    def product_sqdist(self, xs, ss):
        """Scaled squared distances from the (n_x, n_s) product grid to the
        training points, shape (n_x, n_s, n). X and S parts are computed
        separately and broadcast."""
        xs = np.atleast_2d(xs)
        ss = np.atleast_2d(ss)
        dx = xs.shape[1]
        ls = np.asarray(self.spec.lengthscales)
        rx = scaled_sqdist(xs, self.points[:, :dx], ls[:dx])
        rs = scaled_sqdist(ss, self.points[:, dx:], ls[dx:])
        return rx[:, None, :] + rs[None, :, :]

    def predict_product(self, xs, ss, return_whitened=False):
        """Mean/variance over the product grid, each of shape (n_x, n_s).

        With ``return_whitened`` also returns L^{-1} k(X, grid) with the grid
        flattened x-major, shape (n, n_x * n_s).
        """
        xs = np.atleast_2d(xs)
        ss = np.atleast_2d(ss)
        nx, ns = xs.shape[0], ss.shape[0]
        if self.n == 0:
            mean = np.full((nx, ns), self.hyper.mean)
            var = np.full((nx, ns), self.spec.variance)
            return (mean, var, np.zeros((0, nx * ns))) if return_whitened else (mean, var)
        r2 = self.product_sqdist(xs, ss).reshape(nx * ns, self.n)
        kux = self.spec.variance * correlation(np.sqrt(r2, out=r2), self.spec.smoothness)
        mean = self.hyper.mean + kux @ self.coef
        w = kux @ self.Linv.T
        var = self._clamp(self.spec.variance - np.einsum("ij,ij->i", w, w))
        mean = mean.reshape(nx, ns)
        var = var.reshape(nx, ns)
        if return_whitened:
            return mean, var, w.T
        return mean, var

    def product_cross_prior(self, batch, xs, ss):
        """Prior covariance k(batch, grid) for a product grid, shape (r, n_x * n_s)."""
        batch = np.atleast_2d(batch)
        dx = np.atleast_2d(xs).shape[1]
        ls = np.asarray(self.spec.lengthscales)
        rx = scaled_sqdist(batch[:, :dx], xs, ls[:dx])
        rs = scaled_sqdist(batch[:, dx:], ss, ls[dx:])
        r2 = (rx[:, :, None] + rs[:, None, :]).reshape(batch.shape[0], -1)
        return self.spec.variance * correlation(np.sqrt(r2, out=r2), self.spec.smoothness)


class ModelBundle:
    """Independent scalar posteriors, one per output component."""

    def __init__(self, posteriors):
        self.posteriors = list(posteriors)
        if not self.posteriors:
            raise ValueError("a model bundle needs at least one output")

    @property
    def q(self):
        return len(self.posteriors)

    def __iter__(self):
        return iter(self.posteriors)

    def __getitem__(self, j):
        return self.posteriors[j]

    def predict(self, u):
        out = [p.predict(u) for p in self.posteriors]
        mean = np.stack([m for m, _ in out], axis=-1)
        var = np.stack([v for _, v in out], axis=-1)
        return mean, var

    def predict_product(self, xs, ss):
        out = [p.predict_product(xs, ss) for p in self.posteriors]
        mean = np.stack([m for m, _ in out], axis=-1)
        var = np.stack([v for _, v in out], axis=-1)
        return mean, var


def posterior(data, hypers):
    """Condition each output GP on ``data``. ``hypers`` is one GpHyperParams
    per output (a single instance is accepted for q = 1)."""
    if isinstance(hypers, GpHyperParams):
        hypers = [hypers]
    if len(hypers) != data.q:
        raise ValueError("need one set of hyperparameters per output")
    return ModelBundle(
        GpPosterior(data.points, data.observations[:, j], h, data.noise_cov[j, j])
        for j, h in enumerate(hypers)
    )


# ---------------------------------------------------------------------------
# Batch perturbations (Matheron update)


def thin_batch(post, batch, tol=1e-9):
    """Indices of batch points kept after dropping near-duplicates, i.e.
    points whose posterior correlation with an earlier kept point exceeds
    1 - tol."""
    batch = np.atleast_2d(batch)
    c = post.cov(batch, batch)
    sd = np.sqrt(np.maximum(np.diag(c), 0.0))
    keep = []
    for i in range(batch.shape[0]):
        dup = False
        for j in keep:
            if sd[i] == 0 and sd[j] == 0:
                dup = np.allclose(batch[i], batch[j])
            elif sd[i] > 0 and sd[j] > 0:
                dup = c[i, j] / (sd[i] * sd[j]) > 1.0 - tol
            if dup:
                break
        if not dup:
            keep.append(i)
    return np.array(keep, dtype=int)


def batch_covariance(post, batch):
    """Posterior covariance of the noisy observations at ``batch``.

    The nugget (and any known noise) is included, so conditioning on these
    observations matches a refit with the same hyperparameters.
    """
    batch = np.atleast_2d(batch)
    sig = post.cov(batch, batch)
    sig[np.diag_indices_from(sig)] += post.obs_var
    return sig


def _batch_factor(post, batch):
    sig = batch_covariance(post, batch)
    try:
        return linalg.cholesky(sig, lower=True)
    except linalg.LinAlgError:
        raise DegenerateBatchError("posterior covariance of the batch is singular") from None


def batch_kappa(post, batch, query, thin=True):
    """Standard deviation of the change in posterior mean at ``query``
    induced by observing ``batch``; vectorized over query rows."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if batch.shape[0] < 1:
        raise ValueError("batch must contain at least one point")
    if thin:
        batch = batch[thin_batch(post, batch)]
    L = _batch_factor(post, batch)
    k = post.cov(batch, query)
    a = linalg.solve_triangular(L, k, lower=True)
    return np.sqrt(np.einsum("ij,ij->j", a, a))


def matheron_mean_update(post, batch, batch_values, query):
    """Posterior mean at ``query`` after observing ``batch_values`` at
    ``batch``, computed from the current posterior only."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    query = np.atleast_2d(np.asarray(query, dtype=float))
    values = np.asarray(batch_values, dtype=float).ravel()
    L = _batch_factor(post, batch)
    mu_b, _ = post.predict(batch)
    mu_q, _ = post.predict(query)
    k = post.cov(batch, query)
    resid = linalg.cho_solve((L, True), values - mu_b)
    return mu_q + k.T @ resid


# ---------------------------------------------------------------------------
# Restricted maximum likelihood


@dataclass
class _RemlProblem:
    points: np.ndarray
    y: np.ndarray
    nu: float
    noise_var: float
    nugget: float
    sqdiff: np.ndarray = field(init=False)

    def __post_init__(self):
        diff = self.points[:, None, :] - self.points[None, :, :]
        self.sqdiff = diff * diff

    def nll(self, phi):
        n = self.y.size
        s2 = math.exp(phi[0])
        ls2 = np.exp(2.0 * phi[1:])
        D = self.sqdiff / ls2
        r = np.sqrt(D.sum(axis=-1))
        R = correlation(r, self.nu)
        R[np.diag_indices(n)] += self.nugget
        K = s2 * R
        K[np.diag_indices(n)] += self.noise_var
        try:
            cf = linalg.cho_factor(K, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return 1e25, np.zeros_like(phi)
        Kinv = linalg.cho_solve(cf, np.eye(n), check_finite=False)
        k1 = Kinv.sum(axis=1)
        s1 = k1.sum()
        if not s1 > 0:
            return 1e25, np.zeros_like(phi)
        P = Kinv - np.outer(k1, k1) / s1
        Py = P @ self.y
        logdet = 2.0 * np.log(np.diag(cf[0])).sum()
        val = 0.5 * (logdet + math.log(s1) + self.y @ Py + (n - 1) * math.log(2 * math.pi))
        A = P - np.outer(Py, Py)
        grad = np.empty_like(phi)
        grad[0] = 0.5 * np.sum(A * (s2 * R))
        H = A * (s2 * _slope_over_r(r, self.nu))
        grad[1:] = 0.5 * np.einsum("jk,jki->i", H, D)
        return val, grad

    def profiled_log_variance(self, log_ls):
        """log of the ReML variance estimate at fixed lengthscales (noise-free)."""
        n = self.y.size
        D = self.sqdiff / np.exp(2.0 * log_ls)
        R = correlation(np.sqrt(D.sum(axis=-1)), self.nu)
        R[np.diag_indices(n)] += self.nugget
        try:
            cf = linalg.cho_factor(R, lower=True)
        except linalg.LinAlgError:
            return math.log(np.var(self.y) + 1e-300)
        Ri = linalg.cho_solve(cf, np.eye(n))
        k1 = Ri.sum(axis=1)
        P = Ri - np.outer(k1, k1) / k1.sum()
        return math.log(max(self.y @ P @ self.y / max(n - 1, 1), 1e-300))

    def gls_mean(self, phi):
        n = self.y.size
        D = self.sqdiff / np.exp(2.0 * phi[1:])
        R = correlation(np.sqrt(D.sum(axis=-1)), self.nu)
        R[np.diag_indices(n)] += self.nugget
        K = math.exp(phi[0]) * R
        K[np.diag_indices(n)] += self.noise_var
        cf = linalg.cho_factor(K, lower=True)
        k1 = linalg.cho_solve(cf, np.ones(n))
        return float(k1 @ self.y / k1.sum())


def reml_nll(points, y, nu, variance, lengthscales, noise_var=0.0, nugget=RELATIVE_NUGGET):
    """Negative restricted log-likelihood at the given covariance parameters."""
    prob = _RemlProblem(np.asarray(points, float), np.asarray(y, float).ravel(), nu, noise_var, nugget)
    phi = np.concatenate([[math.log(variance)], np.log(lengthscales)])
    return prob.nll(phi)[0]


def fit_reml(data, nu_grid=NU_GRID, rng=None, n_starts=5, output=0, warm_start=None):
    """ReML estimate of (mean, variance, lengthscales, smoothness) for one
    output of ``data``.

    For each smoothness in ``nu_grid``, ``n_starts`` bounded L-BFGS-B runs
    in log-parameters are performed; the first start is ``warm_start`` (a
    previous GpHyperParams) when given. The best restricted likelihood over
    the whole grid wins.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    X = data.points
    y = data.observations[:, output]
    widths = data.widths
    noise_var = float(data.noise_cov[output, output])
    d = X.shape[1]
    if X.shape[0] < 2:
        raise ValueError("ReML needs at least two observations")
    yvar = float(np.var(y))
    scale = max(float(np.max(np.abs(y))), 1.0)
    if yvar <= (np.finfo(float).eps * scale) ** 2:
        warnings.warn("degenerate observations: returning default hyperparameters")
        floor = np.finfo(float).eps * scale**2
        return GpHyperParams(
            mean=float(np.mean(y)),
            kernel=KernelSpec(2.5, floor, tuple(widths)),
            degenerate=True,
        )
    log_w = np.log(widths)
    bounds = [(math.log(1e-6 * yvar), math.log(1e6 * yvar))]
    bounds += [(lw + math.log(1e-3), lw + math.log(1e3)) for lw in log_w]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    # all starts are drawn up front so results do not depend on nu_grid order
    rand_ls = log_w + rng.uniform(math.log(0.05), math.log(2.0), size=(len(nu_grid), n_starts, d))
    best = None
    for a, nu in enumerate(nu_grid):
        prob = _RemlProblem(X, y, nu, noise_var, RELATIVE_NUGGET)
        starts = []
        if warm_start is not None and warm_start.kernel.dim == d:
            starts.append(np.log(warm_start.kernel.lengthscales))
        starts.extend(rand_ls[a, : n_starts - len(starts)])
        for ls0 in starts:
            ls0 = np.clip(ls0, lo[1:], hi[1:])
            phi0 = np.concatenate([[prob.profiled_log_variance(ls0)], ls0])
            phi0 = np.clip(phi0, lo, hi)
            res = optimize.minimize(
                prob.nll, phi0, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": 200},
            )
            if best is None or res.fun < best[0]:
                best = (float(res.fun), nu, res.x, prob)
    val, nu, phi, prob = best
    kernel = KernelSpec(nu, math.exp(phi[0]), tuple(np.exp(phi[1:])))
    return GpHyperParams(mean=prob.gls_mean(phi), kernel=kernel, reml_nll=val)


def fit_bundle(data, nu_grid=NU_GRID, rng=None, n_starts=5, warm_start=None):
    """Fit every output separately and condition on the data."""
    hypers = []
    for j in range(data.q):
        warm = warm_start[j] if warm_start is not None else None
        hypers.append(fit_reml(data, nu_grid, rng, n_starts, output=j, warm_start=warm))
    return hypers, posterior(data, hypers)


# ---------------------------------------------------------------------------
# Snapshot serialization


def _fmt(v):
    return "%.17g" % v


def save_snapshot(path, data, hypers):
    """Write hyperparameters and training data to a flat text file."""
    lines = ["# qsieem gp snapshot v1"]
    lines.append(f"dim = {data.points.shape[1]}")
    lines.append(f"outputs = {data.q}")
    lines.append(f"n_points = {data.n}")
    lines.append("lower = " + ",".join(map(_fmt, data.lower)))
    lines.append("upper = " + ",".join(map(_fmt, data.upper)))
    lines.append("noise_cov = " + ",".join(map(_fmt, data.noise_cov.ravel())))
    for j, h in enumerate(hypers):
        lines.append(f"[output {j}]")
        lines.append(f"mean = {_fmt(h.mean)}")
        lines.append(f"smoothness = {_fmt(h.kernel.smoothness)}")
        lines.append(f"variance = {_fmt(h.kernel.variance)}")
        lines.append("lengthscales = " + ",".join(map(_fmt, h.kernel.lengthscales)))
        lines.append(f"nugget = {_fmt(h.nugget)}")
        lines.append(f"reml_nll = {_fmt(h.reml_nll)}")
        lines.append(f"degenerate = {int(h.degenerate)}")
    lines.append("[data]")
    for u, z in zip(data.points, data.observations):
        lines.append(",".join(map(_fmt, np.concatenate([u, z]))))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_snapshot(path):
    """Inverse of :func:`save_snapshot`; returns (Dataset, hypers)."""
    header, outputs, rows = {}, [], []
    section = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                section = line.strip("[]")
                if section.startswith("output"):
                    outputs.append({})
                continue
            if section == "data":
                rows.append([float(v) for v in line.split(",")])
                continue
            key, val = (s.strip() for s in line.split("=", 1))
            (outputs[-1] if section else header)[key] = val

    def vec(s):
        return np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)

    d, q = int(header["dim"]), int(header["outputs"])
    arr = np.array(rows, dtype=float).reshape(int(header["n_points"]), d + q)
    data = Dataset(arr[:, :d], arr[:, d:], vec(header["lower"]), vec(header["upper"]),
                   vec(header["noise_cov"]).reshape(q, q))
    hypers = []
    for o in outputs:
        kernel = KernelSpec(float(o["smoothness"]), float(o["variance"]), tuple(vec(o["lengthscales"])))
        hypers.append(GpHyperParams(float(o["mean"]), kernel, float(o["nugget"]),
                                    float(o["reml_nll"]), bool(int(o["degenerate"]))))
    return data, hypers


