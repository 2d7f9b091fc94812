"""Benchmark problems, Monte Carlo oracles and set-error metrics."""

import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .design import BoxDomain, arcsine_icdf, beta_icdf, quantize_ps, sample_ps, sobol_points, truncnorm_icdf, uniform_icdf
from .quantile import RegionFamily
from .smc import ParticlePopulation, adaptive_mh_move, residual_resample

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """Input outside the problem's box."""


class OracleFailureError(RuntimeError):
    """The reference construction found no member of the quantile set."""


@dataclass(frozen=True)
class QsiProblem:
    name: str
    func: object
    x_domain: BoxDomain
    s_domain: BoxDomain
    marginals: tuple
    region: RegionFamily
    alpha: float
    q: int = 1

    @property
    def u_domain(self):
        return self.x_domain.product(self.s_domain)

    @property
    def d_x(self):
        return self.x_domain.dim

    def evaluate(self, u):
        """(n, d_U) -> (n, q), refusing points outside U."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        dom = self.u_domain
        if u.shape[1] != dom.dim:
            raise DomainError(f"{self.name} expects {dom.dim} inputs, got {u.shape[1]}")
        tol = 1e-12 * dom.widths
        if np.any(u < dom.lo - tol) or np.any(u > dom.hi + tol) or not np.all(np.isfinite(u)):
            raise DomainError(f"input outside the domain of {self.name}")
        return np.asarray(self.func(u), dtype=float).reshape(u.shape[0], self.q)

    def with_terminal(self, theta, alpha=None):
        """Copy with a different terminal region parameter (and alpha)."""
        region = RegionFamily(self.region.kind, theta, theta, self.region.baselines, self.region.output)
        return QsiProblem(self.name, self.func, self.x_domain, self.s_domain, self.marginals,
                          region, self.alpha if alpha is None else alpha, self.q)


# ---------------------------------------------------------------------------
# Test functions


def piston(u):
    """Cycle time of a piston; x = (weight, area, volume, gas temp.),
    s = (ambient temp., pressure)."""
    x1, x2, x3, x4, s1, s2 = u.T
    k = 1000.0
    a = s1 * x2 + 19.62 * x1 - k * x3 / x2
    v = x2 / (2 * k) * (np.sqrt(a * a + 4 * k * s1 * x3 * s2 / x4) - a)
    return 2 * np.pi * np.sqrt(x1 / (k + x2 * x2 * s1 * x3 * s2 / (x4 * v * v)))


def trid(u):
    return np.sum((u - 1.0) ** 2, axis=1) - np.sum(u[:, 1:] * u[:, :-1], axis=1)


def otl(u):
    """Midpoint voltage of a push-pull circuit, current gain s last."""
    x1, x2, x3, x4, x5, s = u.T
    h = 12.0 * x2 / (x1 + x2)
    g = s * (x5 + 9.0)
    return (h + 0.74) * g / (g + x3) + 11.35 * x3 / (g + x3) + 0.74 * x3 * g / ((g + x3) * x4)


def _signed_pow(z, p):
    return np.sign(z) * np.abs(z) ** p


def branin_mod(u):
    x, s = u.T
    b = (s - 5.1 * x * x / (4 * np.pi ** 2) + 5 * x / np.pi - 6) ** 2 + 10 * (1 - 1 / (8 * np.pi)) * np.cos(x) + 10
    return b / 12.0 + 3 * np.sin(_signed_pow(x, 1.25)) + np.sin(_signed_pow(s, 1.25))


def _camel(x, s):
    return (4 - 2.1 * x * x + x ** 4 / 3) * x * x + x * s + (4 * s * s - 4) * s * s


def camel_pair(u):
    x1, x2, s1, s2 = u.T
    return 0.5 * _camel(x1, s1) + 0.5 * _camel(x2, s2)


HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.5],
    [0.05, 10.0, 17.0, 0.1],
    [3.0, 3.5, 1.7, 10.0],
    [17.0, 8.0, 0.05, 10.0],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124],
    [2329, 4135, 8307, 3736],
    [2348, 1451, 3522, 2883],
    [4047, 8828, 8732, 5743],
])


def hartmann4(u):
    """Rescaled four-dimensional Hartmann function (first four columns of
    the six-dimensional coefficient tables)."""
    d2 = (u[:, None, :] - HARTMANN_P[None]) ** 2
    inner = np.exp(-np.sum(HARTMANN_A[None] * d2, axis=2))
    return (1.1 - inner @ HARTMANN_ALPHA) / 0.839


def _box(lo, hi, names):
    return BoxDomain(tuple(lo), tuple(hi), tuple(names))


def _problems():
    piston_s = _box([90000, 290], [110000, 296], ["s1", "s2"])
    trid_s = _box([-49] * 3, [49] * 3, ["s1", "s2", "s3"])
    return {
        "piston": QsiProblem(
            "piston", piston,
            _box([30, 0.005, 0.002, 340], [60, 0.02, 0.01, 360], ["x1", "x2", "x3", "x4"]),
            piston_s, (arcsine_icdf(90000, 110000), arcsine_icdf(290, 296)),
            RegionFamily("lower", 1.12, 1.12), 0.05,
        ),
        "trid": QsiProblem(
            "trid", trid, _box([-49] * 4, [49] * 4, ["x1", "x2", "x3", "x4"]), trid_s,
            (uniform_icdf(-49, 49),) * 3, RegionFamily("upper", 4700.0, 4700.0), 0.10,
        ),
        "otl": QsiProblem(
            "otl", otl,
            _box([50, 25, 0.5, 1.2, 0.25], [150, 70, 3, 2.5, 1.2], ["x1", "x2", "x3", "x4", "x5"]),
            _box([-50], [300], ["s"]), (truncnorm_icdf(175.0, 50.0, -50.0, 300.0),),
            RegionFamily("upper", 2.65, 2.65), 0.05,
        ),
        "branin": QsiProblem(
            "branin", branin_mod, _box([-5], [10], ["x"]), _box([0], [15], ["s"]),
            (beta_icdf(7.5, 1.9, 0.0, 15.0),), RegionFamily("lower", 7.5, 7.5), 0.05,
        ),
        "camel": QsiProblem(
            "camel", camel_pair, _box([-2, -2], [2, 2], ["x1", "x2"]), _box([-1, -1], [1, 1], ["s1", "s2"]),
            (uniform_icdf(-1, 1), uniform_icdf(-1, 1)), RegionFamily("lower", 1.2, 1.2), 0.15,
        ),
        "hartmann4": QsiProblem(
            "hartmann4", hartmann4, _box([0, 0], [1, 1], ["x1", "x2"]), _box([0, 0], [1, 1], ["s1", "s2"]),
            (uniform_icdf(0, 1), uniform_icdf(0, 1)), RegionFamily("upper", -1.1, -1.1), 0.6,
        ),
    }


PROBLEMS = _problems()


def get_problem(name):
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------------------
# Oracles


def _xs_grid(x, s):
    x = np.atleast_2d(x)
    return np.column_stack([np.repeat(x, s.shape[0], axis=0), np.tile(s, (x.shape[0], 1))])


def oracle_probability(problem, x, n_mc, rng, chunk=200_000):
    """Plain Monte Carlo estimate of P(f(x, S) in C) and its binomial SE.

    ``x`` may be one point or a (m, d_X) array; a fresh S-sample is drawn
    for every point.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.empty(xs.shape[0])
    for i, xi in enumerate(xs):
        hits = 0
        for start in range(0, n_mc, chunk):
            m = min(chunk, n_mc - start)
            s = sample_ps(m, problem.marginals, rng)
            hits += int(problem.region.contains(problem.evaluate(_xs_grid(xi, s))).sum())
        p[i] = hits / n_mc
    se = np.sqrt(p * (1 - p) / n_mc)
    if np.ndim(x) == 1:
        return float(p[0]), float(se[0])
    return p, se


class TruthOracle:
    """Membership in Gamma(f) decided on a fixed quasi-random S-sample."""

    def __init__(self, problem, n_s=8192, budget=2_000_000):
        self.problem = problem
        self.sgrid = quantize_ps(sobol_points(n_s, problem.s_domain.dim), problem.marginals, problem.s_domain)
        self.n_s = n_s
        self.chunk = max(1, budget // n_s)
        self.k = int(math.floor(problem.alpha * n_s + 1e-9)) + 1

    def severity(self, values):
        """Scalar h with C_theta = {h >= level(theta)}."""
        reg = self.problem.region
        if reg.kind == "lower":
            return -values[..., reg.output]
        if reg.kind == "upper":
            return values[..., reg.output]
        b = np.asarray(reg.baselines)
        return np.max(np.abs(values[..., : b.size] - b) / np.abs(b), axis=-1)

    def level(self, theta):
        kind = self.problem.region.kind
        return -theta if kind == "lower" else theta

    def score(self, xs):
        """k-th largest severity over the S-sample, k = floor(alpha n) + 1:
        x is a member at level t iff score(x) < t."""
        xs = np.atleast_2d(xs)
        out = np.empty(xs.shape[0])
        s = self.sgrid.points
        for i in range(0, xs.shape[0], self.chunk):
            xc = xs[i:i + self.chunk]
            h = self.severity(self.problem.evaluate(_xs_grid(xc, s))).reshape(xc.shape[0], -1)
            out[i:i + self.chunk] = -np.partition(-h, self.k - 1, axis=1)[:, self.k - 1]
        return out

    def probability(self, xs):
        xs = np.atleast_2d(xs)
        out = np.empty(xs.shape[0])
        s = self.sgrid.points
        for i in range(0, xs.shape[0], self.chunk):
            xc = xs[i:i + self.chunk]
            inside = self.problem.region.contains(self.problem.evaluate(_xs_grid(xc, s)))
            out[i:i + self.chunk] = inside.reshape(xc.shape[0], -1).mean(axis=1)
        return out

    def member(self, xs):
        return self.probability(xs) <= self.problem.alpha + 1e-12


# ---------------------------------------------------------------------------
# Reference clouds


@dataclass
class ReferenceCloud:
    problem: str
    points: np.ndarray
    oracle_p: np.ndarray
    oracle_se: np.ndarray
    volume_fraction: float          # estimate of lambda(Gamma) / lambda(X)
    levels: list = field(default_factory=list)
    seed: int = 0
    n_mc: int = 0
    n_truth: int = 0
    content_hash: str = ""

    @property
    def size(self):
        return self.points.shape[0]


def cache_dir():
    path = Path(os.environ.get("QSI_CACHE_DIR", Path.home() / ".cache" / "qsieem"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cloud_text(cloud, names):
    buf = io.StringIO()
    buf.write(f"# problem = {cloud.problem}\n")
    buf.write(f"# volume_fraction = {cloud.volume_fraction:.17g}\n")
    buf.write("# levels = " + " ".join(f"{v:.17g}" for v in cloud.levels) + "\n")
    buf.write(f"# n_truth = {cloud.n_truth}\n")
    buf.write(",".join(list(names) + ["oracle_p", "oracle_se", "seed", "n_mc"]) + "\n")
    for x, p, se in zip(cloud.points, cloud.oracle_p, cloud.oracle_se):
        buf.write(",".join("%.17g" % v for v in x) + f",{p:.17g},{se:.17g},{cloud.seed},{cloud.n_mc}\n")
    return buf.getvalue()


def write_cloud(path, cloud, names):
    text = _cloud_text(cloud, names)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return hashlib.sha256(text.encode()).hexdigest()


def read_cloud(path):
    text = Path(path).read_text()
    meta, rows = {}, []
    header = None
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows).reshape(-1, len(header))
    d = len(header) - 4
    return ReferenceCloud(
        problem=meta["problem"], points=arr[:, :d], oracle_p=arr[:, d], oracle_se=arr[:, d + 1],
        volume_fraction=float(meta["volume_fraction"]),
        levels=[float(v) for v in meta["levels"].split()] if meta.get("levels") else [],
        seed=int(arr[0, d + 2]) if arr.size else 0, n_mc=int(arr[0, d + 3]) if arr.size else 0,
        n_truth=int(meta.get("n_truth", 0)), content_hash=hashlib.sha256(text.encode()).hexdigest(),
    )


def subset_simulation(oracle, n, p0, rng, sweeps=20, max_levels=40, a_target=0.25, stall_levels=3, stall_tol=1e-3):
    """Nested-level sampler for {x : score(x) < t*} under the uniform law on X.

    Returns (points, volume_fraction, levels). Points are the final
    population restricted to the target set, approximately uniform on it.
    Fails once the level has moved by less than ``stall_tol`` (relative to
    its distance from t*) over ``stall_levels`` levels: the population has
    then settled on a minimum of the score that lies above t*.
    """
    problem = oracle.problem
    dom = problem.x_domain
    t_star = oracle.level(problem.region.terminal)
    pop = ParticlePopulation(dom.uniform(n, rng), np.log(dom.widths / math.sqrt(12.0)))
    score = oracle.score(pop.points)
    log_vol = 0.0
    levels = []
    for _ in range(max_levels):
        inside = score < t_star
        if inside.mean() >= p0:
            log_vol += math.log(inside.mean())
            return pop.points[inside], math.exp(log_vol), levels
        t = float(np.quantile(score, p0))
        keep = score < t
        if not keep.any():
            # ties: keep the best score only, with a level the moves can respect
            t = float(np.nextafter(score.min(), np.inf))
            keep = score < t
        frac = keep.mean()
        log_vol += math.log(frac)
        levels.append(t)
        log.info("%s level %d: t=%.6g (target %.6g), kept %.3f, log volume %.3f",
                 problem.name, len(levels), t, t_star, frac, log_vol)
        if len(levels) > stall_levels:
            moved = levels[-stall_levels - 1] - t
            if moved <= stall_tol * (t - t_star):
                raise OracleFailureError(
                    f"no member of the quantile set found for {problem.name}: the level settled at {t:.6g}, "
                    f"above the target {t_star:.6g}, after {len(levels)} levels")
        idx = residual_resample(keep.astype(float), rng)
        pop = ParticlePopulation(pop.points[idx], pop.log_steps)

        def target(x, _t=t):
            return oracle.score(x) < _t

        pop, _ = adaptive_mh_move(pop, target, dom, sweeps, a_target, rng)
        score = oracle.score(pop.points)
    raise OracleFailureError(f"no member of the quantile set found for {problem.name} after {max_levels} levels")


CLOUD_DEFAULTS = dict(n_particles=2000, p0=0.3, n_truth=8192, n_mc=100_000, sweeps=20)


def cloud_path(problem, seed=0, **kw):
    """Cache location of a reference cloud; keyed by everything that
    changes its content."""
    opts = {**CLOUD_DEFAULTS, **kw}
    key = "|".join([problem.name, str(seed), repr(sorted(opts.items())),
                    repr(problem.region.terminal), repr(problem.alpha), "v1"])
    digest = hashlib.sha256(key.encode()).hexdigest()[:12]
    return cache_dir() / f"cloud-{problem.name}-{seed}-{digest}.csv"


def load_reference_cloud(problem, seed=0, **kw):
    """Cached cloud or None; a cached build failure is raised again."""
    path = cloud_path(problem, seed, **kw)
    failed = path.with_suffix(".failed")
    if failed.exists():
        raise OracleFailureError(failed.read_text().strip())
    return read_cloud(path) if path.exists() else None


def build_reference_cloud(problem, seed=0, n_particles=2000, p0=0.3, n_truth=8192, n_mc=100_000,
                          sweeps=20, use_cache=True, verify=True):
    """Approximately uniform sample of Gamma(f) with its volume fraction.

    Membership is decided on a fixed quasi-random S-sample of size
    ``n_truth``; each retained point is then checked by plain Monte Carlo
    with ``n_mc`` draws (recorded, not used for selection).
    """
    path = cloud_path(problem, seed, n_particles=n_particles, p0=p0, n_truth=n_truth, n_mc=n_mc, sweeps=sweeps)
    if use_cache and path.exists():
        return read_cloud(path)
    from .rng import substream

    failed = path.with_suffix(".failed")
    if use_cache and failed.exists():
        raise OracleFailureError(failed.read_text().strip())
    rng = substream(seed, "oracle")
    oracle = TruthOracle(problem, n_truth)
    try:
        pts, vol, levels = subset_simulation(oracle, n_particles, p0, rng, sweeps)
        if pts.shape[0] == 0:
            raise OracleFailureError(f"empty reference cloud for {problem.name}")
    except OracleFailureError as exc:
        # deterministic given the key, so the failure is cached like a cloud
        if use_cache:
            failed.write_text(str(exc) + "\n")
        raise
    if verify:
        p, se = oracle_probability(problem, pts, n_mc, rng)
    else:
        p = oracle.probability(pts)
        se = np.sqrt(p * (1 - p) / n_truth)
        n_mc = n_truth
    cloud = ReferenceCloud(problem.name, pts, np.atleast_1d(p), np.atleast_1d(se), vol, levels, seed, n_mc, n_truth)
    if use_cache:
        cloud.content_hash = write_cloud(path, cloud, problem.x_domain.names)
    else:
        cloud.content_hash = hashlib.sha256(_cloud_text(cloud, problem.x_domain.names).encode()).hexdigest()
    return cloud


# ---------------------------------------------------------------------------
# Error metrics


class MixtureProposal:
    """Uniform law on X mixed with Gaussian kernels around anchor sets.

    Each anchor set gets kernels at two bandwidths proportional to its
    per-dimension spread.
    """

    def __init__(self, domain, anchor_sets, uniform_weight=0.1, scales=(0.25, 1.0)):
        self.domain = domain
        self.widths = domain.widths
        self.comps = []  # (weight, centers, sd)
        sets = [np.atleast_2d(a) for a in anchor_sets if a is not None and len(a)]
        if not sets:
            uniform_weight = 1.0
        self.uniform_weight = uniform_weight
        w_each = (1 - uniform_weight) / max(1, len(sets) * len(scales))
        for a in sets:
            spread = a.std(axis=0) if a.shape[0] > 1 else np.zeros(a.shape[1])
            spread = np.maximum(spread, 1e-3 * self.widths)
            for sc in scales:
                self.comps.append((w_each, a, sc * spread))

    def sample(self, n, rng):
        weights = np.array([self.uniform_weight] + [c[0] for c in self.comps])
        counts = rng.multinomial(n, weights / weights.sum())
        out = [self.domain.uniform(counts[0], rng)]
        for (w, centers, sd), m in zip(self.comps, counts[1:]):
            idx = rng.integers(centers.shape[0], size=m)
            out.append(centers[idx] + sd * rng.standard_normal((m, centers.shape[1])))
        return np.vstack(out)

    def density_ratio(self, x):
        """(uniform density on X) / (mixture density), 0 outside X."""
        x = np.atleast_2d(x)
        log_vol = float(np.sum(np.log(self.widths)))
        terms = [np.full(x.shape[0], math.log(self.uniform_weight) - log_vol) if self.uniform_weight > 0
                 else np.full(x.shape[0], -np.inf)]
        for w, centers, sd in self.comps:
            z = (x[:, None, :] - centers[None]) / sd
            logk = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(sd)) - 0.5 * x.shape[1] * math.log(2 * math.pi)
            terms.append(math.log(w) + logsumexp(logk, axis=1) - math.log(centers.shape[0]))
        log_q = logsumexp(np.stack(terms), axis=0)
        ratio = np.exp(-log_vol - log_q)
        return np.where(self.domain.contains(x), ratio, 0.0)


@dataclass
class ErrorEstimate:
    value: float
    se: float
    false_negative: float
    false_positive: float
    fn_se: float
    fp_se: float


def relative_error(estimator, cloud, problem, rng, anchors=None, n_is=10_000, truth=None):
    """lambda(Gamma_hat symmetric-difference Gamma) / lambda(Gamma).

    False negatives are the fraction of cloud points rejected by the
    estimator. False positives are estimated by importance sampling
    from a uniform-plus-kernels mixture around the cloud and ``anchors``.
    """
    if cloud.size == 0:
        raise ValueError("empty reference cloud")
    inside = np.asarray(estimator(cloud.points), dtype=bool)
    fn = 1.0 - inside.mean()
    fn_se = math.sqrt(fn * (1 - fn) / cloud.size)
    truth = truth or TruthOracle(problem, cloud.n_truth or 8192)
    prop = MixtureProposal(problem.x_domain, [cloud.points, anchors])
    x = prop.sample(n_is, rng)
    ratio = prop.density_ratio(x)
    ok = ratio > 0
    term = np.zeros(n_is)
    if ok.any():
        est = np.asarray(estimator(x[ok]), dtype=bool)
        cand = np.flatnonzero(ok)[est]
        if cand.size:
            false_pos = ~truth.member(x[cand])
            term[cand[false_pos]] = ratio[cand[false_pos]]
    vol = cloud.volume_fraction
    fp = term.mean() / vol
    fp_se = term.std(ddof=1) / math.sqrt(n_is) / vol
    return ErrorEstimate(float(fn + fp), math.hypot(fn_se, fp_se), float(fn), float(fp), fn_se, float(fp_se))


def set_distance(member_a, member_b, cloud, problem, rng, anchors=None, n_is=10_000):
    """Importance-sampling estimate of lambda(A symmetric-difference B) /
    lambda(Gamma), symmetric in (A, B). Returns (value, se)."""
    prop = MixtureProposal(problem.x_domain, [cloud.points, anchors])
    x = prop.sample(n_is, rng)
    ratio = prop.density_ratio(x)
    diff = np.asarray(member_a(x), dtype=bool) != np.asarray(member_b(x), dtype=bool)
    term = np.where(diff, ratio, 0.0)
    vol = cloud.volume_fraction
    return float(term.mean() / vol), float(term.std(ddof=1) / math.sqrt(n_is) / vol)
