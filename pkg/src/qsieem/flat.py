"""Single-level acquisition for moderately small quantile sets.

Each step rebuilds the integration grid: X-points are drawn uniformly,
scored by the Monte Carlo posterior misclassification min(pi, 1 - pi),
and a small weighted subset is crossed with a fresh sample of P_S. The
EEM criterion is then maximized over weighted candidates from that grid.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .design import WeightedSGrid, maximin_lhs, quantize_ps, sample_ps, sobol_points
from .eem import EemCriterion, GaussHermiteRule
from .gp import NU_GRID, Dataset, fit_bundle
from .quantile import pi_n_estimate, plugin_member, predict_grid
from .rng import RngStreams
from .testbed import TruthOracle

log = logging.getLogger(__name__)


@dataclass
class FlatSettings:
    steps: int = 80
    n0: int = None
    s_sample: int = 100
    x_per_dim: int = 500
    n_paths: int = 100
    x_subset: int = 40
    candidates: int = 250
    gh_nodes: int = 10
    lhs_trials: int = 1000
    reml_starts: int = 5
    eval_every: int = 10
    eval_grid: int = 10_000
    eval_s: int = 256
    truth_s: int = 8192


@dataclass
class FlatResult:
    problem: str
    method: str
    seed: int
    data: Dataset
    steps: list = field(default_factory=list)       # evaluated step indices
    misclass: list = field(default_factory=list)    # proportion on the grid
    fallbacks: int = 0
    wall_time: float = 0.0

    @property
    def final_misclass(self):
        return self.misclass[-1]


def evaluation_grid(domain, n):
    """Regular grid of about n points in X (n points when d_X = 1)."""
    d = domain.dim
    m = int(round(n ** (1.0 / d)))
    axes = [np.linspace(lo, hi, m) for lo, hi in zip(domain.lo, domain.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


class MisclassificationMeter:
    """Proportion of grid points where the plug-in estimator disagrees
    with the truth."""

    def __init__(self, problem, settings):
        self.problem = problem
        self.grid = evaluation_grid(problem.x_domain, settings.eval_grid)
        self.truth = TruthOracle(problem, settings.truth_s).member(self.grid)
        self.sgrid = quantize_ps(sobol_points(settings.eval_s, problem.s_domain.dim),
                                 problem.marginals, problem.s_domain)

    def __call__(self, bundle, chunk=500):
        wrong = 0
        for i in range(0, self.grid.shape[0], chunk):
            pred = predict_grid(bundle, self.grid[i:i + chunk], self.sgrid)
            est = plugin_member(pred, self.sgrid, self.problem.region, self.problem.alpha)
            wrong += int((est != self.truth[i:i + chunk]).sum())
        return wrong / self.grid.shape[0]


def _weighted_subset(weights, m, rng):
    """Index of the largest weight plus m - 1 others drawn without
    replacement proportionally to the weights."""
    top = int(np.argmax(weights))
    rest = np.delete(np.arange(weights.size), top)
    w = weights[rest]
    pos = rest[w > 0]
    k = min(m - 1, pos.size)
    if k == 0:
        return np.array([top])
    p = weights[pos] / weights[pos].sum()
    return np.concatenate([[top], rng.choice(pos, size=k, replace=False, p=p)])


def eem_step(bundle, problem, settings, rule, rng):
    """Next evaluation point of the flat EEM strategy; returns (u, fallback)."""
    s_pts = sample_ps(settings.s_sample, problem.marginals, rng)
    sgrid = WeightedSGrid(s_pts, np.full(settings.s_sample, 1.0 / settings.s_sample))
    xs = problem.x_domain.uniform(settings.x_per_dim * problem.d_x, rng)
    pi = np.array([
        pi_n_estimate(bundle, x, sgrid, problem.region, problem.alpha, settings.n_paths, rng) for x in xs
    ])
    idx = _weighted_subset(np.minimum(pi, 1 - pi), settings.x_subset, rng)
    crit = EemCriterion(bundle, xs[idx], sgrid, problem.region, problem.alpha, rule)
    pool = crit.pool()
    cand = pool.sample(settings.candidates, rng)
    if cand.size == 0:
        total_var = (crit.sd ** 2).sum(axis=-1)
        return pool.points[int(np.argmax(total_var))], True
    vals = crit.values(crit.new_state(), pool.points[cand])
    return pool.points[cand[int(np.argmax(vals))]], False


def run_flat(problem, method="eem", settings=None, seed=0, meter=None):
    """Sequential single-point acquisition; ``method`` is 'eem' or 'random'."""
    if method not in ("eem", "random"):
        raise ValueError(f"unknown flat method {method!r}")
    t0 = time.perf_counter()
    cfg = settings or FlatSettings()
    rng = RngStreams(seed)
    u_dom = problem.u_domain
    n0 = cfg.n0 or 10 * u_dom.dim
    design = maximin_lhs(n0, u_dom, cfg.lhs_trials, rng["design"])
    data = Dataset(design, problem.evaluate(design), u_dom.lo, u_dom.hi)
    hypers, bundle = fit_bundle(data, NU_GRID, rng["reml-starts"], cfg.reml_starts)
    meter = meter or MisclassificationMeter(problem, cfg)
    rule = GaussHermiteRule.standard(cfg.gh_nodes)
    result = FlatResult(problem.name, method, int(seed), data)
    result.steps.append(0)
    result.misclass.append(meter(bundle))
    acq = rng["acquisition"]
    for step in range(1, cfg.steps + 1):
        if method == "eem":
            u, fallback = eem_step(bundle, problem, cfg, rule, acq)
            result.fallbacks += int(fallback)
        else:
            u = u_dom.uniform(1, acq)[0]
        data = data.append(u, problem.evaluate(u))
        hypers, bundle = fit_bundle(data, NU_GRID, rng["reml-starts"], cfg.reml_starts, warm_start=hypers)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            result.steps.append(step)
            result.misclass.append(meter(bundle))
            log.info("%s %s seed %d step %d: misclassified %.4f", problem.name, method, seed, step,
                     result.misclass[-1])
    result.data = data
    result.wall_time = time.perf_counter() - t0
    return result
