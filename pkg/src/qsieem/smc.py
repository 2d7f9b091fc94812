"""Sequential Monte Carlo driver for small quantile sets.

A particle population in X is concentrated on a decreasing sequence of
quantile sets. Each stage calibrates an intermediate critical region,
acquires batches with the EEM criterion until the stopping metric is
small, then resamples and moves the particles toward the relaxed
estimate of the current set.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .design import latin_hypercube, maximin_lhs, quantize_ps, sobol_points
from .eem import CandidatePool, EemCriterion, GaussHermiteRule, greedy_batch_select, misclass_weight, product_points, xi_stopping
from .gp import NU_GRID, Dataset, DegenerateBatchError, fit_bundle
from .quantile import CalibrationError, calibrate_beta, plugin_member, predict_grid, relaxed_member
from .rng import RngStreams

log = logging.getLogger(__name__)


class DegenerateWeightsError(RuntimeError):
    """All resampling weights vanish."""


class InvalidPopulationError(RuntimeError):
    """A particle lies outside the support of the move target."""


@dataclass
class ParticlePopulation:
    points: np.ndarray      # (M, d_X)
    log_steps: np.ndarray   # (d_X,) log of the per-dimension proposal sd
    stage: int = 0

    @property
    def size(self):
        return self.points.shape[0]

    def copy(self):
        return ParticlePopulation(self.points.copy(), self.log_steps.copy(), self.stage)

    @classmethod
    def initial(cls, domain, m, rng):
        """Random Latin hypercube population with uniform-sd step sizes."""
        pts = domain.from_unit(latin_hypercube(m, domain.dim, rng))
        return cls(pts, np.log(domain.widths / math.sqrt(12.0)))


@dataclass
class StoppingConfig:
    tau_intermediate: float = 1.0 / 3.0
    tau_final: float = 1.0 / 5.0
    restart_low: float = 0.10
    restart_high: float = 0.75
    rho: float = 0.35
    kappa: float = 1.1
    move_steps: int = 25

    def __post_init__(self):
        if not 0 < self.tau_final <= self.tau_intermediate:
            raise ValueError("need 0 < tau_final <= tau_intermediate")
        if not 0 < self.restart_low < self.rho < self.restart_high < 1:
            raise ValueError("need 0 < restart_low < rho < restart_high < 1")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")


@dataclass
class QsiSettings:
    """Everything a run needs besides the problem and the seed."""

    batch_size: int = 1
    n0: int = None
    particles: int = 250
    sobol_size: int = 512
    criterion_subset: int = 100
    inducing_size: int = 250
    n_starts: int = 100
    local_budget: int = 50
    gh_nodes: int = 10
    lhs_trials: int = 1000
    budget: int = 1000
    max_restarts: int = 5
    a_target: float = 0.25
    reml_starts: int = 5
    xi_on_population: bool = True
    calibration_passes: int = 2
    stopping: StoppingConfig = field(default_factory=StoppingConfig)


@dataclass
class StageState:
    stage: int
    theta: float
    beta: float
    n_evals: int
    theta_prev: float
    snapshot: ParticlePopulation
    batches: int = 0
    xi: float = math.inf
    relaxed_fraction: float = math.nan
    terminal: bool = False


# ---------------------------------------------------------------------------
# Resampling and moves


def residual_resample(weights, rng, m=None):
    """Residual resampling: integer quotas floor(M w_i) plus multinomial
    draws on the residuals. Returns M indices in increasing order."""
    w = np.asarray(weights, dtype=float).ravel()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateWeightsError("all resampling weights are zero")
    m = w.size if m is None else int(m)
    scaled = m * w / total
    counts = np.floor(scaled).astype(int)
    rest = m - counts.sum()
    if rest > 0:
        resid = scaled - counts
        counts += rng.multinomial(rest, resid / resid.sum())
    return np.repeat(np.arange(w.size), counts)


def adaptive_mh_move(pop, target, domain, steps, a_target, rng, eps=math.log(2.0)):
    """Random-walk Metropolis moves for an indicator target.

    ``target(points) -> bool array``. A proposal is accepted iff it lies in
    the box ``domain`` and in the target set. After each sweep every log
    step size moves by +eps if the population acceptance rate exceeds
    ``a_target`` and by -eps otherwise. Returns the moved population and
    the per-sweep acceptance rates.
    """
    x = pop.points.copy()
    if not np.all(target(x)) or not np.all(domain.contains(x)):
        raise InvalidPopulationError("particles outside the move target")
    log_steps = pop.log_steps.copy()
    rates = []
    for _ in range(steps):
        prop = x + np.exp(log_steps) * rng.standard_normal(x.shape)
        ok = domain.contains(prop)
        if ok.any():
            ok[ok] = target(prop[ok])
        x[ok] = prop[ok]
        rate = float(ok.mean())
        rates.append(rate)
        log_steps = log_steps + (eps if rate > a_target else -eps)
    return ParticlePopulation(x, log_steps, pop.stage), rates


# ---------------------------------------------------------------------------
# Region calibration


def relaxed_fraction(pred, sgrid, region, alpha, beta):
    return float(relaxed_member(pred, sgrid, region, alpha, beta).mean())


def _beta_for(pred, sgrid, region, alpha, kappa, beta_fallback):
    try:
        return calibrate_beta(pred, sgrid, region, alpha, kappa)[0]
    except CalibrationError:
        return beta_fallback


def calibrate_next_region(pred, sgrid, family, theta_k, alpha, beta, rho, iters=60):
    """Region parameter between ``theta_k`` and the terminal one whose
    relaxed-member fraction is closest to ``rho``.

    Returns (theta, fraction, stagnant). The terminal parameter is
    returned whenever its fraction is still at least ``rho``.
    """
    term = family.terminal

    def frac(t):
        return relaxed_fraction(pred, sgrid, family.at(theta_k + t * (term - theta_k)), alpha, beta)

    f_end = frac(1.0)
    if f_end >= rho:
        return term, f_end, False
    f_start = frac(0.0)
    if f_start <= rho:
        return theta_k, f_start, True
    lo, hi, f_lo, f_hi = 0.0, 1.0, f_start, f_end
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = frac(mid)
        if fm >= rho:
            lo, f_lo = mid, fm
        else:
            hi, f_hi = mid, fm
    t, f = (lo, f_lo) if abs(f_lo - rho) <= abs(f_hi - rho) else (hi, f_hi)
    return theta_k + t * (term - theta_k), f, False


def set_region(pred, sgrid, family, theta_prev, alpha, beta, cfg, passes):
    """Alternate region and relaxation calibration on a population."""
    theta, frac, stagnant = theta_prev, math.nan, False
    for _ in range(passes):
        theta, frac, stagnant = calibrate_next_region(pred, sgrid, family, theta_prev, alpha, beta, cfg.rho)
        beta = _beta_for(pred, sgrid, family.at(theta), alpha, cfg.kappa, beta)
    frac = relaxed_fraction(pred, sgrid, family.at(theta), alpha, beta)
    return theta, beta, frac, stagnant


def fraction_violates(frac, cfg, terminal):
    """The high bound is not enforced once the terminal region is reached,
    where the fraction is no longer controlled by calibration."""
    if frac < cfg.restart_low:
        return True
    return (not terminal) and frac > cfg.restart_high


def restart_check(frac, cfg, terminal=False):
    """'pass' or 'restart' for a relaxed-member fraction."""
    return "restart" if fraction_violates(frac, cfg, terminal) else "pass"


# ---------------------------------------------------------------------------
# Driver


@dataclass
class RunResult:
    problem: str
    settings: QsiSettings
    seed: int
    data: Dataset
    hypers: list
    bundle: object
    sgrid: object
    region: object
    alpha: float
    particles: np.ndarray
    eval_stage: list
    eval_batch: list
    stages: list
    batches: list
    complete: bool
    failed: bool
    wall_time: float
    restarts: int

    @property
    def n_batches(self):
        return len(self.batches)

    @property
    def n_points(self):
        return self.data.n

    def estimator(self, chunk=256):
        """Plug-in membership closure of the terminal quantile set."""
        def member(xs):
            xs = np.atleast_2d(xs)
            out = np.empty(xs.shape[0], dtype=bool)
            for i in range(0, xs.shape[0], chunk):
                pred = predict_grid(self.bundle, xs[i:i + chunk], self.sgrid)
                out[i:i + chunk] = plugin_member(pred, self.sgrid, self.region, self.alpha)
            return out
        return member


class QsiRun:
    """State of one seeded run; ``execute`` performs it."""

    def __init__(self, problem, settings=None, seed=0):
        self.problem = problem
        self.cfg = settings or QsiSettings()
        self.stop = self.cfg.stopping
        self.seed = int(seed)
        self.rng = RngStreams(seed)
        self.family = problem.region
        self.alpha = problem.alpha
        self.x_domain = problem.x_domain
        self.u_domain = problem.x_domain.product(problem.s_domain)
        self.rule = GaussHermiteRule.standard(self.cfg.gh_nodes)
        self.sgrid = quantize_ps(
            sobol_points(self.cfg.sobol_size, problem.s_domain.dim), problem.marginals, problem.s_domain
        )
        self.eval_stage, self.eval_batch = [], []
        self.stage_rows, self.batch_rows = [], []
        self.restarts = 0

    # -- model -------------------------------------------------------------

    def _evaluate(self, u, stage, batch):
        y = np.asarray(self.problem.evaluate(u), dtype=float).reshape(u.shape[0], -1)
        self.eval_stage += [stage] * u.shape[0]
        self.eval_batch += [batch] * u.shape[0]
        return y

    def _fit(self):
        self.hypers, self.bundle = fit_bundle(
            self.data, NU_GRID, self.rng["reml-starts"], self.cfg.reml_starts,
            warm_start=getattr(self, "hypers", None),
        )

    # -- diagnostics -------------------------------------------------------

    def _inducing(self, pred_pop, xs, region, rng):
        """O_n drawn without replacement from xs x S~ by misclassification weight."""
        nx = xs.shape[0]
        if pred_pop.mean.shape[0] != nx:
            raise ValueError("prediction does not match the X-points")
        w = misclass_weight(pred_pop.mean, pred_pop.sd, region).ravel()
        pool = CandidatePool(product_points(xs, self.sgrid.points), w)
        return pool.points[pool.sample(self.cfg.inducing_size, rng)]

    def _xi(self, xs, pred, region):
        inducing = self._inducing(pred, xs, region, self.rng["acquisition"])
        if inducing.shape[0] == 0:
            return 0.0 if plugin_member(pred, self.sgrid, region, self.alpha).any() else math.inf
        try:
            return xi_stopping(self.bundle, inducing, xs, self.sgrid, region, self.alpha, self.rule)
        except DegenerateBatchError:
            log.warning("inducing set degenerate even after thinning")
            return math.inf

    def _xi_population(self, pop, pred, region):
        if self.cfg.xi_on_population:
            return self._xi(pop.points, pred, region)
        idx = self._subset(pop)
        return self._xi(pop.points[idx], pred.subset(idx), region)

    def _subset(self, pop):
        m = min(self.cfg.criterion_subset, pop.size)
        return np.sort(self.rng["acquisition"].choice(pop.size, size=m, replace=False))

    # -- stages ------------------------------------------------------------

    def _begin_stage(self, k, pop, theta_prev, beta):
        pred = predict_grid(self.bundle, pop.points, self.sgrid)
        theta, beta, frac, stagnant = set_region(
            pred, self.sgrid, self.family, theta_prev, self.alpha, beta, self.stop,
            self.cfg.calibration_passes,
        )
        if stagnant:
            log.info("stage %d: region calibration stagnated at theta=%g", k, theta)
        pop = replace(pop.copy(), stage=k)
        return StageState(
            stage=k, theta=theta, beta=beta, n_evals=self.data.n, theta_prev=theta_prev,
            snapshot=pop.copy(), relaxed_fraction=frac, terminal=theta == self.family.terminal,
        )

    def _tau(self, st):
        return self.stop.tau_final if st.terminal else self.stop.tau_intermediate

    def _diagnose(self, st, pop):
        """Recompute beta, relaxed fraction and Xi for a stage under the
        current model. Returns (beta, fraction, xi, pred)."""
        region = self.family.at(st.theta)
        pred = predict_grid(self.bundle, pop.points, self.sgrid)
        beta = _beta_for(pred, self.sgrid, region, self.alpha, self.stop.kappa, st.beta)
        frac = relaxed_fraction(pred, self.sgrid, region, self.alpha, beta)
        xi = self._xi_population(pop, pred, region)
        return beta, frac, xi, pred

    def _restart_stage(self, history, current):
        """Earliest stored stage whose diagnostics, recomputed under the
        current model, violate the fraction bounds or the stopping rule."""
        for st in history[:-1]:
            _, frac, xi, _ = self._diagnose(st, st.snapshot)
            if fraction_violates(frac, self.stop, st.terminal) or xi > self._tau(st):
                return st.stage
        return current

    def _acquire(self, st, pop):
        region = self.family.at(st.theta)
        idx = self._subset(pop)
        crit = EemCriterion(self.bundle, pop.points[idx], self.sgrid, region, self.alpha, self.rule)
        choice = greedy_batch_select(
            crit, self.cfg.batch_size, self.rng["acquisition"], self.u_domain.lo, self.u_domain.hi,
            self.cfg.n_starts, self.cfg.local_budget,
        )
        return choice

    def execute(self):
        t0 = time.perf_counter()
        cfg, stop = self.cfg, self.stop
        d_u = self.u_domain.dim
        n0 = cfg.n0 or 10 * d_u
        if cfg.budget < n0:
            raise ValueError("budget must be at least the initial design size")
        design = maximin_lhs(n0, self.u_domain, cfg.lhs_trials, self.rng["design"])
        y = self._evaluate(design, 0, 0)
        self.data = Dataset(design, y, self.u_domain.lo, self.u_domain.hi)
        self._fit()
        pop = ParticlePopulation.initial(self.x_domain, cfg.particles, self.rng["smc"])
        pred0 = predict_grid(self.bundle, pop.points, self.sgrid)
        theta_prev = self.family.empty_parameter(pred0.mean)
        beta = 0.5
        history = []
        k = 1
        complete = failed = False
        batch_count = 0
        consecutive = 0
        while True:
            st = self._begin_stage(k, pop, theta_prev, beta)
            history = history[: k - 1] + [st]
            pop = st.snapshot.copy()
            restart_to = None
            region = self.family.at(st.theta)
            out_of_budget = False
            while True:
                if self.data.n + cfg.batch_size > cfg.budget:
                    out_of_budget = True
                    break
                choice = self._acquire(st, pop)
                batch_count += 1
                y = self._evaluate(choice.points, k, batch_count)
                self.data = self.data.append(choice.points, y)
                self._fit()
                st.batches += 1
                st.beta, st.relaxed_fraction, st.xi, pred = self._diagnose(st, pop)
                self.batch_rows.append(dict(
                    stage=k, batch=batch_count, theta=st.theta, beta=st.beta, psi=choice.psi,
                    fallback=int(choice.fallback), xi=st.xi, relaxed_fraction=st.relaxed_fraction,
                    n=self.data.n, points=choice.points,
                ))
                log.info("stage %d batch %d: n=%d psi=%.4g xi=%.4g frac=%.3f",
                         k, batch_count, self.data.n, choice.psi, st.xi, st.relaxed_fraction)
                if fraction_violates(st.relaxed_fraction, stop, st.terminal):
                    restart_to = self._restart_stage(history, k)
                    break
                if st.xi <= self._tau(st):
                    break
            st.n_evals = self.data.n
            if out_of_budget:
                self._stage_row(st, "budget")
                break
            if restart_to is None and not st.terminal:
                # sampling phase
                region = self.family.at(st.theta)
                weights = relaxed_member(pred, self.sgrid, region, self.alpha, st.beta).astype(float)
                if not weights.any():
                    restart_to = self._restart_stage(history, k)
            if restart_to is not None:
                self._stage_row(st, f"restart->{restart_to}")
                self.restarts += 1
                consecutive += 1
                if consecutive > cfg.max_restarts:
                    failed = True
                    break
                back = history[restart_to - 1]
                pop = back.snapshot.copy()
                theta_prev, beta, k = back.theta_prev, back.beta, restart_to
                continue
            consecutive = 0
            self._stage_row(st, "")
            if st.terminal:
                complete = True
                break
            idx = residual_resample(weights, self.rng["smc"])
            pop = ParticlePopulation(pop.points[idx], pop.log_steps, k)
            beta_k = st.beta

            def target(x, _r=region, _b=beta_k):
                return relaxed_member(predict_grid(self.bundle, x, self.sgrid), self.sgrid, _r, self.alpha, _b)

            pop, _ = adaptive_mh_move(pop, target, self.x_domain, stop.move_steps, cfg.a_target, self.rng["mh"])
            theta_prev, beta, k = st.theta, st.beta, k + 1
        return RunResult(
            problem=getattr(self.problem, "name", "problem"), settings=cfg, seed=self.seed,
            data=self.data, hypers=self.hypers, bundle=self.bundle, sgrid=self.sgrid,
            region=self.family.at_terminal(), alpha=self.alpha, particles=pop.points.copy(),
            eval_stage=self.eval_stage, eval_batch=self.eval_batch, stages=self.stage_rows,
            batches=self.batch_rows, complete=complete, failed=failed,
            wall_time=time.perf_counter() - t0, restarts=self.restarts,
        )

    def _stage_row(self, st, event):
        self.stage_rows.append(dict(
            stage=st.stage, theta=st.theta, beta=st.beta, batches=st.batches, n=st.n_evals,
            xi=st.xi, relaxed_fraction=st.relaxed_fraction, terminal=int(st.terminal), event=event,
        ))


def run_qsi(problem, settings=None, seed=0):
    """Run the full sequential strategy on ``problem``."""
    return QsiRun(problem, settings, seed).execute()
