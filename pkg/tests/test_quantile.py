import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from qsieem.design import WeightedSGrid
from qsieem.gp import Dataset, posterior
from qsieem.quantile import (BETA_MAX, CalibrationError, GridPrediction, RegionFamily, calibrate_beta,
                             is_member, pi_n_estimate, plugin_member, plugin_member_bundle, predict_grid,
                             prob_in_c, relaxed_member, sample_grid_paths)

from conftest import toy_bundle, toy_hyper

LOWER = RegionFamily("lower", 0.0, 0.0)
UPPER = RegionFamily("upper", 1.0, 1.0)
BAND = RegionFamily("band", 0.2, 0.2, baselines=(1.0, -2.0))


def equal_grid(m, d=1):
    return WeightedSGrid(np.linspace(0, 1, m)[:, None].repeat(d, axis=1), np.full(m, 1.0 / m))


def test_prob_in_c_examples():
    w = np.full(4, 0.25)
    assert prob_in_c(np.full((4, 1), -1.0), w, LOWER) == 1.0
    assert prob_in_c(np.full((4, 1), 1.0), w, LOWER) == 0.0
    assert prob_in_c(np.array([[-1.0], [1.0], [-2.0], [3.0]]), w, LOWER) == 0.5


def test_region_contains_each_kind():
    assert LOWER.contains([[0.0], [0.1]]).tolist() == [True, False]
    assert UPPER.contains([[1.0], [0.9]]).tolist() == [True, False]
    vals = np.array([[1.1, -2.1], [1.3, -2.0], [1.0, -2.5]])
    assert BAND.contains(vals).tolist() == [False, True, True]
    with pytest.raises(ValueError):
        RegionFamily("band", 0.1, 0.1)
    with pytest.raises(ValueError):
        RegionFamily("middle", 0.1, 0.1)


@pytest.mark.parametrize("region", [LOWER, UPPER, BAND])
def test_empty_parameter_excludes_all_values(region):
    vals = np.random.default_rng(0).normal(scale=3.0, size=(50, 2))
    assert not region.at(region.empty_parameter(vals)).contains(vals).any()


def test_prior_mean_far_inside_region_is_not_member():
    hyper = toy_hyper(2, mean=-10.0)
    data = Dataset(np.zeros((0, 2)), np.zeros((0, 1)), [0, 0], [1, 1])
    bundle = posterior(data, hyper)
    assert not plugin_member_bundle(bundle, np.array([[0.3], [0.8]]), equal_grid(5), LOWER, 0.05).any()


def test_tie_at_alpha_is_member():
    mean = np.array([[[-1.0], [1.0], [1.0], [1.0]]])
    pred = GridPrediction(mean, np.zeros_like(mean))
    grid = WeightedSGrid(np.zeros((4, 1)), np.full(4, 0.25))
    assert plugin_member(pred, grid, LOWER, 0.25)[0]
    assert not plugin_member(pred, grid, LOWER, 0.2499)[0]
    assert relaxed_member(pred, grid, LOWER, 0.25, 0.9)[0]
    assert is_member(0.1 + 0.2, 0.3)


def random_state(seed, region):
    rng = np.random.default_rng(seed)
    q = 2 if region.kind == "band" else 1
    base = np.array(region.baselines or (0.0,))[:q]
    mean = base + rng.normal(scale=0.5, size=(20, 8, q))
    sd = rng.uniform(0, 0.5, size=(20, 8, q))
    w = rng.dirichlet(np.ones(8))
    return GridPrediction(mean, sd), WeightedSGrid(rng.uniform(size=(8, 1)), w / w.sum()), rng


@pytest.mark.parametrize("region", [LOWER, UPPER, BAND])
def test_beta_half_is_plugin(region):
    pred, grid, _ = random_state(1, region)
    assert np.array_equal(relaxed_member(pred, grid, region, 0.2, 0.5), plugin_member(pred, grid, region, 0.2))
    with pytest.raises(ValueError):
        relaxed_member(pred, grid, region, 0.2, 1.0)
    with pytest.raises(ValueError):
        relaxed_member(pred, grid, region, 0.2, 0.4)


def test_plugin_nested_in_relaxed_over_1000_states():
    regions = [LOWER, UPPER, BAND]
    for seed in range(1000):
        region = regions[seed % 3]
        pred, grid, rng = random_state(seed, region)
        alpha = rng.uniform(0.01, 0.99)
        beta = rng.uniform(0.5, BETA_MAX)
        plug = plugin_member(pred, grid, region, alpha)
        assert np.all(relaxed_member(pred, grid, region, alpha, beta) >= plug)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), b1=st.floats(0.5, 0.99), b2=st.floats(0.5, 0.99))
def test_relaxed_membership_monotone_in_beta(seed, b1, b2):
    lo, hi = sorted((b1, b2))
    for region in (LOWER, UPPER, BAND):
        pred, grid, _ = random_state(seed, region)
        assert np.all(relaxed_member(pred, grid, region, 0.3, hi) >= relaxed_member(pred, grid, region, 0.3, lo))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), t1=st.floats(-1, 1), t2=st.floats(-1, 1))
def test_enlarging_region_shrinks_membership(seed, t1, t2):
    small, large = sorted((t1, t2))
    pred, grid, _ = random_state(seed, LOWER)
    # lower tail: larger theta means larger C
    assert np.all(plugin_member(pred, grid, LOWER.at(large), 0.3) <= plugin_member(pred, grid, LOWER.at(small), 0.3))
    # upper tail and band: smaller theta means larger C
    pred, grid, _ = random_state(seed, UPPER)
    assert np.all(plugin_member(pred, grid, UPPER.at(small), 0.3) <= plugin_member(pred, grid, UPPER.at(large), 0.3))
    pred, grid, _ = random_state(seed, BAND)
    s, l = abs(small), abs(large)
    s, l = min(s, l), max(s, l)
    assert np.all(plugin_member(pred, grid, BAND.at(s), 0.3) <= plugin_member(pred, grid, BAND.at(l), 0.3))


def test_band_shift_leaves_inside_means_and_clamps_at_baseline():
    mean = np.array([[1.1, -2.0], [2.0, -2.0], [0.0, -2.0]])
    sd = np.ones_like(mean)
    out = BAND.relax(mean, sd, 3.0)
    assert np.allclose(out, [[1.1, -2.0], [1.0, -2.0], [1.0, -2.0]])
    out = BAND.relax(mean, sd, 0.1)
    assert np.allclose(out, [[1.1, -2.0], [1.9, -2.0], [0.1, -2.0]])


def test_band_probability_is_product_of_band_masses():
    rng = np.random.default_rng(4)
    mean, sd = np.array([1.05, -2.3]), np.array([0.2, 0.4])
    draws = mean + sd * rng.standard_normal((200_000, 2))
    mc = BAND.contains(draws).mean()
    assert BAND.probability(mean, sd) == pytest.approx(mc, abs=4 * np.sqrt(mc * (1 - mc) / 200_000))


def test_calibrate_beta_saturated_and_unit_target():
    pred, grid, _ = random_state(0, LOWER)
    pred = GridPrediction(np.full_like(pred.mean, 5.0), pred.sd)
    assert calibrate_beta(pred, grid, LOWER, 0.1, 1.1)[0] == 0.5
    pred, grid, _ = random_state(0, LOWER)
    assert calibrate_beta(pred, grid, LOWER, 0.5, 1.0)[0] == 0.5
    with pytest.raises(CalibrationError):
        calibrate_beta(GridPrediction(np.full_like(pred.mean, -5.0), pred.sd), grid, LOWER, 0.1, 1.1)


def test_calibrate_beta_against_exhaustive_sweep():
    rng = np.random.default_rng(9)
    _, _, bundle = toy_bundle(rng, n=8, func=lambda u: np.sin(6 * u[:, 0]) + 0.5 * u[:, 1])
    xs = np.linspace(0, 1, 200)[:, None]
    grid = equal_grid(16)
    pred = predict_grid(bundle, xs, grid)
    region = LOWER.at(0.2)
    beta, n_rel, n_plug = calibrate_beta(pred, grid, region, 0.3, 1.1)
    sweep = [int(relaxed_member(pred, grid, region, 0.3, b).sum()) for b in np.linspace(0.5, BETA_MAX, 4001)]
    best = min(c for c in sweep if c >= 1.1 * n_plug)
    assert 1.1 * n_plug <= n_rel <= best
    assert n_rel / n_plug <= 1.1 + 1.0 / n_plug + 1e-12
    assert int(relaxed_member(pred, grid, region, 0.3, beta).sum()) == n_rel


# -- posterior membership by simulation -------------------------------------


def test_pi_n_degenerate_posterior_matches_plugin():
    x = np.array([0.4])
    grid = equal_grid(5)
    u = np.column_stack([np.full(5, 0.4), grid.points[:, 0]])
    for vals, expect in ((np.array([-1.0, 1, 1, 1, 1]), True), (np.array([-1.0, -1, 1, 1, 1]), False)):
        bundle = posterior(Dataset(u, vals, [0, 0], [1, 1]), toy_hyper(2, ls=0.2))
        assert plugin_member_bundle(bundle, x[None], grid, LOWER, 0.2)[0] == expect
        assert pi_n_estimate(bundle, x, grid, LOWER, 0.2, 2000, np.random.default_rng(0)) == float(expect)


def test_pi_n_converges_with_path_count():
    rng = np.random.default_rng(21)
    _, _, bundle = toy_bundle(rng, n=5, func=lambda u: np.cos(4 * u[:, 0]) - u[:, 1])
    grid = equal_grid(10)
    # the x whose membership is most uncertain on a coarse scan
    scan = np.linspace(0, 1, 21)
    coarse = [pi_n_estimate(bundle, [x], grid, LOWER, 0.3, 2000, np.random.default_rng(0)) for x in scan]
    x = np.array([scan[np.argmin(np.abs(np.array(coarse) - 0.5))]])
    small = pi_n_estimate(bundle, x, grid, LOWER, 0.3, 10_000, np.random.default_rng(1))
    large = pi_n_estimate(bundle, x, grid, LOWER, 0.3, 1_000_000, np.random.default_rng(2))
    assert 0.02 < large < 0.98
    assert abs(small - large) <= 0.02


def test_grid_paths_have_posterior_moments():
    rng = np.random.default_rng(5)
    _, _, bundle = toy_bundle(rng, n=4)
    grid = equal_grid(6)
    paths = sample_grid_paths(bundle, [0.3], grid, 50_000, np.random.default_rng(0))[:, :, 0]
    u = np.column_stack([np.full(6, 0.3), grid.points[:, 0]])
    m, _ = bundle[0].predict(u)
    assert np.allclose(paths.mean(axis=0), m, atol=0.02)
    assert np.allclose(np.cov(paths.T), bundle[0].cov(u, u), atol=0.02)
