import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from qsieem.design import (BoxDomain, DistributionMismatchError, UnsupportedDimensionError, WeightedSGrid,
                           arcsine_icdf, beta_icdf, latin_hypercube, maximin_lhs, quantize_ps, sample_ps,
                           sobol_points, truncnorm_icdf, uniform_icdf, write_design_csv)


def test_box_domain_validation():
    with pytest.raises(ValueError):
        BoxDomain((0.0, 1.0), (1.0, 1.0))
    box = BoxDomain((0.0, -1.0), (2.0, 1.0))
    assert box.names == ("u1", "u2")
    assert np.allclose(box.center, [1.0, 0.0])
    assert box.contains([[2.0, 1.0], [2.1, 0.0]]).tolist() == [True, False]


def test_weighted_grid_validation():
    with pytest.raises(ValueError):
        WeightedSGrid(np.zeros((2, 1)), [0.5, 0.6])
    with pytest.raises(ValueError):
        WeightedSGrid(np.zeros((2, 1)), [1.0])
    g = WeightedSGrid(np.arange(4.0)[:, None], np.full(4, 0.25))
    sub = g.subsample(2, np.random.default_rng(0))
    assert len(sub) == 2 and sub.weights.sum() == pytest.approx(1.0)


def test_single_point_lhs_is_inside_box():
    box = BoxDomain((1.0, 2.0), (3.0, 5.0))
    pt = maximin_lhs(1, box, 5, np.random.default_rng(1))
    assert pt.shape == (1, 2) and box.contains(pt).all()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 40), d=st.integers(1, 6))
def test_lhs_stratification(seed, n, d):
    pts = latin_hypercube(n, d, np.random.default_rng(seed))
    strata = np.floor(pts * n).astype(int)
    for j in range(d):
        assert sorted(strata[:, j]) == list(range(n))


def test_maximin_beats_median_plain_lhs():
    rng = np.random.default_rng(7)
    box = BoxDomain((0.0,) * 6, (1.0,) * 6)
    best = maximin_lhs(40, box, 1000, rng)
    plain = [pdist(latin_hypercube(40, 6, rng)).min() for _ in range(1000)]
    assert pdist(best).min() >= np.median(plain)


def test_maximin_is_deterministic_and_scaled():
    box = BoxDomain((0.0, 10.0), (1.0, 110.0))
    a = maximin_lhs(10, box, 20, np.random.default_rng(3))
    b = maximin_lhs(10, box, 20, np.random.default_rng(3))
    assert np.array_equal(a, b)
    strata = np.floor((a - box.lo) / box.widths * 10).astype(int)
    assert sorted(strata[:, 1]) == list(range(10))
    with pytest.raises(ValueError):
        maximin_lhs(0, box, 1, np.random.default_rng(0))


def test_sobol_first_points():
    assert sobol_points(3, 1).ravel().tolist() == [0.5, 0.75, 0.25]
    pts = sobol_points(3, 2)
    assert pts.tolist() == [[0.5, 0.5], [0.75, 0.25], [0.25, 0.75]]
    pts = sobol_points(511, 21)
    assert np.all((pts > 0) & (pts < 1))
    with pytest.raises(UnsupportedDimensionError):
        sobol_points(4, 30000)
    with pytest.raises(ValueError):
        sobol_points(0, 2)


def test_sobol_discrepancy_below_random():
    sob = qmc.discrepancy(sobol_points(512, 5), method="L2-star")
    rand = [qmc.discrepancy(np.random.default_rng(s).uniform(size=(512, 5)), method="L2-star") for s in range(20)]
    assert sob < np.median(rand)


def test_closed_form_inverse_cdfs():
    u = np.linspace(0.01, 0.99, 9)
    assert np.allclose(uniform_icdf(2.0, 5.0)(u), 2.0 + 3.0 * u)
    assert np.allclose(arcsine_icdf(-1.0, 3.0)(u), stats.beta(0.5, 0.5, loc=-1.0, scale=4.0).ppf(u))
    assert np.allclose(beta_icdf(7.5, 1.9, 0, 15)(u), 15 * stats.beta(7.5, 1.9).ppf(u))


def test_truncated_gaussian_grid_mean():
    mean, var, lo, hi = 175.0, 50.0, -50.0, 300.0
    sd = math.sqrt(var)
    dens = lambda t: math.exp(-0.5 * ((t - mean) / sd) ** 2)
    z = integrate.quad(dens, lo, hi, points=[mean], limit=200)[0]
    true_mean = integrate.quad(lambda t: t * dens(t), lo, hi, points=[mean], limit=200)[0] / z
    grid = quantize_ps(sobol_points(512, 1), [truncnorm_icdf(mean, var, lo, hi)], BoxDomain((lo,), (hi,)))
    assert grid.points.mean() == pytest.approx(true_mean, abs=1.0)
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_quantization_consistency():
    marg = [arcsine_icdf(0.0, 1.0), uniform_icdf(-1.0, 1.0), truncnorm_icdf(0.0, 1.0, -2.0, 2.0)]
    grid = quantize_ps(sobol_points(512, 3), marg)
    rng = np.random.default_rng(0)
    draws = sample_ps(100_000, marg, rng)
    for g in (lambda s: np.sin(3 * s[:, 0]) + s[:, 1] ** 2, lambda s: np.cos(s.sum(axis=1))):
        vals = g(draws)
        se = vals.std() / math.sqrt(vals.size)
        assert abs(grid.average(g(grid.points)) - vals.mean()) <= 3 * se


def test_quantize_errors():
    with pytest.raises(ValueError):
        quantize_ps(np.full((3, 2), 0.5), [uniform_icdf(0, 1)])
    with pytest.raises(DistributionMismatchError):
        quantize_ps(np.full((3, 1), 0.5), [uniform_icdf(0, 4)], BoxDomain((0.0,), (1.0,)))


def test_design_csv(tmp_path):
    write_design_csv(tmp_path / "d.csv", np.array([[0.1, 1.0 / 3.0]]), ["a", "b"])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "a,b" and float(lines[1].split(",")[1]) == 1.0 / 3.0
