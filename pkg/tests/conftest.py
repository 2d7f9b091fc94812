import os
from pathlib import Path

import numpy as np
import pytest

from qsieem.gp import Dataset, GpHyperParams, KernelSpec, posterior

# reference clouds and acceptance campaigns are shared with the CLI cache
os.environ.setdefault("QSI_CACHE_DIR", str(Path(__file__).resolve().parents[1] / ".cache"))


def toy_hyper(dim, nu=2.5, variance=1.0, ls=0.3, mean=0.0):
    return GpHyperParams(mean, KernelSpec(nu, variance, (ls,) * dim))


def toy_bundle(rng, n=6, dim=2, nu=2.5, ls=0.3, func=None, lower=None, upper=None):
    """Posterior with fixed hyperparameters on n random points of a box."""
    lower = np.zeros(dim) if lower is None else np.asarray(lower, float)
    upper = np.ones(dim) if upper is None else np.asarray(upper, float)
    pts = lower + (upper - lower) * rng.uniform(size=(n, dim))
    y = func(pts) if func is not None else rng.standard_normal(n)
    data = Dataset(pts, y, lower, upper)
    hyper = toy_hyper(dim, nu=nu, ls=ls)
    return data, hyper, posterior(data, hyper)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
