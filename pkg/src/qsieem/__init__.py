"""Estimation of small quantile sets with Gaussian-process surrogates,
the expected-estimator-modification criterion and sequential Monte Carlo."""

__version__ = "0.1.0"
