"""Shared builders for small synthetic datasets.

Everything here is cheap and deterministic; the expensive regenerated
validation cases live in session fixtures inside test_acceptance.py so that
unit test modules stay fast on their own.
"""

import numpy as np
import pytest

from tbme.dataio import ObservationSeries, PredictionEnsemble


def make_ensemble(n_mc=8, n_obs=12, seed=0, spread=1.0):
    """Random ensemble with one dummy parameter column per member."""
    rng = np.random.default_rng(seed)
    preds = -1.0 + spread * rng.standard_normal((n_mc, n_obs))
    params = rng.uniform(0.1, 0.9, size=(n_mc, 2))
    return PredictionEnsemble(
        predictions=preds,
        parameters=params,
        parameter_names=("a", "b"),
        parameter_bounds={"a": (0.0, 1.0), "b": (0.0, 1.0)},
    )


def make_observations(n_obs=12, seed=1, sigma=0.5):
    rng = np.random.default_rng(seed)
    return ObservationSeries(
        times=np.arange(1, n_obs + 1, dtype=float),
        values=-1.0 + rng.standard_normal(n_obs),
        sigma=np.full(n_obs, float(sigma)),
    )


@pytest.fixture
def tiny_ensemble():
    return make_ensemble()


@pytest.fixture
def tiny_observations():
    return make_observations()
