"""Window posteriors: weights, weighted quantiles, weighted KDE.

phi(2) = exp(-2)/sqrt(2 pi) = 0.05399096651318805, frozen from 50-digit
mpmath; the weight oracle below recomputes the normalization in extended
precision at test time, which is independent of the float64 code path.
"""

import numpy as np
import pytest
from mpmath import mp, mpf

from tbme.dataio import ObservationSeries
from tbme.errors import ValidationError
from tbme.likelihood import gauss_log_terms
from tbme.posterior import posterior_weights, weighted_kde, weighted_quantile

from conftest import make_ensemble, make_observations

PHI_AT_TWO = 0.05399096651318805


# ----------------------------------------------------------------------
# weights
# ----------------------------------------------------------------------

def test_equal_loglik_gives_uniform_weights():
    ens = make_ensemble(n_mc=6, n_obs=8, seed=0)
    flat = type(ens)(predictions=np.tile(ens.predictions[0], (6, 1)),
                     parameters=ens.parameters,
                     parameter_names=ens.parameter_names,
                     parameter_bounds=ens.parameter_bounds)
    obs = make_observations(n_obs=8, seed=1)
    table = gauss_log_terms(flat, obs)
    snap = posterior_weights(table, j=8, tau=4)
    assert np.allclose(snap.weights, 1.0 / 6.0, rtol=0, atol=1e-15)
    assert snap.ess == pytest.approx(6.0, abs=1e-12)


def test_weights_match_extended_precision_oracle():
    ens = make_ensemble(n_mc=10, n_obs=12, seed=5)
    obs = make_observations(n_obs=12, seed=6, sigma=0.3)
    table = gauss_log_terms(ens, obs)
    j, tau = 10, 5
    snap = posterior_weights(table, j, tau)

    mp.dps = 50
    loglik = table.terms[:, j - tau:j].sum(axis=1)
    exps = [mp.e ** mpf(x) for x in loglik]
    total = mp.fsum(exps)
    expected = np.array([float(e / total) for e in exps])
    assert np.allclose(snap.weights, expected, rtol=1e-12, atol=1e-300)
    assert snap.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert snap.map_index == int(np.argmax(loglik))


def test_self_data_concentrates_weight():
    """With tiny sigma, the generating member absorbs nearly all weight."""
    ens = make_ensemble(n_mc=12, n_obs=20, seed=8)
    k = 7
    obs = ObservationSeries(times=np.arange(1.0, 21.0),
                            values=ens.predictions[k].copy(),
                            sigma=np.full(20, 1e-3))
    table = gauss_log_terms(ens, obs)
    snap = posterior_weights(table, j=20, tau=20)
    assert snap.map_index == k
    assert snap.weights[k] > 0.99


# ----------------------------------------------------------------------
# weighted quantiles
# ----------------------------------------------------------------------

def test_quantile_uniform_small_cases():
    v = np.array([1.0, 2.0, 3.0])
    w = np.full(3, 1.0 / 3.0)
    assert weighted_quantile(v, w, 0.5) == 2.0
    assert weighted_quantile(v, w, 0.0) == 1.0
    assert weighted_quantile(v, w, 1.0) == 3.0


def test_quantile_point_mass():
    v = np.array([5.0, -2.0, 9.0])
    w = np.array([0.0, 1.0, 0.0])
    for q in (0.0, 0.25, 0.5, 0.9, 1.0):
        assert weighted_quantile(v, w, q) == -2.0


def test_quantile_matches_resampling_oracle():
    rng = np.random.default_rng(42)
    values = rng.standard_normal(100)
    raw = rng.uniform(0.05, 1.0, 100)
    weights = raw / raw.sum()
    draws = rng.choice(values, size=10 ** 6, p=weights)

    order = np.sort(values)
    for q in (0.1, 0.25, 0.5, 0.75, 0.9):
        est = weighted_quantile(values, weights, q)
        oracle = np.quantile(draws, q)
        # agreement within two neighboring sample values
        pos_est = np.searchsorted(order, est)
        pos_oracle = np.searchsorted(order, oracle)
        assert abs(int(pos_est) - int(pos_oracle)) <= 2


def test_quantile_validation():
    v = np.array([1.0, 2.0])
    with pytest.raises(ValidationError):
        weighted_quantile(v, np.array([0.5, 0.4]), 0.5)  # not normalized
    with pytest.raises(ValidationError):
        weighted_quantile(v, np.array([1.5, -0.5]), 0.5)
    with pytest.raises(ValidationError):
        weighted_quantile(v, np.array([0.5, 0.5]), 1.5)


# ----------------------------------------------------------------------
# weighted KDE
# ----------------------------------------------------------------------

def test_kde_two_kernel_oracle():
    """(1/2, 1/2) on {0, 4} with bandwidth 1: density(2) = phi(2)."""
    got = weighted_kde(np.array([0.0, 4.0]), np.array([0.5, 0.5]),
                       np.array([2.0]), bandwidth=1.0)
    assert got[0] == pytest.approx(PHI_AT_TWO, abs=1e-15)


def test_kde_integrates_to_one():
    rng = np.random.default_rng(17)
    values = rng.standard_normal(60)
    raw = rng.uniform(0.1, 1.0, 60)
    weights = raw / raw.sum()
    grid = np.linspace(values.min() - 5, values.max() + 5, 2000)
    dens = weighted_kde(values, weights, grid)
    integral = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)))
    assert integral == pytest.approx(1.0, abs=0.01)
    assert np.all(dens >= 0)


def test_kde_zero_variance_is_an_error():
    with pytest.raises(ValidationError):
        weighted_kde(np.array([3.0, 3.0]), np.array([0.5, 0.5]),
                     np.linspace(0, 6, 10))
    # explicit bandwidth works even then
    dens = weighted_kde(np.array([3.0, 3.0]), np.array([0.5, 0.5]),
                        np.array([3.0]), bandwidth=0.5)
    assert dens[0] == pytest.approx(1.0 / (0.5 * np.sqrt(2 * np.pi)), rel=1e-12)


# ----------------------------------------------------------------------
# snapshot marginals
# ----------------------------------------------------------------------

def test_snapshot_marginals_span_prior_bounds():
    ens = make_ensemble(n_mc=30, n_obs=15, seed=2)
    obs = make_observations(n_obs=15, seed=3, sigma=0.5)
    table = gauss_log_terms(ens, obs)
    snap = posterior_weights(table, j=12, tau=6, ensemble=ens, grid_points=64)
    assert set(snap.marginals) == {"a", "b"}
    for name, marg in snap.marginals.items():
        lo, hi = ens.parameter_bounds[name]
        assert marg.grid[0] == lo and marg.grid[-1] == hi
        assert marg.grid.size == 64
        assert marg.q025 <= marg.q500 <= marg.q975
        assert lo <= marg.map_value <= hi
        assert np.all(marg.density >= 0)


def test_snapshot_point_mass_parameter():
    ens = make_ensemble(n_mc=8, n_obs=10, seed=4)
    params = ens.parameters.copy()
    params[:, 1] = 0.5  # collapsed column
    ens = type(ens)(predictions=ens.predictions, parameters=params,
                    parameter_names=ens.parameter_names,
                    parameter_bounds=ens.parameter_bounds)
    obs = make_observations(n_obs=10, seed=5)
    snap = posterior_weights(gauss_log_terms(ens, obs), j=10, tau=5, ensemble=ens)
    marg = snap.marginals["b"]
    assert marg.density is None
    assert marg.q025 == marg.q500 == marg.q975 == marg.map_value == 0.5


def test_snapshot_rejects_mismatched_ensemble():
    ens = make_ensemble(n_mc=8, n_obs=10, seed=4)
    other = make_ensemble(n_mc=9, n_obs=10, seed=4)
    obs = make_observations(n_obs=10, seed=5)
    table = gauss_log_terms(ens, obs)
    with pytest.raises(ValidationError):
        posterior_weights(table, j=10, tau=5, ensemble=other)
