"""Leave-one-out reference bands and the ESS convergence check."""

import numpy as np
import pytest

from tbme.errors import ValidationError
from tbme.evidence import tbme_curve
from tbme.likelihood import gauss_log_terms, table_from_terms, LOG_2PI
from tbme.reference import (
    QUANTILE_FIELDS,
    check_convergence,
    default_ess_floor,
    replicate_picks,
    sample_reference,
)
from tbme.dataio import ObservationSeries

from conftest import make_ensemble


def loo_log_tbme(ensemble, sigma, k, tau):
    """Brute-force replicate: member k as truth, everyone else scores."""
    y = ensemble.predictions
    truth = y[k]
    others = np.delete(y, k, axis=0)
    resid = truth[None, :] - others
    terms = (-0.5 * (LOG_2PI + np.log(sigma ** 2)))[None, :] \
        - resid ** 2 / (2.0 * sigma ** 2)[None, :]
    return tbme_curve(table_from_terms(terms, sigma), tau).log_tbme


def test_three_member_exhaustive():
    """N = 3, three replicates: every member serves exactly once."""
    ens = make_ensemble(n_mc=3, n_obs=6, seed=1)
    sigma = np.full(6, 0.5)
    tau = 6
    bands = sample_reference(ens, sigma, tau, n_replicates=3, seed=7)
    values = np.array([loo_log_tbme(ens, sigma, k, tau)[0] for k in range(3)])
    assert bands.quantiles["min"][0] == values.min()
    assert bands.quantiles["max"][0] == values.max()
    assert bands.quantiles["q500"][0] == np.median(values)


def test_exhaustive_median_oracle():
    """N = 20, 20 replicates, tau = 5: q500 is the brute-force median."""
    ens = make_ensemble(n_mc=20, n_obs=30, seed=9)
    sigma = np.full(30, 0.4)
    tau = 5
    bands = sample_reference(ens, sigma, tau, n_replicates=20, seed=123)
    all_curves = np.stack([loo_log_tbme(ens, sigma, k, tau) for k in range(20)])
    assert np.allclose(bands.quantiles["q500"], np.median(all_curves, axis=0),
                       rtol=0, atol=1e-12)
    for field in ("q025", "q975"):
        level = {"q025": 0.025, "q975": 0.975}[field]
        expected = np.quantile(all_curves, level, axis=0, method="linear")
        assert np.allclose(bands.quantiles[field], expected, rtol=0, atol=1e-12)


def test_replicate_picks_cover_before_repeating():
    rng = np.random.default_rng(0)
    picks = replicate_picks(10, 10, rng)
    assert sorted(picks) == list(range(10))
    rng = np.random.default_rng(0)
    picks = replicate_picks(5, 12, rng)
    assert sorted(picks[:5]) == list(range(5))
    assert np.all((picks >= 0) & (picks < 5))


def test_determinism_bitwise():
    ens = make_ensemble(n_mc=12, n_obs=20, seed=2)
    sigma = np.full(20, 0.3)
    a = sample_reference(ens, sigma, tau=4, n_replicates=15, seed=55)
    b = sample_reference(ens, sigma, tau=4, n_replicates=15, seed=55)
    for field in QUANTILE_FIELDS:
        assert np.array_equal(a.quantiles[field], b.quantiles[field])
    assert a.min_ess_observed == b.min_ess_observed
    c = sample_reference(ens, sigma, tau=4, n_replicates=15, seed=56)
    assert any(not np.array_equal(a.quantiles[f], c.quantiles[f])
               for f in QUANTILE_FIELDS)


def test_quantile_fields_are_ordered():
    ens = make_ensemble(n_mc=15, n_obs=25, seed=4)
    sigma = np.full(25, 0.6)
    bands = sample_reference(ens, sigma, tau=5, n_replicates=30, seed=3)
    stack = np.stack([bands.quantiles[f] for f in QUANTILE_FIELDS])
    assert np.all(np.diff(stack, axis=0) >= 0.0)


def test_leave_one_out_excludes_self():
    """A zero-residual self row would dominate every window; its absence
    keeps the reference finite and member-sized."""
    ens = make_ensemble(n_mc=3, n_obs=5, seed=6)
    sigma = np.full(5, 1e-6)  # self-likelihood would be astronomically high
    bands = sample_reference(ens, sigma, tau=5, n_replicates=3, seed=1)
    # with sigma this small, any self-inclusion would push max near
    # -n_obs/2 log(2 pi sigma^2) ~ +60; leave-one-out keeps it far below
    assert bands.quantiles["max"][0] < 0.0


def test_coverage_of_heldout_member():
    """A member left out of the ensemble should look 'inside' almost always."""
    full = make_ensemble(n_mc=41, n_obs=60, seed=13, spread=0.7)
    k = 17
    rest = full.without_realization(k)
    sigma = np.full(60, 0.5)
    tau = 5
    bands = sample_reference(rest, sigma, tau, n_replicates=25, seed=99)

    obs = ObservationSeries(times=np.arange(1.0, 61.0),
                            values=full.predictions[k],
                            sigma=sigma)
    curve = tbme_curve(gauss_log_terms(rest, obs), tau)
    inside = (curve.log_tbme >= bands.quantiles["min"]) \
        & (curve.log_tbme <= bands.quantiles["max"])
    assert inside.mean() >= 0.95


def test_perturb_flag_changes_bands():
    ens = make_ensemble(n_mc=10, n_obs=15, seed=20)
    sigma = np.full(15, 0.2)
    plain = sample_reference(ens, sigma, tau=3, n_replicates=8, seed=5)
    noisy = sample_reference(ens, sigma, tau=3, n_replicates=8, seed=5, perturb=True)
    assert noisy.perturbed and not plain.perturbed
    assert not np.array_equal(plain.quantiles["q500"], noisy.quantiles["q500"])


def test_check_convergence_paths():
    ens = make_ensemble(n_mc=20, n_obs=12, seed=30)
    sigma = np.full(12, 0.5)
    bands = sample_reference(ens, sigma, tau=3, n_replicates=10, seed=8)

    # floor 0 always passes
    assert check_convergence(bands, min_ess=0.0).passed

    # an impossible floor fails with located diagnostics: leave-one-out ESS
    # can never exceed N - 1 = 19
    rep = check_convergence(bands, min_ess=200.0)
    assert not rep.passed
    assert rep.floor == 200.0
    assert rep.n_checked == 10 * bands.window_ends.size
    assert len(rep.failures) == rep.n_checked
    assert all(end in bands.window_ends for _, end in rep.failures[:5])

    # a generous recorded minimum passes the default scaled floor
    assert default_ess_floor(2000) == 20.0
    assert default_ess_floor(500) == 10.0
    bands.replicate_ess = None
    bands.min_ess_observed = 250.0
    assert check_convergence(bands, min_ess=200.0).passed
    assert check_convergence(bands, min_ess=200.0).failures is None


def test_input_validation():
    ens = make_ensemble(n_mc=6, n_obs=10)
    sigma = np.full(10, 0.5)
    with pytest.raises(ValidationError):
        sample_reference(ens, sigma, tau=2, n_replicates=1, seed=0)
    with pytest.raises(IndexError):
        sample_reference(ens, sigma, tau=11, n_replicates=4, seed=0)
    with pytest.raises(ValidationError):
        sample_reference(ens, np.full(10, -1.0), tau=2, n_replicates=4, seed=0)
    with pytest.raises(ValidationError):
        sample_reference(ens, np.full(7, 0.5), tau=2, n_replicates=4, seed=0)
