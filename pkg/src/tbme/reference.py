"""Sampling distribution of windowed evidence under the fitted-model world.

To judge whether an observed evidence curve is suspiciously low we need to
know how low the curve of a *correct* model would typically sit.  Each
replicate therefore promotes one ensemble member to synthetic truth,
evaluates the windowed evidence against the remaining members (leave one
out, so the synthetic truth never scores itself), and the per-window
quantiles over many replicates form the reference bands.

Members are drawn without replacement until every realization has served
once; only beyond that do replicates repeat members.  All draws come from
one seeded generator, so a (ensemble, sigma, tau, n_replicates, seed)
tuple maps to exactly one band set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .evidence import tbme_curve
from .likelihood import LOG_2PI, table_from_terms

QUANTILE_FIELDS = ("min", "q010", "q025", "q160", "q500", "q840", "q975", "q990", "max")
QUANTILE_LEVELS = (0.0, 0.01, 0.025, 0.16, 0.5, 0.84, 0.975, 0.99, 1.0)


@dataclass
class ReferenceBands:
    """Empirical per-window quantiles of the replicate evidence curves.

    quantiles      field name -> (n_windows,) array; linear-interpolation
                   empirical quantiles, 'min'/'max' are the exact extremes
    replicate_ess  (n_replicates, n_windows) raw ESS values, kept in memory
                   for convergence checks but never serialized
    """

    tau: int
    window_ends: np.ndarray
    quantiles: dict[str, np.ndarray]
    n_replicates: int
    seed: int
    min_ess_observed: float
    n_mc: int = 0  # size of the ensemble the replicates were drawn from
    replicate_ess: np.ndarray | None = field(default=None, repr=False)
    perturbed: bool = False


@dataclass
class ConvergenceReport:
    """Outcome of the ESS floor check over every (replicate, window) pair."""

    passed: bool
    floor: float
    min_ess_observed: float
    n_checked: int
    failures: list[tuple[int, int]] | None  # (replicate index, window end)


def default_ess_floor(n_mc: int) -> float:
    """Degeneracy floor scaled to the ensemble size."""
    return float(max(10, n_mc // 100))


def replicate_picks(n_mc: int, n_replicates: int, rng) -> np.ndarray:
    """Member index per replicate: a permutation first, repeats after."""
    picks = rng.permutation(n_mc)[: min(n_mc, n_replicates)]
    if n_replicates > n_mc:
        extra = rng.integers(0, n_mc, size=n_replicates - n_mc)
        picks = np.concatenate([picks, extra])
    return picks


def sample_reference(
    ensemble,
    obs_sigma,
    tau: int,
    n_replicates: int,
    seed: int,
    perturb: bool = False,
) -> ReferenceBands:
    """Leave-one-out reference bands for one window size.

    ``perturb`` adds N(0, sigma) noise to each synthetic truth before
    scoring; off by default so the bands describe exactly the
    "data generated by one of the sampled models" hypothesis.
    """
    y = ensemble.predictions
    n_mc, n_obs = y.shape
    if n_mc < 3:
        raise ValidationError("reference sampling needs at least 3 realizations")
    if n_replicates < 2:
        raise ValidationError("need at least 2 replicates for quantiles")
    if not 1 <= tau <= n_obs:
        raise IndexError(f"window size tau={tau} outside 1..{n_obs}")
    sigma = np.asarray(obs_sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(n_obs, float(sigma))
    if sigma.shape != (n_obs,):
        raise ValidationError(
            f"sigma must be scalar or length {n_obs}, got shape {sigma.shape}"
        )
    if not np.all(np.isfinite(sigma) & (sigma > 0)):
        raise ValidationError("sigma must be finite and > 0")

    rng = np.random.default_rng(seed)
    picks = replicate_picks(n_mc, n_replicates, rng)
    noise = rng.standard_normal((n_replicates, n_obs)) * sigma if perturb else None

    const = -0.5 * (LOG_2PI + np.log(sigma * sigma))
    inv_two_var = 1.0 / (2.0 * sigma * sigma)

    n_windows = n_obs - tau + 1
    curves = np.empty((n_replicates, n_windows))
    ess = np.empty((n_replicates, n_windows))
    window_ends = None
    for r, k in enumerate(picks):
        truth = y[k] if noise is None else y[k] + noise[r]
        resid = truth[None, :] - y
        terms = const[None, :] - (resid * resid) * inv_two_var[None, :]
        terms = np.delete(terms, k, axis=0)  # the synthetic truth never scores itself
        curve = tbme_curve(table_from_terms(terms, sigma), tau)
        curves[r] = curve.log_tbme
        ess[r] = curve.ess
        window_ends = curve.window_ends

    levels = np.asarray(QUANTILE_LEVELS)
    qs = np.quantile(curves, levels, axis=0, method="linear")
    return ReferenceBands(
        tau=int(tau),
        window_ends=window_ends,
        quantiles={name: qs[i] for i, name in enumerate(QUANTILE_FIELDS)},
        n_replicates=int(n_replicates),
        seed=int(seed),
        min_ess_observed=float(ess.min()),
        n_mc=int(n_mc),
        replicate_ess=ess,
        perturbed=bool(perturb),
    )


def check_convergence(bands: ReferenceBands, min_ess: float | None = None) -> ConvergenceReport:
    """Flag every (replicate, window) whose ESS fell below the floor.

    Bands reloaded from disk no longer carry the per-replicate ESS matrix;
    the check then degrades to comparing the recorded overall minimum and
    reports ``failures=None``.
    """
    floor = default_ess_floor(bands.n_mc) if min_ess is None else float(min_ess)
    if bands.replicate_ess is None:
        return ConvergenceReport(
            passed=bool(bands.min_ess_observed >= floor),
            floor=floor,
            min_ess_observed=float(bands.min_ess_observed),
            n_checked=0,
            failures=None,
        )
    low = np.argwhere(bands.replicate_ess < floor)
    failures = [(int(r), int(bands.window_ends[w])) for r, w in low]
    return ConvergenceReport(
        passed=not failures,
        floor=floor,
        min_ess_observed=float(bands.replicate_ess.min()),
        n_checked=int(bands.replicate_ess.size),
        failures=failures,
    )
