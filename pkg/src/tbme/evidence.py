"""Windowed Bayesian model evidence from a log-likelihood table.

The evidence of a window is the plain Monte Carlo average of the member
likelihoods.  Averages are formed with a max-shifted log-sum-exp; the
shifted terms are summed in ascending order after a sort, so the result
does not depend on how the ensemble rows happen to be ordered and is
bit-identical regardless of any outer parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWindowError
from .likelihood import LogLikTable, window_loglik


@dataclass
class TbmeCurve:
    """Windowed evidence along the full series for one window size.

    window_ends  day index of each window's last observation, tau..n_obs
    log_tbme     natural log of the windowed evidence
    ess          effective sample size of the member weights per window
    """

    tau: int
    window_ends: np.ndarray
    log_tbme: np.ndarray
    ess: np.ndarray
    n_mc_used: int

    @property
    def n_windows(self) -> int:
        return self.window_ends.size


def _column_stats(loglik: np.ndarray):
    """Per-column (log_sum_exp, ess) of a members-by-windows matrix."""
    if loglik.size == 0:
        raise ValueError("empty log-likelihood matrix")
    if np.isnan(loglik).any():
        raise ValueError("NaN in log-likelihood values")
    # ascending sort makes the sum order canonical under row permutations
    ordered = np.sort(loglik, axis=0)
    top = ordered[-1, :]
    dead = ~np.isfinite(top)
    if dead.any():
        raise DegenerateWindowError(
            f"all member likelihoods vanish in window column {np.flatnonzero(dead)[0]}; "
            "sigma is too tight for the ensemble spread"
        )
    shifted = np.exp(ordered - top[None, :])
    s1 = shifted.sum(axis=0)
    s2 = (shifted * shifted).sum(axis=0)
    return top + np.log(s1), (s1 * s1) / s2


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) with max-shift; rejects all -inf input."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("log_sum_exp expects a 1-D array")
    lse, _ = _column_stats(v[:, None])
    return float(lse[0])


def ess_of(loglik) -> float:
    """Effective sample size of normalized likelihood weights.

    Equals 1 / sum(w_hat^2) for w_hat_i = exp(l_i - log_sum_exp(l)); computed
    as (sum u)^2 / (sum u^2) on the max-shifted u so a flat vector yields
    exactly n and a one-hot vector exactly 1.
    """
    v = np.asarray(loglik, dtype=float)
    if v.ndim != 1:
        raise ValueError("ess_of expects a 1-D array")
    _, ess = _column_stats(v[:, None])
    return float(ess[0])


def tbme_curve(table: LogLikTable, tau: int) -> TbmeCurve:
    """Slide a tau-day window over the series and average member likelihoods.

    Returns one value per admissible window end j = tau..n_obs, i.e.
    n_obs - tau + 1 windows.  log_tbme = log_sum_exp(window loglik) - log(n_mc).
    """
    n_mc, n_obs = table.terms.shape
    if not 1 <= tau <= n_obs:
        raise IndexError(f"window size tau={tau} outside 1..{n_obs}")
    ends = np.arange(tau, n_obs + 1, dtype=np.int64)
    loglik = table.prefix[:, tau:] - table.prefix[:, : n_obs - tau + 1]
    try:
        lse, ess = _column_stats(loglik)
    except DegenerateWindowError as exc:
        raise DegenerateWindowError(f"tau={tau}: {exc}") from None
    return TbmeCurve(
        tau=int(tau),
        window_ends=ends,
        log_tbme=lse - np.log(n_mc),
        ess=ess,
        n_mc_used=n_mc,
    )


def window_log_tbme(table: LogLikTable, j: int, tau: int) -> float:
    """Single-window evidence; convenience wrapper over window_loglik."""
    return log_sum_exp(window_loglik(table, j, tau)) - float(np.log(table.n_mc))
