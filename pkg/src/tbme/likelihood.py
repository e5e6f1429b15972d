"""Per-day Gaussian log-likelihood terms with O(1) window sums.

The measurement error is independent across days (diagonal covariance), so
the log-likelihood of any window is a plain sum of per-day terms.  We store
those terms once together with their running cumulative sum; every window
sum then costs a single subtraction instead of a re-scan, which is what
makes sweeping all window positions for many window sizes cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class LogLikTable:
    """Per-day terms plus their sequential prefix sums.

    terms       (n_mc, n_obs) log-density contribution of day t to row i
    prefix      (n_mc, n_obs + 1) cumulative sums with prefix[:, 0] = 0
    sigma_used  (n_obs,) the error scale the terms were built with
    """

    terms: np.ndarray
    prefix: np.ndarray
    sigma_used: np.ndarray

    @property
    def n_mc(self) -> int:
        return self.terms.shape[0]

    @property
    def n_obs(self) -> int:
        return self.terms.shape[1]


def table_from_terms(terms: np.ndarray, sigma: np.ndarray) -> LogLikTable:
    terms = np.asarray(terms, dtype=float)
    n_mc, n_obs = terms.shape
    prefix = np.zeros((n_mc, n_obs + 1), dtype=float)
    np.cumsum(terms, axis=1, out=prefix[:, 1:])
    return LogLikTable(terms=terms, prefix=prefix, sigma_used=np.asarray(sigma, float))


def gauss_log_terms(ensemble, obs) -> LogLikTable:
    """Log-density of each observation day under each realization.

    term[i, t] = -0.5 log(2 pi sigma_t^2) - (D_t - y_{i,t})^2 / (2 sigma_t^2)

    Everything stays in natural-log space; the raw densities underflow for
    realistic sigmas long before the window products are formed.
    """
    y = ensemble.predictions
    if y.shape[1] != obs.n_obs:
        raise ValidationError(
            f"horizon mismatch: ensemble has {y.shape[1]} steps, "
            f"observations have {obs.n_obs}"
        )
    sigma = obs.sigma
    resid = obs.values[None, :] - y
    with np.errstate(over="ignore"):  # overflow is reported just below
        terms = -0.5 * (LOG_2PI + np.log(sigma * sigma))[None, :] \
            - (resid * resid) / (2.0 * sigma * sigma)[None, :]
    if not np.all(np.isfinite(terms)):
        i, t = np.argwhere(~np.isfinite(terms))[0]
        raise ValidationError(
            f"non-finite log-likelihood term (realization {i + 1}, t{t + 1}); "
            "check sigma and the prediction scale"
        )
    return table_from_terms(terms, sigma)


def window_loglik(table: LogLikTable, j: int, tau: int) -> np.ndarray:
    """Log-likelihood of the window ending at day j, per realization.

    The window covers days j - tau + 1 .. j inclusive.  Requires
    1 <= tau <= j <= n_obs.
    """
    if not 1 <= tau <= table.n_obs:
        raise IndexError(f"window size tau={tau} outside 1..{table.n_obs}")
    if not tau <= j <= table.n_obs:
        raise IndexError(f"window end j={j} outside {tau}..{table.n_obs}")
    return table.prefix[:, j] - table.prefix[:, j - tau]
