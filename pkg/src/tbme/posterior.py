"""Window-conditioned posterior parameter summaries.

Normalizing the member likelihoods of one window turns the prior ensemble
into a weighted posterior sample for exactly that stretch of data.  Sliding
the window and re-weighting is what makes the parameter distributions
time-dependent; nothing is ever re-simulated here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .evidence import ess_of, log_sum_exp
from .likelihood import LogLikTable, window_loglik

GRID_POINTS = 256
SQRT_2PI = float(np.sqrt(2.0 * np.pi))


@dataclass
class Marginal:
    """One parameter's weighted marginal: density on a fixed grid + summaries.

    density is None for a point mass (zero weighted variance); the location
    then lives in map_value and the three quantiles coincide with it.
    """

    grid: np.ndarray | None
    density: np.ndarray | None
    q025: float
    q500: float
    q975: float
    map_value: float


@dataclass
class PosteriorSnapshot:
    window_end: int
    tau: int
    weights: np.ndarray
    ess: float
    map_index: int
    marginals: dict[str, Marginal]


def weighted_quantile(values, weights, q):
    """Quantile of a weighted sample.

    Sort by value, accumulate weights, and interpolate linearly between the
    cumulative-weight midpoints of adjacent samples; q at or beyond the edge
    midpoints clamps to the extreme values.  With uniform weights this
    reproduces the usual empirical quantile up to interpolation convention
    (e.g. the median of {1, 2, 3} is 2).  Expects normalized weights.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValidationError("values and weights must be equal-length 1-D arrays")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValidationError("weights must be finite and non-negative")
    total = weights.sum()
    if not np.isclose(total, 1.0, rtol=0, atol=1e-6):
        raise ValidationError(f"weights must be normalized (sum={total!r})")
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValidationError("quantile levels must lie in [0, 1]")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order] / total
    keep = w > 0  # zero-weight samples must not skew the interpolation
    v, w = v[keep], w[keep]
    midpoints = np.cumsum(w) - 0.5 * w
    out = np.interp(q, midpoints, v)
    return float(out) if out.ndim == 0 else out


def weighted_kde(values, weights, grid, bandwidth=None):
    """Weighted Gaussian kernel density evaluated on ``grid``.

    The default bandwidth is Silverman-style with the effective sample size
    standing in for the sample count: 1.06 * sd_w * ESS^(-1/5), where sd_w
    is the weighted standard deviation.  Raises on zero weighted variance;
    callers should represent such point masses explicitly instead.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValidationError("values and weights must be equal-length 1-D arrays")
    total = weights.sum()
    if total <= 0 or not np.isfinite(total):
        raise ValidationError("weights must sum to a positive finite value")
    w = weights / total
    if bandwidth is None:
        mean = float(np.sum(w * values))
        var = float(np.sum(w * (values - mean) ** 2))
        if var <= 0:
            raise ValidationError("zero weighted variance: distribution is a point mass")
        ess = 1.0 / float(np.sum(w * w))
        bandwidth = 1.06 * np.sqrt(var) * ess ** (-0.2)
    bandwidth = float(bandwidth)
    if bandwidth <= 0 or not np.isfinite(bandwidth):
        raise ValidationError(f"bandwidth must be positive, got {bandwidth!r}")
    z = (grid[:, None] - values[None, :]) / bandwidth
    # beyond ~39 sigma the kernel underflows to 0 anyway; clipping keeps
    # z*z from overflowing when the bandwidth is many orders below the
    # grid spacing
    np.clip(z, -60.0, 60.0, out=z)
    kernel = np.exp(-0.5 * z * z) / (bandwidth * SQRT_2PI)
    return kernel @ w


def posterior_weights(table: LogLikTable, j: int, tau: int,
                      ensemble=None, grid_points: int = GRID_POINTS) -> PosteriorSnapshot:
    """Posterior snapshot for the window ending at day j.

    Weights are the normalized member likelihoods of that window.  When an
    ensemble is supplied its parameter draws are summarized into per-name
    marginals (weighted quantiles plus a KDE on a grid spanning the prior
    bounds); without it only weights, ESS and the best member index are
    returned.
    """
    loglik = window_loglik(table, j, tau)
    lse = log_sum_exp(loglik)
    weights = np.exp(loglik - lse)
    weights /= weights.sum()
    snapshot = PosteriorSnapshot(
        window_end=int(j),
        tau=int(tau),
        weights=weights,
        ess=ess_of(loglik),
        map_index=int(np.argmax(loglik)),
        marginals={},
    )
    if ensemble is None:
        return snapshot
    if ensemble.parameters.shape[0] != weights.size:
        raise ValidationError(
            f"ensemble has {ensemble.parameters.shape[0]} rows but the table "
            f"has {weights.size}"
        )
    for p, name in enumerate(ensemble.parameter_names):
        col = ensemble.parameters[:, p]
        lo, hi = ensemble.parameter_bounds[name]
        map_value = float(col[snapshot.map_index])
        q025, q500, q975 = (weighted_quantile(col, weights, q)
                            for q in (0.025, 0.5, 0.975))
        mean = float(np.sum(weights * col))
        var = float(np.sum(weights * (col - mean) ** 2))
        # spreads many orders below the prior range (one member carrying
        # ~all weight) are point masses; a KDE there is a spike no grid
        # can resolve
        if var <= 0 or lo == hi or np.sqrt(var) <= (hi - lo) * 1e-12:
            snapshot.marginals[name] = Marginal(
                grid=None, density=None,
                q025=q025, q500=q500, q975=q975, map_value=map_value,
            )
            continue
        grid = np.linspace(lo, hi, grid_points)
        # floor the bandwidth at the grid resolution, else a sharply
        # concentrated window puts all kernel mass between grid points
        bandwidth = max(1.06 * np.sqrt(var) * snapshot.ess ** (-0.2),
                        (hi - lo) / (grid_points - 1))
        snapshot.marginals[name] = Marginal(
            grid=grid,
            density=weighted_kde(col, weights, grid, bandwidth=bandwidth),
            q025=q025, q500=q500, q975=q975, map_value=map_value,
        )
    return snapshot
