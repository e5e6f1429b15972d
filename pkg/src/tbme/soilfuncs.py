"""Unsaturated soil constitutive relations and posterior curve bands.

Mualem-van Genuchten retention and conductivity, the multi-subsystem
(dual-porosity style) retention variant, and helpers that turn a weighted
posterior ensemble into retention / conductivity quantile bands.

Unit conventions: pressure head h in meters (negative when unsaturated),
alpha in 1/m.  A small air-entry head separates the saturated branch from
the retention curve; at and above it theta is pinned to theta_s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .posterior import PosteriorSnapshot, weighted_quantile

AIR_ENTRY_HEAD = -0.02  # m

MVG_PARAMETER_NAMES = ("theta_s", "alpha", "n", "K_sat", "l")


@dataclass
class MvgParams:
    """Mualem-van Genuchten parameter set.

    theta_r / theta_s   residual and saturated water content [-]
    alpha               inverse air-entry scale [1/m]
    n                   pore-size distribution shape, > 1; m = 1 - 1/n
    K_sat               saturated conductivity (any consistent rate unit)
    l                   tortuosity exponent [-]
    h_s                 air-entry head [m], theta(h >= h_s) = theta_s
    """

    theta_r: float
    theta_s: float
    alpha: float
    n: float
    K_sat: float
    l: float
    h_s: float = AIR_ENTRY_HEAD

    def __post_init__(self):
        if not 0 <= self.theta_r < self.theta_s <= 1:
            raise ValidationError(
                f"need 0 <= theta_r < theta_s <= 1, got {self.theta_r}, {self.theta_s}"
            )
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if self.n <= 1:
            raise ValidationError(f"n must be > 1, got {self.n}")
        if self.K_sat < 0:
            raise ValidationError(f"K_sat must be >= 0, got {self.K_sat}")
        if self.h_s >= 0:
            raise ValidationError(f"air-entry head must be < 0, got {self.h_s}")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n


@dataclass
class DurnerParams:
    """Weighted superposition of van Genuchten subsystems.

    subsystems holds (weight, alpha, n) triples; weights must sum to one.
    A single subsystem with weight 1 reduces to the plain MvG curve.
    """

    subsystems: list[tuple[float, float, float]]
    theta_r: float
    theta_s: float
    h_s: float = AIR_ENTRY_HEAD

    def __post_init__(self):
        if not self.subsystems:
            raise ValidationError("need at least one (weight, alpha, n) subsystem")
        for w, alpha, n in self.subsystems:
            if not 0 < w <= 1:
                raise ValidationError(f"subsystem weight must be in (0, 1], got {w}")
            if alpha <= 0 or n <= 1:
                raise ValidationError(f"invalid subsystem alpha={alpha}, n={n}")
        total = sum(w for w, _, _ in self.subsystems)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"subsystem weights must sum to 1, got {total!r}")
        if not 0 <= self.theta_r < self.theta_s <= 1:
            raise ValidationError(
                f"need 0 <= theta_r < theta_s <= 1, got {self.theta_r}, {self.theta_s}"
            )


def _as_array(h):
    arr = np.asarray(h, dtype=float)
    return arr, arr.ndim == 0


def mvg_saturation(h, p: MvgParams):
    """Effective saturation (1 + |alpha h|^n)^(-m), pinned to 1 above h_s."""
    arr, scalar = _as_array(h)
    with np.errstate(over="ignore"):
        se = (1.0 + np.abs(p.alpha * arr) ** p.n) ** (-p.m)
    se = np.where(arr >= p.h_s, 1.0, se)
    return float(se) if scalar else se


def mvg_theta(h, p: MvgParams):
    """Water content theta(h); theta_s on the saturated branch."""
    arr, scalar = _as_array(h)
    theta = p.theta_r + (p.theta_s - p.theta_r) * mvg_saturation(arr, p)
    # the affine map can overshoot theta_s by one ulp when theta_r != 0
    theta = np.clip(theta, p.theta_r, p.theta_s)
    theta = np.where(arr >= p.h_s, p.theta_s, theta)
    return float(theta) if scalar else theta


def mvg_conductivity_from_saturation(se, p: MvgParams):
    """K(Se) = K_sat Se^l (1 - (1 - Se^(1/m))^m)^2 on Se in [0, 1]."""
    arr, scalar = _as_array(se)
    if np.any((arr < 0) | (arr > 1)):
        raise ValidationError("effective saturation must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        k = p.K_sat * arr ** p.l * (1.0 - (1.0 - arr ** (1.0 / p.m)) ** p.m) ** 2
    # Se = 0 with l <= 0 evaluates 0^l * 0 = nan in IEEE; the limit is 0
    # because the bracket vanishes like Se^(2/m), faster than Se^l diverges
    k = np.where(arr == 0.0, 0.0, k)
    return float(k) if scalar else k


def mvg_conductivity(h, p: MvgParams):
    """Unsaturated conductivity K(h); equals K_sat at and above h_s."""
    return mvg_conductivity_from_saturation(mvg_saturation(h, p), p)


def mvg_head_from_saturation(se, p: MvgParams):
    """Invert the retention curve: h(Se) = -(1/alpha) (Se^(-1/m) - 1)^(1/n).

    Saturations at or above the air-entry level clamp to h_s, mirroring the
    saturated branch of mvg_theta.
    """
    arr, scalar = _as_array(se)
    if np.any((arr <= 0) | (arr > 1)):
        raise ValidationError("effective saturation must lie in (0, 1]")
    with np.errstate(over="ignore"):
        head = -(1.0 / p.alpha) * (arr ** (-1.0 / p.m) - 1.0) ** (1.0 / p.n)
    head = np.minimum(head, p.h_s)
    return float(head) if scalar else head


def durner_theta(h, p: DurnerParams):
    """Multi-subsystem retention: theta_r + (theta_s - theta_r) sum_i w_i Se_i."""
    arr, scalar = _as_array(h)
    se = np.zeros_like(arr, dtype=float)
    for w, alpha, n in p.subsystems:
        m = 1.0 - 1.0 / n
        with np.errstate(over="ignore"):
            se = se + w * (1.0 / (1.0 + (alpha * np.abs(arr)) ** n)) ** m
    theta = p.theta_r + (p.theta_s - p.theta_r) * se
    theta = np.clip(theta, p.theta_r, p.theta_s)
    theta = np.where(arr >= p.h_s, p.theta_s, theta)
    return float(theta) if scalar else theta


# ----------------------------------------------------------------------
# posterior curve bands
# ----------------------------------------------------------------------

@dataclass
class WrcBands:
    """Retention / conductivity quantile bands for one posterior snapshot."""

    window_end: int
    tau: int
    h_grid: np.ndarray
    levels: tuple[str, ...]
    theta: dict[str, np.ndarray]
    conductivity: dict[str, np.ndarray]
    theta_map: np.ndarray
    conductivity_map: np.ndarray


def default_head_grid(n_points: int = 80, h_min: float = -20.0) -> np.ndarray:
    """Log-spaced heads from dry (h_min) up to the air-entry head."""
    mags = np.logspace(np.log10(-h_min), np.log10(-AIR_ENTRY_HEAD), n_points)
    return -mags  # ascending: most negative first


def _level_label(q: float) -> str:
    return f"q{round(q * 1000):03d}"


def ensemble_mvg_params(ensemble, row: int) -> MvgParams:
    """MvG parameter set from one ensemble row; theta_r defaults to 0."""
    names = ensemble.parameter_names
    missing = [n for n in MVG_PARAMETER_NAMES if n not in names]
    if missing:
        raise ValidationError(
            f"ensemble lacks retention-curve parameter columns: {missing}"
        )
    get = {n: float(ensemble.parameters[row, names.index(n)]) for n in names}
    return MvgParams(
        theta_r=get.get("theta_r", 0.0),
        theta_s=get["theta_s"],
        alpha=get["alpha"],
        n=get["n"],
        K_sat=get["K_sat"],
        l=get["l"],
    )


def curve_bands(snapshot: PosteriorSnapshot, ensemble, h_grid=None,
                levels=(0.025, 0.5, 0.975)) -> WrcBands:
    """Pointwise weighted quantile bands of theta(h) and K(h).

    Every realization's curve is evaluated on the shared head grid and the
    posterior weights of the snapshot are applied per grid point, so the
    bands are quantiles of curves, not curves of quantile parameters.  The
    MAP curve belongs to the best-scoring single member.
    """
    if h_grid is None:
        h_grid = default_head_grid()
    h_grid = np.asarray(h_grid, dtype=float)
    if np.any(h_grid >= 0):
        raise ValidationError("head grid must be strictly negative (unsaturated)")
    n_mc = ensemble.parameters.shape[0]
    if snapshot.weights.size != n_mc:
        raise ValidationError(
            f"snapshot has {snapshot.weights.size} weights, ensemble {n_mc} rows"
        )
    theta_all = np.empty((n_mc, h_grid.size))
    cond_all = np.empty((n_mc, h_grid.size))
    for i in range(n_mc):
        p = ensemble_mvg_params(ensemble, i)
        theta_all[i] = mvg_theta(h_grid, p)
        cond_all[i] = mvg_conductivity(h_grid, p)

    labels = tuple(_level_label(q) for q in levels)
    theta_q = {lab: np.empty(h_grid.size) for lab in labels}
    cond_q = {lab: np.empty(h_grid.size) for lab in labels}
    for g in range(h_grid.size):
        tq = weighted_quantile(theta_all[:, g], snapshot.weights, np.asarray(levels))
        kq = weighted_quantile(cond_all[:, g], snapshot.weights, np.asarray(levels))
        for i, lab in enumerate(labels):
            theta_q[lab][g] = tq[i]
            cond_q[lab][g] = kq[i]
    return WrcBands(
        window_end=snapshot.window_end,
        tau=snapshot.tau,
        h_grid=h_grid,
        levels=labels,
        theta=theta_q,
        conductivity=cond_q,
        theta_map=theta_all[snapshot.map_index],
        conductivity_map=cond_all[snapshot.map_index],
    )
