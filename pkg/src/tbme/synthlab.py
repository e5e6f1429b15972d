"""Synthetic laboratory: a fast toy soil column with injectable defects.

The point of this module is not hydrological realism but a controllable
test bed whose error phenomenology mimics the field situation: a slow
storage with nonlinear recession and evaporative loss, an optional fast
bypass store that activates only while a structural defect is switched on,
and a retention-curve map from relative storage to pressure head so the
output lives in head space like real tensiometer data.

State equations (explicit Euler, ``substeps`` steps per day, storages in
cm, rates in cm/day):

    S' = S + dt * [ P_eff (1 - w2_t) - e_frac PET (S / S_max)
                    - K_sat (S / S_max)^k_rec ]
    F' = F + dt * [ P_eff w2_t - k_fast F ]

with S and F clamped to [0, S_max] after every substep.  ``w2_t`` equals
``w2`` inside an active structural period and 0 otherwise, so the clean
model is strictly single-store.  ``P_eff`` is the daily precipitation,
zeroed on forcing-removal days.  The reported observable per day is

    h = -(1/alpha) (Theta^(-1/m) - 1)^(1/n),  Theta = (S + F) / S_max

clamped at the air-entry head, with Theta floored at 1e-6.

Four ready-made validation cases mirror a layered set of error types on a
200-day horizon: ``base`` (no defect), ``structural`` (bypass switched on
during three ten-day periods), ``forcing`` (rain deleted from the driver
on known days), ``superimposed`` (both defect types on a truth drawn from
the low-density edge of the ensemble).  The truth realization is always
held out of the delivered ensemble, so its observations are exactly the
kind of data the remaining members are tested against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import (ForcingSeries, ObservationSeries, PredictionEnsemble,
                     save_ensemble, save_forcing, save_json,
                     save_observations)
from .errors import ValidationError
from .likelihood import LOG_2PI
from .soilfuncs import AIR_ENTRY_HEAD, MvgParams

log = logging.getLogger(__name__)

THETA_FLOOR = 1e-6
DAY_SUBSTEPS = 24

CASE_IDS = ("base", "structural", "forcing", "superimposed")


@dataclass
class ToyModelParams:
    """Scalar parameters of one toy-column realization.

    S_max   capacity of the slow store [cm]
    k_rec   recession exponent of the drainage law [-]
    K_sat   drainage coefficient at saturation [cm/day]
    e_frac  fraction of potential ET realized at full storage [-]
    mvg     retention parameters for the storage -> head map
    w2      bypass fraction while a structural period is active [-]
    k_fast  recession rate of the bypass store [1/day]
    """

    S_max: float
    k_rec: float
    K_sat: float
    e_frac: float
    mvg: MvgParams
    w2: float = 0.0
    k_fast: float = 0.0

    def __post_init__(self):
        if self.S_max <= 0:
            raise ValidationError(f"S_max must be > 0, got {self.S_max}")
        if self.k_rec <= 0:
            raise ValidationError(f"k_rec must be > 0, got {self.k_rec}")
        if self.K_sat < 0:
            raise ValidationError(f"K_sat must be >= 0, got {self.K_sat}")
        if not 0 <= self.e_frac <= 1:
            raise ValidationError(f"e_frac must be in [0, 1], got {self.e_frac}")
        if not 0 <= self.w2 < 1:
            raise ValidationError(f"w2 must be in [0, 1), got {self.w2}")
        if self.k_fast < 0:
            raise ValidationError(f"k_fast must be >= 0, got {self.k_fast}")


@dataclass
class ErrorInjection:
    """What to break, and when.

    structural_periods    inclusive (start, end) day intervals during which
                          the bypass store is switched on
    forcing_removal_days  days whose precipitation the model never sees
    """

    structural_periods: list[tuple[int, int]] = field(default_factory=list)
    forcing_removal_days: list[int] = field(default_factory=list)

    def __post_init__(self):
        periods = sorted((int(a), int(b)) for a, b in self.structural_periods)
        for a, b in periods:
            if a < 1 or b < a:
                raise ValidationError(f"bad structural period ({a}, {b})")
        for (_, b0), (a1, _) in zip(periods, periods[1:]):
            if a1 <= b0:
                raise ValidationError("structural periods overlap")
        self.structural_periods = periods
        days = sorted(set(int(d) for d in self.forcing_removal_days))
        if days and days[0] < 1:
            raise ValidationError(f"bad forcing-removal day {days[0]}")
        self.forcing_removal_days = days

    @property
    def empty(self) -> bool:
        return not self.structural_periods and not self.forcing_removal_days

    def last_day(self) -> int:
        last = 0
        if self.structural_periods:
            last = max(last, max(b for _, b in self.structural_periods))
        if self.forcing_removal_days:
            last = max(last, max(self.forcing_removal_days))
        return last

    def first_day(self) -> int | None:
        first = None
        if self.structural_periods:
            first = min(a for a, _ in self.structural_periods)
        if self.forcing_removal_days:
            d = min(self.forcing_removal_days)
            first = d if first is None else min(first, d)
        return first


@dataclass
class WaterBalance:
    """Accumulated fluxes of one run; valid only while no clamp binds."""

    inflow: float
    outflow: float
    initial_storage: float
    final_storage: float

    @property
    def closure_error(self) -> float:
        return (self.inflow - self.outflow) - (self.final_storage - self.initial_storage)


def _simulate_heads(s_max, k_rec, k_sat, e_frac, alpha, n_shape,
                    forcing: ForcingSeries, injection: ErrorInjection | None,
                    w2: float, k_fast: float, s0=None, s0_frac: float = 0.5,
                    substeps: int = DAY_SUBSTEPS, track_balance: bool = False):
    """Vectorized stepper over realizations; single runs are 1-row batches."""
    s_max = np.asarray(s_max, dtype=float)
    n = s_max.size
    n_days = forcing.n_days
    if injection is not None and injection.last_day() > n_days:
        raise ValidationError(
            f"injection touches day {injection.last_day()} but the horizon "
            f"ends at day {n_days}"
        )
    structural = np.zeros(n_days + 1, dtype=bool)
    removed = np.zeros(n_days + 1, dtype=bool)
    if injection is not None:
        for a, b in injection.structural_periods:
            structural[a:b + 1] = True
        for d in injection.forcing_removal_days:
            removed[d] = True

    dt = 1.0 / substeps
    S = s0_frac * s_max if s0 is None else np.full(n, float(s0))
    F = np.zeros(n)
    inflow = np.zeros(n)
    outflow = np.zeros(n)
    start_storage = S + F

    m_shape = 1.0 - 1.0 / np.asarray(n_shape, dtype=float)
    inv_alpha = 1.0 / np.asarray(alpha, dtype=float)
    heads = np.empty((n, n_days))
    for t in range(1, n_days + 1):
        p_eff = 0.0 if removed[t] else float(forcing.precip[t - 1])
        pet = float(forcing.pet[t - 1])
        frac = w2 if structural[t] else 0.0
        in_slow = p_eff * (1.0 - frac)
        in_fast = p_eff * frac
        for _ in range(substeps):
            evap = e_frac * pet * (S / s_max)
            drain = k_sat * (S / s_max) ** k_rec
            fast_out = k_fast * F
            S = S + dt * (in_slow - evap - drain)
            F = F + dt * (in_fast - fast_out)
            if track_balance:
                inflow += dt * p_eff
                outflow += dt * (evap + drain + fast_out)
            np.clip(S, 0.0, s_max, out=S)
            np.clip(F, 0.0, s_max, out=F)
        theta = np.clip((S + F) / s_max, THETA_FLOOR, 1.0)
        with np.errstate(over="ignore"):
            h = -inv_alpha * (theta ** (-1.0 / m_shape) - 1.0) ** (1.0 / n_shape)
        heads[:, t - 1] = np.minimum(h, AIR_ENTRY_HEAD)

    if track_balance:
        balance = WaterBalance(
            inflow=inflow, outflow=outflow,
            initial_storage=start_storage, final_storage=S + F,
        )
        return heads, balance
    return heads


def simulate_toy(params: ToyModelParams, forcing: ForcingSeries,
                 injection: ErrorInjection | None = None, s0: float | None = None,
                 s0_frac: float = 0.5, substeps: int = DAY_SUBSTEPS,
                 return_balance: bool = False):
    """Daily pressure heads [m] of one realization over the forcing horizon."""
    out = _simulate_heads(
        np.array([params.S_max]), np.array([params.k_rec]),
        np.array([params.K_sat]), np.array([params.e_frac]),
        np.array([params.mvg.alpha]), np.array([params.mvg.n]),
        forcing, injection, params.w2, params.k_fast,
        s0=s0, s0_frac=s0_frac, substeps=substeps, track_balance=return_balance,
    )
    if return_balance:
        heads, bal = out
        return heads[0], WaterBalance(
            inflow=float(bal.inflow[0]), outflow=float(bal.outflow[0]),
            initial_storage=float(bal.initial_storage[0]),
            final_storage=float(bal.final_storage[0]),
        )
    return out[0]


# ----------------------------------------------------------------------
# prior ensemble
# ----------------------------------------------------------------------

def default_toy_bounds() -> dict[str, tuple[float, float]]:
    """Prior box for the sampled columns; the first five drive the
    retention/conductivity curve summaries, the rest the storage dynamics."""
    return {
        "theta_s": (0.35, 0.65),
        "alpha": (3.0, 4.5),
        "n": (2.2, 3.0),
        "K_sat": (3.0, 5.0),
        "l": (0.1, 1.0),
        "S_max": (14.0, 22.0),
        "k_rec": (1.9, 2.5),
        "e_frac": (0.4, 0.7),
    }


TOY_COLUMNS = tuple(default_toy_bounds().keys())


def toy_params_from_values(values: dict[str, float], w2: float = 0.0,
                           k_fast: float = 0.0) -> ToyModelParams:
    # theta_s and l only shape curve summaries, so they may be absent
    return ToyModelParams(
        S_max=values["S_max"], k_rec=values["k_rec"], K_sat=values["K_sat"],
        e_frac=values["e_frac"],
        mvg=MvgParams(theta_r=0.0, theta_s=values.get("theta_s", 0.5),
                      alpha=values["alpha"], n=values["n"],
                      K_sat=values["K_sat"], l=values.get("l", 0.5)),
        w2=w2, k_fast=k_fast,
    )


def sample_prior_ensemble(bounds: dict, n: int, forcing: ForcingSeries,
                          seed: int, s0_frac: float = 0.5,
                          substeps: int = DAY_SUBSTEPS) -> PredictionEnsemble:
    """Uniform draws over the prior box, each simulated without injection.

    Draws whose simulation degenerates (non-finite output) are resampled
    and counted; with the default bounds this should never trigger, but the
    guard keeps an exotic user box from silently poisoning the ensemble.
    """
    if n < 2:
        raise ValidationError("need at least 2 realizations")
    names = list(bounds.keys())
    missing = [c for c in ("S_max", "k_rec", "K_sat", "e_frac", "alpha", "n")
               if c not in names]
    if missing:
        raise ValidationError(f"bounds must include the dynamic columns, missing {missing}")
    lo = np.array([bounds[k][0] for k in names])
    hi = np.array([bounds[k][1] for k in names])
    if np.any(hi < lo):
        raise ValidationError("invalid bounds: upper < lower")
    rng = np.random.default_rng(seed)
    params = lo + (hi - lo) * rng.random((n, len(names)))
    col = {name: params[:, i] for i, name in enumerate(names)}

    def run(rows):
        return _simulate_heads(
            col["S_max"][rows], col["k_rec"][rows], col["K_sat"][rows],
            col["e_frac"][rows], col["alpha"][rows], col["n"][rows],
            forcing, None, 0.0, 0.0, s0_frac=s0_frac, substeps=substeps,
        )

    everyone = np.arange(n)
    predictions = run(everyone)
    resampled = 0
    for _ in range(100):
        bad = np.flatnonzero(~np.all(np.isfinite(predictions), axis=1))
        if bad.size == 0:
            break
        resampled += bad.size
        params[bad] = lo + (hi - lo) * rng.random((bad.size, len(names)))
        for i, name in enumerate(names):
            col[name] = params[:, i]
        predictions[bad] = run(bad)
    else:
        raise ValidationError("could not find stable parameter draws in 100 rounds")
    if resampled:
        log.warning("resampled %d unstable parameter draws", resampled)

    return PredictionEnsemble(
        predictions=predictions,
        parameters=params,
        parameter_names=names,
        parameter_bounds={k: (float(bounds[k][0]), float(bounds[k][1])) for k in names},
    )


# ----------------------------------------------------------------------
# truth selection
# ----------------------------------------------------------------------

def loo_series_stat(ensemble: PredictionEnsemble, sigma) -> np.ndarray:
    """Leave-one-out full-series log evidence of each member's own series.

    stat[k] = log mean_i!=k p(y_k | y_i), the one-window (tau = horizon)
    evidence when member k plays synthetic truth.  Members in densely
    populated regions of prediction space score high.  Computed via the
    Gram matrix so the full pairwise sweep stays a single matmul.
    """
    y = ensemble.predictions
    n, n_obs = y.shape
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(n_obs, float(sigma))
    z = y / (np.sqrt(2.0) * sigma)[None, :]
    sq = np.einsum("ij,ij->i", z, z)
    quad = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(quad, 0.0, out=quad)  # Gram round-off can leave tiny negatives
    const = float(np.sum(-0.5 * (LOG_2PI + np.log(sigma * sigma))))
    ll = const - quad
    np.fill_diagonal(ll, -np.inf)
    peak = ll.max(axis=1)
    s = np.exp(ll - peak[:, None]).sum(axis=1)
    return peak + np.log(s) - np.log(n - 1)


def select_truth(ensemble: PredictionEnsemble, sigma, region: str = "high") -> int:
    """Pick the truth member: densest ('high') or 5th-percentile ('low')."""
    stat = loo_series_stat(ensemble, sigma)
    if region == "high":
        return int(np.argmax(stat))
    if region == "low":
        order = np.argsort(stat)
        return int(order[int(round(0.05 * (stat.size - 1)))])
    raise ValidationError(f"region must be 'high' or 'low', got {region!r}")


# ----------------------------------------------------------------------
# forcing fixture
# ----------------------------------------------------------------------

# 200-day pattern of guaranteed rain events [cm]; chosen so that every
# injection window of the shipped cases contains rain to act on.
_BASE_PULSES = {
    5: 1.2, 10: 2.0, 16: 0.8, 22: 1.2, 27: 0.7, 32: 4.0, 35: 2.5, 37: 2.5, 44: 2.0,
    45: 1.0, 52: 1.5, 58: 1.3, 64: 0.9, 70: 1.1, 76: 0.8, 81: 1.6, 82: 4.0,
    84: 1.4, 89: 2.4, 90: 1.0, 96: 1.0, 100: 2.0, 107: 1.2, 112: 1.4,
    118: 0.9, 125: 1.8, 131: 0.8, 138: 1.0, 144: 1.3, 150: 2.2, 156: 0.9,
    161: 1.4, 163: 1.0, 164: 1.5, 165: 3.2, 167: 1.8, 168: 1.0, 172: 0.9,
    178: 1.3, 184: 0.8, 190: 2.0, 196: 1.0,
}


def _scale_day(day: int, n_days: int) -> int:
    return min(n_days, max(1, round(day * n_days / 200)))


def default_forcing(n_days: int = 200, seed: int = 715) -> ForcingSeries:
    """Deterministic mixed driver: fixed rain pulses plus seeded drizzle."""
    precip = np.zeros(n_days)
    for day, depth in _BASE_PULSES.items():
        precip[_scale_day(day, n_days) - 1] += depth
    rng = np.random.default_rng(seed)
    drizzle_days = rng.random(n_days) < 0.08
    precip[drizzle_days] += 0.05 + 0.35 * rng.random(int(drizzle_days.sum()))
    t = np.arange(1, n_days + 1)
    pet = 0.3 + 0.08 * np.sin(2.0 * np.pi * t / n_days)
    return ForcingSeries(times=t, precip=precip, pet=pet)


# ----------------------------------------------------------------------
# case builder
# ----------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Desk-scale laboratory configuration."""

    n_days: int = 200
    n_mc: int = 2000
    seed: int = 20240601
    sigma: float = 0.005  # observation error [m]
    bounds: dict = field(default_factory=default_toy_bounds)
    s0_frac: float = 0.4
    substeps: int = DAY_SUBSTEPS
    # the bypass store drains much slower than the marginal recession of the
    # slow store, so structurally routed rain keeps the column wet: residuals
    # of the structural defect oppose the (drying) forcing-removal defect
    truth_w2: float = 0.9
    truth_k_fast: float = 0.02
    residual_threshold: float = 1.0  # in sigma units


@dataclass
class CaseBundle:
    case_id: str
    config: SynthConfig
    ensemble: PredictionEnsemble  # truth realization already removed
    observations: ObservationSeries
    forcing: ForcingSeries
    truth_params: ToyModelParams
    truth_values: dict[str, float]
    held_out_row: int  # position in the pre-removal sample, 1-based
    injection: ErrorInjection
    residual_periods: list[tuple[int, int]]


def case_injection(case_id: str, n_days: int = 200) -> ErrorInjection:
    """The shipped defect layout, scaled onto the requested horizon."""
    if case_id not in CASE_IDS:
        raise ValidationError(f"unknown case {case_id!r}; choose from {CASE_IDS}")
    s = lambda d: _scale_day(d, n_days)
    structural = [(s(31), s(40)), (s(81), s(90)), (s(161), s(170))]
    if case_id == "base":
        return ErrorInjection()
    if case_id == "structural":
        return ErrorInjection(structural_periods=structural)
    if case_id == "forcing":
        days = [36, 37, 38, 39, 40, 89, 90, 166, 167, 168, 169, 170]
        return ErrorInjection(forcing_removal_days=[s(d) for d in days])
    days = [44, 45, 81, 82, 84, 161, 163, 164, 165]
    return ErrorInjection(structural_periods=structural,
                          forcing_removal_days=[s(d) for d in days])


def _significant_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    periods = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            periods.append((start + 1, i))
            start = None
    if start is not None:
        periods.append((start + 1, mask.size))
    return periods


def build_case(case_id: str, config: SynthConfig | None = None) -> CaseBundle:
    """Sample the laboratory, pick a truth, inject the case's defects.

    The truth member is chosen by leave-one-out evidence (densest region,
    or the sparse 5th percentile for the superimposed case), simulated with
    the case's injection to produce the observations, and then removed from
    the delivered ensemble.  Without injection the observations equal the
    held-out member's own predictions bit for bit.
    """
    config = config or SynthConfig()
    if case_id not in CASE_IDS:
        raise ValidationError(f"unknown case {case_id!r}; choose from {CASE_IDS}")
    streams = np.random.SeedSequence(config.seed).spawn(2)
    forcing_seed, ensemble_seed = (int(s.generate_state(1)[0]) for s in streams)

    forcing = default_forcing(config.n_days, seed=forcing_seed)
    full = sample_prior_ensemble(config.bounds, config.n_mc, forcing,
                                 seed=ensemble_seed, s0_frac=config.s0_frac,
                                 substeps=config.substeps)
    region = "low" if case_id == "superimposed" else "high"
    truth_idx = select_truth(full, config.sigma, region)

    names = full.parameter_names
    values = {name: float(full.parameters[truth_idx, i])
              for i, name in enumerate(names)}
    injection = case_injection(case_id, config.n_days)
    dual = bool(injection.structural_periods)
    truth = toy_params_from_values(
        values,
        w2=config.truth_w2 if dual else 0.0,
        k_fast=config.truth_k_fast if dual else 0.0,
    )
    obs_values = simulate_toy(truth, forcing, injection,
                              s0_frac=config.s0_frac, substeps=config.substeps)
    clean = full.predictions[truth_idx]
    significant = np.abs(obs_values - clean) > config.residual_threshold * config.sigma
    residual_periods = _significant_runs(significant)

    observations = ObservationSeries(
        times=np.arange(1, config.n_days + 1),
        values=obs_values,
        sigma=config.sigma,
    )
    return CaseBundle(
        case_id=case_id,
        config=config,
        ensemble=full.without_realization(truth_idx),
        observations=observations,
        forcing=forcing,
        truth_params=truth,
        truth_values=values,
        held_out_row=truth_idx + 1,
        injection=injection,
        residual_periods=residual_periods,
    )


def step_residual_observations(obs: ObservationSeries, start_day: int,
                               length: int, magnitude: float) -> ObservationSeries:
    """Copy of ``obs`` with a constant offset on ``length`` consecutive days.

    The offset starts at ``start_day`` (1-based, inclusive); together with a
    window size tau this produces the canonical flagged-run length of about
    length + tau for signal-length calibration.
    """
    if length < 1:
        raise ValidationError(f"step length must be >= 1, got {length}")
    if start_day < 1 or start_day + length - 1 > obs.n_obs:
        raise ValidationError(
            f"step days {start_day}..{start_day + length - 1} outside 1..{obs.n_obs}"
        )
    values = obs.values.copy()
    values[start_day - 1:start_day - 1 + length] += magnitude
    return ObservationSeries(times=obs.times.copy(), values=values,
                             sigma=obs.sigma.copy())


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------

def save_case(bundle: CaseBundle, out_dir) -> list:
    """Write a ``case_<id>`` directory: ensemble triple, observations,
    forcing and the truth record."""
    out_dir = Path(out_dir)
    case_dir = out_dir / f"case_{bundle.case_id}"
    case_dir.mkdir(parents=True, exist_ok=True)
    paths = list(save_ensemble(bundle.ensemble, case_dir))
    paths.append(save_observations(bundle.observations, case_dir / "observations.csv"))
    paths.append(save_forcing(bundle.forcing, case_dir / "forcing.csv"))
    cfg = bundle.config
    truth = {
        "case_id": bundle.case_id,
        "sigma": cfg.sigma,
        "held_out_realization": bundle.held_out_row,
        "truth_parameters": dict(bundle.truth_values,
                                 w2=bundle.truth_params.w2,
                                 k_fast=bundle.truth_params.k_fast),
        "injection": {
            "structural_periods": [list(p) for p in bundle.injection.structural_periods],
            "forcing_removal_days": list(bundle.injection.forcing_removal_days),
        },
        "residual_periods": [list(p) for p in bundle.residual_periods],
        "config": {
            "n_days": cfg.n_days, "n_mc": cfg.n_mc, "seed": cfg.seed,
            "sigma": cfg.sigma, "s0_frac": cfg.s0_frac, "substeps": cfg.substeps,
            "truth_w2": cfg.truth_w2, "truth_k_fast": cfg.truth_k_fast,
            "residual_threshold": cfg.residual_threshold,
        },
    }
    paths.append(save_json(truth, case_dir / "truth.json"))
    return paths
