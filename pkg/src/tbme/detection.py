"""Hypothesis test, signal segmentation and phase labels for evidence curves.

A window is flagged when its evidence falls below the chosen low quantile of
the reference bands (default q025, one-sided: suspiciously *good* fits are
never flagged).  Falling below the sampled minimum is reported as its own,
harder verdict.  Flagged windows are grouped into maximal contiguous runs;
a run of length L_s caused by a residual period of length L_e satisfies
L_s ~ L_e + tau because every window that overlaps the period is penalized,
so max(L_s - tau, 0) is reported as the residual-length estimate.

Phase labels per signal window: II on the falling flank, III on a low
plateau, III* where the curve climbs back above the alpha quantile for at
least two consecutive windows inside the run (parameter compensation), IV
on the final rising flank.  Windows outside any signal are phase I by
convention and carry no label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .evidence import TbmeCurve
from .reference import QUANTILE_FIELDS, ReferenceBands

VERDICT_INSIDE = "inside"
VERDICT_BELOW_QUANTILE = "below_quantile"
VERDICT_BELOW_MINIMUM = "below_minimum"
VERDICTS = (VERDICT_INSIDE, VERDICT_BELOW_QUANTILE, VERDICT_BELOW_MINIMUM)

STATE_DESCENT = "II"
STATE_PLATEAU = "III"
STATE_COMPENSATION = "III*"
STATE_RECOVERY = "IV"


@dataclass
class Signal:
    """One maximal run of flagged windows.

    onset / offset are window-end day indices, both inclusive.  severity is
    the worst verdict inside the run.  states holds one phase label per run
    window once classify_states has been applied.
    """

    onset: int
    offset: int
    L_s: int
    L_e_estimate: int
    severity: str
    states: list[str] = field(default_factory=list)


@dataclass
class DetectionReport:
    tau: int
    alpha_quantile: str
    window_ends: np.ndarray
    verdicts: list[str]
    signals: list[Signal]


def _check_alignment(curve: TbmeCurve, bands: ReferenceBands):
    if curve.tau != bands.tau:
        raise ValidationError(
            f"window size mismatch: curve tau={curve.tau}, bands tau={bands.tau}"
        )
    if not np.array_equal(curve.window_ends, bands.window_ends):
        raise ValidationError("curve and bands cover different window ends")


def test_windows(curve: TbmeCurve, bands: ReferenceBands,
                 alpha_quantile: str = "q025") -> list[str]:
    """One-sided verdict per window, strict comparisons.

    Only the ordering of curve vs. band values enters, so any strictly
    increasing transform applied to both leaves the verdicts unchanged.
    """
    _check_alignment(curve, bands)
    if alpha_quantile not in QUANTILE_FIELDS:
        raise ValidationError(
            f"unknown quantile {alpha_quantile!r}; choose from {QUANTILE_FIELDS}"
        )
    lo = bands.quantiles["min"]
    alpha = bands.quantiles[alpha_quantile]
    out = []
    for v, mn, qa in zip(curve.log_tbme, lo, alpha):
        if v < mn:
            out.append(VERDICT_BELOW_MINIMUM)
        elif v < qa:
            out.append(VERDICT_BELOW_QUANTILE)
        else:
            out.append(VERDICT_INSIDE)
    return out


def segment_signals(verdicts: list[str], tau: int, window_ends=None,
                    curve: TbmeCurve | None = None,
                    bands: ReferenceBands | None = None,
                    excursion: bool = False) -> list[Signal]:
    """Maximal contiguous runs of non-inside verdicts.

    Runs separated by even a single inside window stay separate.  With
    ``excursion=True`` (needs curve and bands) each run is widened to the
    surrounding stretch where the curve sits below q160, and runs whose
    widened spans touch are merged; that recovers the visually apparent
    signal length when the descent into the band is gradual.
    """
    bad = [v for v in verdicts if v not in VERDICTS]
    if bad:
        raise ValidationError(f"unknown verdict {bad[0]!r}")
    n = len(verdicts)
    if window_ends is None:
        window_ends = np.arange(tau, tau + n, dtype=np.int64)
    else:
        window_ends = np.asarray(window_ends, dtype=np.int64)
        if window_ends.size != n:
            raise ValidationError("window_ends length does not match verdicts")

    runs = []  # [start, stop] positions, inclusive
    start = None
    for i, v in enumerate(verdicts):
        if v != VERDICT_INSIDE and start is None:
            start = i
        elif v == VERDICT_INSIDE and start is not None:
            runs.append([start, i - 1])
            start = None
    if start is not None:
        runs.append([start, n - 1])

    if excursion and runs:
        if curve is None or bands is None:
            raise ValidationError("excursion mode needs the curve and the bands")
        _check_alignment(curve, bands)
        below_q160 = curve.log_tbme < bands.quantiles["q160"]
        widened = []
        for lo, hi in runs:
            while lo > 0 and below_q160[lo - 1]:
                lo -= 1
            while hi < n - 1 and below_q160[hi + 1]:
                hi += 1
            if widened and lo <= widened[-1][1] + 1:
                widened[-1][1] = max(widened[-1][1], hi)
            else:
                widened.append([lo, hi])
        runs = widened

    signals = []
    for lo, hi in runs:
        worst = VERDICT_BELOW_QUANTILE
        if any(v == VERDICT_BELOW_MINIMUM for v in verdicts[lo:hi + 1]):
            worst = VERDICT_BELOW_MINIMUM
        length = hi - lo + 1
        signals.append(Signal(
            onset=int(window_ends[lo]),
            offset=int(window_ends[hi]),
            L_s=length,
            L_e_estimate=max(length - tau, 0),
            severity=worst,
        ))
    return signals


def classify_states(curve: TbmeCurve, bands: ReferenceBands, signal: Signal,
                    alpha_quantile: str = "q025") -> list[str]:
    """Phase label for every window of one signal.

    Heuristic: the maximal strictly-decreasing prefix is the descent (II),
    the maximal strictly-increasing suffix the recovery (IV).  Whatever lies
    between is a plateau (III), except stretches of >= 2 consecutive windows
    back at or above the alpha quantile, which indicate that the parameters
    temporarily compensated the error (III*).  Single-window blips above the
    quantile stay III: one window is indistinguishable from noise.
    """
    _check_alignment(curve, bands)
    if alpha_quantile not in QUANTILE_FIELDS:
        raise ValidationError(
            f"unknown quantile {alpha_quantile!r}; choose from {QUANTILE_FIELDS}"
        )
    ends = curve.window_ends
    sel = (ends >= signal.onset) & (ends <= signal.offset)
    if not sel.any():
        raise ValidationError(
            f"signal {signal.onset}..{signal.offset} outside the curve's windows"
        )
    v = curve.log_tbme[sel]
    alpha = bands.quantiles[alpha_quantile][sel]
    n = v.size
    if n == 1:
        return [STATE_DESCENT]

    descent_end = 0
    while descent_end + 1 < n and v[descent_end + 1] < v[descent_end]:
        descent_end += 1
    recovery_start = n - 1
    while recovery_start - 1 >= 0 and v[recovery_start - 1] < v[recovery_start]:
        recovery_start -= 1

    states = [STATE_PLATEAU] * n
    if recovery_start <= descent_end:
        # plain dip: down to the minimum, up right after
        bottom = int(np.argmin(v))
        for i in range(n):
            states[i] = STATE_DESCENT if i <= bottom else STATE_RECOVERY
        return states

    for i in range(descent_end + 1):
        states[i] = STATE_DESCENT
    for i in range(recovery_start, n):
        states[i] = STATE_RECOVERY
    # interior: mark compensation stretches (>= 2 windows back above alpha)
    i = descent_end + 1
    while i < recovery_start:
        if v[i] >= alpha[i]:
            j = i
            while j < recovery_start and v[j] >= alpha[j]:
                j += 1
            if j - i >= 2:
                for k in range(i, j):
                    states[k] = STATE_COMPENSATION
            i = j
        else:
            i += 1
    return states


def run_detection(curve: TbmeCurve, bands: ReferenceBands,
                  alpha_quantile: str = "q025",
                  excursion: bool = False) -> DetectionReport:
    """Verdicts, segmentation and phase labels in one call."""
    verdicts = test_windows(curve, bands, alpha_quantile)
    signals = segment_signals(verdicts, curve.tau, curve.window_ends,
                              curve=curve, bands=bands, excursion=excursion)
    for s in signals:
        s.states = classify_states(curve, bands, s, alpha_quantile)
    return DetectionReport(
        tau=curve.tau,
        alpha_quantile=alpha_quantile,
        window_ends=curve.window_ends,
        verdicts=verdicts,
        signals=signals,
    )
