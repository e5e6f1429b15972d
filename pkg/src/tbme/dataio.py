"""Text-format input and output for the windowed-evidence pipeline.

Every float is printed with 17 significant digits, which is enough to
reproduce the IEEE-754 double bit-exactly on reload.  All writers go
through an atomic temp-file rename so a crash never leaves a half-written
output behind.

Input formats
-------------
ensemble_predictions.csv   header ``realization,t1,...,tN``, one row per
                           model realization
ensemble_parameters.csv    header ``realization,<name1>,...``; the sibling
                           ``bounds.json`` maps each parameter name to
                           ``[lower, upper]``
observations.csv           header ``t,value,sigma``; the sigma column may
                           be dropped when a scalar sigma is supplied by
                           the caller (CLI flag ``--sigma``)
forcing.csv                header ``t,precip,pet``

Output formats
--------------
tbme_tau<T>.csv            ``t_end,log_tbme,ess`` with a leading ``#``
                           comment carrying tau and the ensemble size
reference_tau<T>.csv       ``t_end,min,q010,q025,q160,q500,q840,q975,q990,max``
                           with a leading ``#`` comment carrying the seed
detection_tau<T>.json      verdict vector plus segmented signals
posterior_w<J>.csv         ``parameter,kind,x,y`` density grids + summaries
wrc_w<J>.csv               retention / conductivity quantile bands
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from .detection import DetectionReport
    from .evidence import TbmeCurve
    from .posterior import PosteriorSnapshot
    from .reference import ReferenceBands
    from .soilfuncs import WrcBands


def fmt_float(x) -> str:
    """17 significant digits: shortest text that still round-trips a double."""
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temp file + rename in one directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_json(obj, path) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ----------------------------------------------------------------------
# input records
# ----------------------------------------------------------------------

@dataclass
class ObservationSeries:
    """Measured series with its Gaussian error scale.

    times   integer day indices 1..N, unit spacing
    values  one measurement per day (same unit as the predictions)
    sigma   per-day standard deviation, strictly positive; a scalar is
            broadcast over the horizon at construction
    """

    times: np.ndarray
    values: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 0:
            sig = np.full(self.times.shape, float(sig))
        self.sigma = sig
        n = self.times.size
        if n < 2:
            raise ValidationError("observations: need at least 2 time steps")
        if self.values.shape != (n,) or self.sigma.shape != (n,):
            raise ValidationError(
                f"observations: times/values/sigma lengths differ "
                f"({n}/{self.values.size}/{self.sigma.size})"
            )
        if not np.array_equal(self.times, np.arange(1, n + 1)):
            raise ValidationError(
                "observations: times must be the integer days 1..N with unit spacing"
            )
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise ValidationError(f"observations: non-finite value at t={self.times[bad[0]]}")
        bad = np.flatnonzero(~(np.isfinite(self.sigma) & (self.sigma > 0)))
        if bad.size:
            raise ValidationError(
                f"observations: sigma must be finite and > 0 (t={self.times[bad[0]]})"
            )

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass
class PredictionEnsemble:
    """Monte Carlo prediction matrix with the parameter draws behind it.

    predictions       (n_mc, n_obs) simulated series, row i from draw i
    parameters        (n_mc, n_par) sampled parameter vectors
    parameter_names   column names for ``parameters``
    parameter_bounds  name -> (lower, upper), the sampled prior box
    """

    predictions: np.ndarray
    parameters: np.ndarray
    parameter_names: list[str]
    parameter_bounds: dict[str, tuple[float, float]]

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=float)
        self.parameters = np.asarray(self.parameters, dtype=float)
        self.parameter_names = list(self.parameter_names)
        if self.predictions.ndim != 2 or self.parameters.ndim != 2:
            raise ValidationError("ensemble: predictions and parameters must be 2-D")
        n_mc = self.predictions.shape[0]
        if n_mc < 2:
            raise ValidationError("ensemble: need at least 2 realizations")
        if self.parameters.shape[0] != n_mc:
            raise ValidationError(
                f"ensemble: {n_mc} prediction rows but "
                f"{self.parameters.shape[0]} parameter rows"
            )
        if self.parameters.shape[1] != len(self.parameter_names):
            raise ValidationError(
                f"ensemble: {self.parameters.shape[1]} parameter columns but "
                f"{len(self.parameter_names)} names"
            )
        missing = [n for n in self.parameter_names if n not in self.parameter_bounds]
        if missing:
            raise ValidationError(f"ensemble: bounds missing for {missing}")
        bad = np.argwhere(~np.isfinite(self.predictions))
        if bad.size:
            i, t = bad[0]
            raise ValidationError(
                f"ensemble: non-finite prediction (realization {i + 1}, t{t + 1})"
            )
        bad = np.argwhere(~np.isfinite(self.parameters))
        if bad.size:
            i, p = bad[0]
            raise ValidationError(
                f"ensemble: non-finite parameter (realization {i + 1}, "
                f"{self.parameter_names[p]})"
            )
        for p, name in enumerate(self.parameter_names):
            lo, hi = self.parameter_bounds[name]
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValidationError(f"ensemble: invalid bounds for {name!r}: [{lo}, {hi}]")
            col = self.parameters[:, p]
            out = np.flatnonzero((col < lo) | (col > hi))
            if out.size:
                raise ValidationError(
                    f"ensemble: parameter {name!r} out of bounds "
                    f"(realization {out[0] + 1}, value {col[out[0]]!r})"
                )

    @property
    def n_mc(self) -> int:
        return self.predictions.shape[0]

    @property
    def n_obs(self) -> int:
        return self.predictions.shape[1]

    def without_realization(self, k: int) -> "PredictionEnsemble":
        """Copy of the ensemble with row ``k`` removed."""
        keep = np.arange(self.n_mc) != k
        return PredictionEnsemble(
            predictions=self.predictions[keep],
            parameters=self.parameters[keep],
            parameter_names=list(self.parameter_names),
            parameter_bounds=dict(self.parameter_bounds),
        )


@dataclass
class ForcingSeries:
    """Daily driving data: precipitation and potential evapotranspiration."""

    times: np.ndarray
    precip: np.ndarray
    pet: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.precip = np.asarray(self.precip, dtype=float)
        self.pet = np.asarray(self.pet, dtype=float)
        n = self.times.size
        if n < 1:
            raise ValidationError("forcing: empty series")
        if self.precip.shape != (n,) or self.pet.shape != (n,):
            raise ValidationError("forcing: times/precip/pet lengths differ")
        if not np.array_equal(self.times, np.arange(1, n + 1)):
            raise ValidationError("forcing: times must be the integer days 1..N")
        for name, col in (("precip", self.precip), ("pet", self.pet)):
            bad = np.flatnonzero(~(np.isfinite(col) & (col >= 0)))
            if bad.size:
                raise ValidationError(
                    f"forcing: {name} must be finite and >= 0 (t={self.times[bad[0]]})"
                )

    @property
    def n_days(self) -> int:
        return self.times.size


# ----------------------------------------------------------------------
# csv plumbing
# ----------------------------------------------------------------------

def _read_rows(path):
    """All csv rows plus any '#' comment lines, with 1-based line numbers."""
    comments, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.startswith("#"):
                comments.append(raw.rstrip("\n"))
                continue
            for parsed in csv.reader([raw]):
                rows.append((lineno, parsed))
    return comments, rows


def _cell_float(text, path, lineno, colname):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValidationError(
            f"{path}: line {lineno}, column {colname!r}: {text!r} is not a number"
        ) from None
    if not np.isfinite(v):
        raise ValidationError(
            f"{path}: line {lineno}, column {colname!r}: non-finite value {text!r}"
        )
    return v


def _cell_int(text, path, lineno, colname):
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ValidationError(
            f"{path}: line {lineno}, column {colname!r}: {text!r} is not an integer"
        ) from None


def _require_header(header, expected, path, lineno):
    if list(header) != list(expected):
        raise ValidationError(
            f"{path}: line {lineno}: expected header {','.join(expected)!r}, "
            f"got {','.join(header)!r}"
        )


# ----------------------------------------------------------------------
# observations / forcing
# ----------------------------------------------------------------------

def load_observations(path, sigma=None) -> ObservationSeries:
    """Read ``observations.csv``.

    ``sigma`` (scalar or length-N vector) is required when the file has no
    sigma column, and rejected when it does: the error scale must come from
    exactly one place.
    """
    path = Path(path)
    _, rows = _read_rows(path)
    if not rows:
        raise ValidationError(f"{path}: empty file")
    lineno, header = rows[0]
    if list(header) == ["t", "value", "sigma"]:
        has_sigma = True
    elif list(header) == ["t", "value"]:
        has_sigma = False
    else:
        raise ValidationError(
            f"{path}: line {lineno}: expected header 't,value,sigma' or 't,value', "
            f"got {','.join(header)!r}"
        )
    if has_sigma and sigma is not None:
        raise ValidationError(
            f"{path}: has a sigma column and a sigma was also passed explicitly; "
            "supply the error scale exactly once"
        )
    if not has_sigma and sigma is None:
        raise ValidationError(
            f"{path}: no sigma column; pass an explicit sigma (e.g. --sigma)"
        )
    times, values, sigmas = [], [], []
    for lineno, cells in rows[1:]:
        want = 3 if has_sigma else 2
        if len(cells) != want:
            raise ValidationError(
                f"{path}: line {lineno}: expected {want} fields, got {len(cells)}"
            )
        times.append(_cell_int(cells[0], path, lineno, "t"))
        values.append(_cell_float(cells[1], path, lineno, "value"))
        if has_sigma:
            sigmas.append(_cell_float(cells[2], path, lineno, "sigma"))
    sig = np.asarray(sigmas) if has_sigma else np.asarray(sigma, dtype=float)
    try:
        return ObservationSeries(np.asarray(times), np.asarray(values), sig)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def save_observations(obs: ObservationSeries, path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "value", "sigma"])
    for t, v, s in zip(obs.times, obs.values, obs.sigma):
        w.writerow([int(t), fmt_float(v), fmt_float(s)])
    return atomic_write_text(path, buf.getvalue())


def load_forcing(path) -> ForcingSeries:
    path = Path(path)
    _, rows = _read_rows(path)
    if not rows:
        raise ValidationError(f"{path}: empty file")
    lineno, header = rows[0]
    _require_header(header, ["t", "precip", "pet"], path, lineno)
    times, precip, pet = [], [], []
    for lineno, cells in rows[1:]:
        if len(cells) != 3:
            raise ValidationError(
                f"{path}: line {lineno}: expected 3 fields, got {len(cells)}"
            )
        times.append(_cell_int(cells[0], path, lineno, "t"))
        precip.append(_cell_float(cells[1], path, lineno, "precip"))
        pet.append(_cell_float(cells[2], path, lineno, "pet"))
    try:
        return ForcingSeries(np.asarray(times), np.asarray(precip), np.asarray(pet))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def save_forcing(forcing: ForcingSeries, path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "precip", "pet"])
    for t, p, e in zip(forcing.times, forcing.precip, forcing.pet):
        w.writerow([int(t), fmt_float(p), fmt_float(e)])
    return atomic_write_text(path, buf.getvalue())


# ----------------------------------------------------------------------
# ensemble
# ----------------------------------------------------------------------

PREDICTIONS_CSV = "ensemble_predictions.csv"
PARAMETERS_CSV = "ensemble_parameters.csv"
BOUNDS_JSON = "bounds.json"


def _resolve_ensemble_paths(path):
    path = Path(path)
    base = path if path.is_dir() else path.parent
    pred = path / PREDICTIONS_CSV if path.is_dir() else path
    return pred, base / PARAMETERS_CSV, base / BOUNDS_JSON


def load_ensemble(path) -> PredictionEnsemble:
    """Read the prediction/parameter/bounds triple.

    ``path`` may be the directory holding the three standard file names, or
    the predictions csv itself (siblings are found next to it).
    """
    pred_path, par_path, bounds_path = _resolve_ensemble_paths(path)

    _, rows = _read_rows(pred_path)
    if not rows:
        raise ValidationError(f"{pred_path}: empty file")
    lineno, header = rows[0]
    if not header or header[0] != "realization" or len(header) < 2:
        raise ValidationError(
            f"{pred_path}: line {lineno}: expected header 'realization,t1,...'"
        )
    n_obs = len(header) - 1
    expected = [f"t{i}" for i in range(1, n_obs + 1)]
    _require_header(header[1:], expected, pred_path, lineno)
    ids = []
    pred = np.empty((len(rows) - 1, n_obs), dtype=float)
    for r, (lineno, cells) in enumerate(rows[1:]):
        if len(cells) != n_obs + 1:
            raise ValidationError(
                f"{pred_path}: line {lineno}: expected {n_obs + 1} fields, "
                f"got {len(cells)}"
            )
        ids.append(_cell_int(cells[0], pred_path, lineno, "realization"))
        for c in range(n_obs):
            pred[r, c] = _cell_float(cells[c + 1], pred_path, lineno, f"t{c + 1}")

    _, rows = _read_rows(par_path)
    if not rows:
        raise ValidationError(f"{par_path}: empty file")
    lineno, header = rows[0]
    if not header or header[0] != "realization" or len(header) < 2:
        raise ValidationError(
            f"{par_path}: line {lineno}: expected header 'realization,<name>,...'"
        )
    names = list(header[1:])
    params = np.empty((len(rows) - 1, len(names)), dtype=float)
    par_ids = []
    for r, (lineno, cells) in enumerate(rows[1:]):
        if len(cells) != len(names) + 1:
            raise ValidationError(
                f"{par_path}: line {lineno}: expected {len(names) + 1} fields, "
                f"got {len(cells)}"
            )
        par_ids.append(_cell_int(cells[0], par_path, lineno, "realization"))
        for c, name in enumerate(names):
            params[r, c] = _cell_float(cells[c + 1], par_path, lineno, name)
    if par_ids != ids:
        raise ValidationError(
            f"{par_path}: realization ids do not match {pred_path.name}"
        )

    try:
        raw = load_json(bounds_path)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{bounds_path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{bounds_path}: expected an object of name -> [lo, hi]")
    bounds = {}
    for name, pair in raw.items():
        if (not isinstance(pair, (list, tuple))) or len(pair) != 2:
            raise ValidationError(f"{bounds_path}: bounds for {name!r} must be [lo, hi]")
        bounds[name] = (float(pair[0]), float(pair[1]))

    try:
        return PredictionEnsemble(pred, params, names, bounds)
    except ValidationError as exc:
        raise ValidationError(f"{pred_path.parent}: {exc}") from None


def save_ensemble(ensemble: PredictionEnsemble, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["realization"] + [f"t{i}" for i in range(1, ensemble.n_obs + 1)])
    for i, row in enumerate(ensemble.predictions, start=1):
        w.writerow([i] + [fmt_float(v) for v in row])
    paths = [atomic_write_text(out_dir / PREDICTIONS_CSV, buf.getvalue())]

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["realization"] + ensemble.parameter_names)
    for i, row in enumerate(ensemble.parameters, start=1):
        w.writerow([i] + [fmt_float(v) for v in row])
    paths.append(atomic_write_text(out_dir / PARAMETERS_CSV, buf.getvalue()))

    bounds = {k: [v[0], v[1]] for k, v in ensemble.parameter_bounds.items()}
    paths.append(save_json(bounds, out_dir / BOUNDS_JSON))
    return paths


def load_dataset(ensemble_path, observations_path, sigma=None):
    """Load an (ensemble, observations) pair and cross-check the horizon."""
    ensemble = load_ensemble(ensemble_path)
    obs = load_observations(observations_path, sigma=sigma)
    if ensemble.n_obs != obs.n_obs:
        raise ValidationError(
            f"horizon mismatch: ensemble has {ensemble.n_obs} steps, "
            f"observations have {obs.n_obs}"
        )
    return ensemble, obs


# ----------------------------------------------------------------------
# evidence curves
# ----------------------------------------------------------------------

def save_curve(curve: "TbmeCurve", path) -> Path:
    buf = io.StringIO()
    buf.write(f"# tau={curve.tau} n_mc_used={curve.n_mc_used}\n")
    w = csv.writer(buf)
    w.writerow(["t_end", "log_tbme", "ess"])
    for t, lb, e in zip(curve.window_ends, curve.log_tbme, curve.ess):
        w.writerow([int(t), fmt_float(lb), fmt_float(e)])
    return atomic_write_text(path, buf.getvalue())


def _comment_fields(comments, path):
    meta = {}
    for line in comments:
        for token in line.lstrip("#").split():
            if "=" in token:
                key, val = token.split("=", 1)
                meta[key] = val
    if not meta:
        raise ValidationError(f"{path}: missing '#' metadata comment line")
    return meta


def load_curve(path) -> "TbmeCurve":
    from .evidence import TbmeCurve

    path = Path(path)
    comments, rows = _read_rows(path)
    meta = _comment_fields(comments, path)
    for key in ("tau", "n_mc_used"):
        if key not in meta:
            raise ValidationError(f"{path}: metadata comment lacks {key}=")
    lineno, header = rows[0]
    _require_header(header, ["t_end", "log_tbme", "ess"], path, lineno)
    t_end, log_tbme, ess = [], [], []
    for lineno, cells in rows[1:]:
        if len(cells) != 3:
            raise ValidationError(
                f"{path}: line {lineno}: expected 3 fields, got {len(cells)}"
            )
        t_end.append(_cell_int(cells[0], path, lineno, "t_end"))
        log_tbme.append(_cell_float(cells[1], path, lineno, "log_tbme"))
        ess.append(_cell_float(cells[2], path, lineno, "ess"))
    return TbmeCurve(
        tau=int(meta["tau"]),
        window_ends=np.asarray(t_end, dtype=np.int64),
        log_tbme=np.asarray(log_tbme),
        ess=np.asarray(ess),
        n_mc_used=int(meta["n_mc_used"]),
    )


# ----------------------------------------------------------------------
# reference bands
# ----------------------------------------------------------------------

def save_bands(bands: "ReferenceBands", path) -> Path:
    from .reference import QUANTILE_FIELDS

    buf = io.StringIO()
    buf.write(
        f"# tau={bands.tau} seed={bands.seed} n_replicates={bands.n_replicates}"
        f" n_mc={bands.n_mc} min_ess_observed={fmt_float(bands.min_ess_observed)}"
        f" perturbed={int(bands.perturbed)}\n"
    )
    w = csv.writer(buf)
    w.writerow(["t_end"] + list(QUANTILE_FIELDS))
    for i, t in enumerate(bands.window_ends):
        w.writerow([int(t)] + [fmt_float(bands.quantiles[q][i]) for q in QUANTILE_FIELDS])
    return atomic_write_text(path, buf.getvalue())


def load_bands(path) -> "ReferenceBands":
    from .reference import QUANTILE_FIELDS, ReferenceBands

    path = Path(path)
    comments, rows = _read_rows(path)
    meta = _comment_fields(comments, path)
    for key in ("tau", "seed", "n_replicates", "min_ess_observed"):
        if key not in meta:
            raise ValidationError(f"{path}: metadata comment lacks {key}=")
    lineno, header = rows[0]
    _require_header(header, ["t_end"] + list(QUANTILE_FIELDS), path, lineno)
    t_end = []
    cols = {q: [] for q in QUANTILE_FIELDS}
    for lineno, cells in rows[1:]:
        if len(cells) != 1 + len(QUANTILE_FIELDS):
            raise ValidationError(
                f"{path}: line {lineno}: expected {1 + len(QUANTILE_FIELDS)} fields, "
                f"got {len(cells)}"
            )
        t_end.append(_cell_int(cells[0], path, lineno, "t_end"))
        for c, q in enumerate(QUANTILE_FIELDS):
            cols[q].append(_cell_float(cells[c + 1], path, lineno, q))
    return ReferenceBands(
        tau=int(meta["tau"]),
        window_ends=np.asarray(t_end, dtype=np.int64),
        quantiles={q: np.asarray(cols[q]) for q in QUANTILE_FIELDS},
        n_replicates=int(meta["n_replicates"]),
        seed=int(meta["seed"]),
        min_ess_observed=float(meta["min_ess_observed"]),
        n_mc=int(meta.get("n_mc", "0")),
        perturbed=bool(int(meta.get("perturbed", "0"))),
    )


# ----------------------------------------------------------------------
# detection reports
# ----------------------------------------------------------------------

def save_report(report: "DetectionReport", path) -> Path:
    payload = {
        "tau": report.tau,
        "alpha_quantile": report.alpha_quantile,
        "window_ends": [int(t) for t in report.window_ends],
        "verdicts": list(report.verdicts),
        "signals": [
            {
                "onset": s.onset,
                "offset": s.offset,
                "L_s": s.L_s,
                "L_e_estimate": s.L_e_estimate,
                "severity": s.severity,
                "states": list(s.states),
            }
            for s in report.signals
        ],
    }
    return save_json(payload, path)


def load_report(path) -> "DetectionReport":
    from .detection import DetectionReport, Signal, VERDICTS

    raw = load_json(path)
    try:
        verdicts = list(raw["verdicts"])
        bad = [v for v in verdicts if v not in VERDICTS]
        if bad:
            raise ValidationError(f"{path}: unknown verdict {bad[0]!r}")
        return DetectionReport(
            tau=int(raw["tau"]),
            alpha_quantile=str(raw["alpha_quantile"]),
            window_ends=np.asarray(raw["window_ends"], dtype=np.int64),
            verdicts=verdicts,
            signals=[
                Signal(
                    onset=int(s["onset"]),
                    offset=int(s["offset"]),
                    L_s=int(s["L_s"]),
                    L_e_estimate=int(s["L_e_estimate"]),
                    severity=str(s["severity"]),
                    states=list(s["states"]),
                )
                for s in raw["signals"]
            ],
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc}") from None


def save_outputs(curve, bands, report, out_dir) -> list[Path]:
    """Persist one tau's products under their canonical names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tau = curve.tau
    return [
        save_curve(curve, out_dir / f"tbme_tau{tau}.csv"),
        save_bands(bands, out_dir / f"reference_tau{tau}.csv"),
        save_report(report, out_dir / f"detection_tau{tau}.json"),
    ]


# ----------------------------------------------------------------------
# posterior snapshots / retention curve bands
# ----------------------------------------------------------------------

def save_posterior_csv(snapshot: "PosteriorSnapshot", path) -> Path:
    buf = io.StringIO()
    buf.write(
        f"# window_end={snapshot.window_end} tau={snapshot.tau}"
        f" ess={fmt_float(snapshot.ess)} map_index={snapshot.map_index}\n"
    )
    w = csv.writer(buf)
    w.writerow(["parameter", "kind", "x", "y"])
    for name, m in snapshot.marginals.items():
        if m.density is None:
            w.writerow([name, "point_mass", "", fmt_float(m.map_value)])
        else:
            for x, y in zip(m.grid, m.density):
                w.writerow([name, "density", fmt_float(x), fmt_float(y)])
        w.writerow([name, "q025", "", fmt_float(m.q025)])
        w.writerow([name, "q500", "", fmt_float(m.q500)])
        w.writerow([name, "q975", "", fmt_float(m.q975)])
        w.writerow([name, "map_value", "", fmt_float(m.map_value)])
    return atomic_write_text(path, buf.getvalue())


def load_posterior_csv(path) -> dict:
    """Plot-friendly reload: parameter -> {grid, density, summaries}."""
    path = Path(path)
    comments, rows = _read_rows(path)
    meta = _comment_fields(comments, path)
    lineno, header = rows[0]
    _require_header(header, ["parameter", "kind", "x", "y"], path, lineno)
    out: dict = {"window_end": int(meta["window_end"]), "tau": int(meta["tau"]),
                 "marginals": {}}
    for lineno, cells in rows[1:]:
        if len(cells) != 4:
            raise ValidationError(
                f"{path}: line {lineno}: expected 4 fields, got {len(cells)}"
            )
        name, kind, x, y = cells
        m = out["marginals"].setdefault(name, {"grid": [], "density": []})
        if kind == "density":
            m["grid"].append(_cell_float(x, path, lineno, "x"))
            m["density"].append(_cell_float(y, path, lineno, "y"))
        elif kind in ("q025", "q500", "q975", "map_value", "point_mass"):
            m[kind] = _cell_float(y, path, lineno, "y")
        else:
            raise ValidationError(f"{path}: line {lineno}: unknown kind {kind!r}")
    for m in out["marginals"].values():
        m["grid"] = np.asarray(m["grid"])
        m["density"] = np.asarray(m["density"])
    return out


def save_wrc_csv(wrc: "WrcBands", path) -> Path:
    buf = io.StringIO()
    buf.write(f"# window_end={wrc.window_end} tau={wrc.tau}\n")
    w = csv.writer(buf)
    cols = (["h"]
            + [f"theta_{q}" for q in wrc.levels]
            + [f"K_{q}" for q in wrc.levels]
            + ["theta_map", "K_map"])
    w.writerow(cols)
    for i, h in enumerate(wrc.h_grid):
        row = [fmt_float(h)]
        row += [fmt_float(wrc.theta[q][i]) for q in wrc.levels]
        row += [fmt_float(wrc.conductivity[q][i]) for q in wrc.levels]
        row += [fmt_float(wrc.theta_map[i]), fmt_float(wrc.conductivity_map[i])]
        w.writerow(row)
    return atomic_write_text(path, buf.getvalue())


def load_wrc_csv(path) -> dict:
    path = Path(path)
    comments, rows = _read_rows(path)
    meta = _comment_fields(comments, path)
    lineno, header = rows[0]
    if not header or header[0] != "h":
        raise ValidationError(f"{path}: line {lineno}: expected first column 'h'")
    data = {name: [] for name in header}
    for lineno, cells in rows[1:]:
        if len(cells) != len(header):
            raise ValidationError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}"
            )
        for name, cell in zip(header, cells):
            data[name].append(_cell_float(cell, path, lineno, name))
    return {
        "window_end": int(meta["window_end"]),
        "tau": int(meta["tau"]),
        "columns": {name: np.asarray(vals) for name, vals in data.items()},
    }


TAU_FILE_RE = re.compile(r"^(tbme|reference)_tau(\d+)\.csv$")
DETECTION_FILE_RE = re.compile(r"^detection_tau(\d+)\.json$")
