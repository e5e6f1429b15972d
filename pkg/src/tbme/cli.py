"""Command line interface.

Subcommands mirror the pipeline stages so any intermediate product can be
produced, inspected or recomputed on its own:

    synth       generate a synthetic validation case
    tbme        windowed evidence curve(s) for a dataset
    reference   leave-one-out sampling-distribution bands
    detect      verdicts, signals and phase labels from curve + bands
    posterior   parameter snapshots for chosen windows
    run         the whole chain plus a manifest, per window size
    validate    load inputs and report what they contain
    report      render a run directory to PNG figures

Exit codes: 0 success, 1 invalid input, 2 numerically degenerate likelihood
window, 3 filesystem error.  All numeric outputs are written with 17
significant digits, so a re-run with identical inputs and seeds reproduces
every artifact byte for byte; the manifest records input and output hashes
to make that checkable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (_resolve_ensemble_paths, atomic_write_text, load_bands,
                     load_curve, load_dataset, load_ensemble, load_json,
                     save_bands, save_curve, save_outputs, save_posterior_csv,
                     save_report, save_wrc_csv)
from .detection import run_detection
from .errors import DegenerateWindowError, ValidationError
from .evidence import tbme_curve
from .likelihood import gauss_log_terms
from .posterior import posterior_weights
from .reference import QUANTILE_FIELDS, check_convergence, sample_reference
from .soilfuncs import MVG_PARAMETER_NAMES, curve_bands

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Settings of a full pipeline run.

    Everything here can come from a JSON config file, from command line
    flags, or both; flags win.  ``sigma`` stays None when the observation
    file carries its own column.
    """

    ensemble: str
    observations: str
    out: str
    sigma: float | None = None
    taus: list[int] = field(default_factory=lambda: [5, 10, 20])
    replicates: int = 1000
    seed: int = 0
    alpha: str = "q025"
    min_ess: float | None = None
    excursion: bool = False
    perturb: bool = False
    posterior: bool = True
    wrc: bool = True
    grid_points: int = 256
    workers: int = 1

    def __post_init__(self):
        if not self.taus:
            raise ValidationError("need at least one window size")
        if any(t < 1 for t in self.taus):
            raise ValidationError(f"window sizes must be >= 1, got {self.taus}")
        if len(set(self.taus)) != len(self.taus):
            raise ValidationError(f"duplicate window sizes in {self.taus}")
        if self.replicates < 2:
            raise ValidationError("need at least 2 reference replicates")
        if self.alpha not in QUANTILE_FIELDS:
            raise ValidationError(
                f"alpha must be one of {QUANTILE_FIELDS}, got {self.alpha!r}"
            )
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.grid_points < 8:
            raise ValidationError("grid_points must be >= 8")


def _tau_job(args):
    """One window size end to end; module-level so worker processes can
    unpickle it."""
    ensemble, obs, tau, replicates, seed, alpha, min_ess, excursion, perturb = args
    table = gauss_log_terms(ensemble, obs)
    curve = tbme_curve(table, tau)
    bands = sample_reference(ensemble, obs.sigma, tau, replicates, seed,
                             perturb=perturb)
    report = run_detection(curve, bands, alpha_quantile=alpha,
                           excursion=excursion)
    return curve, bands, report, check_convergence(bands, min_ess)


def _snapshot_windows(report, curve) -> list[int]:
    """Five characteristic windows per signal: just before onset, onset,
    midpoint, offset, just after."""
    last = int(curve.window_ends[-1])
    tau = curve.tau
    picked = set()
    for s in report.signals:
        mid = (s.onset + s.offset) // 2
        for j in (max(s.onset - 1, tau), s.onset, mid, s.offset,
                  min(s.offset + 1, last)):
            picked.add(int(j))
    return sorted(picked)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_pipeline(config: RunConfig) -> dict:
    """Execute every stage for every window size and write a manifest.

    Returns the manifest dict; its file lands at ``<out>/manifest.json``.
    The manifest contains no timestamps, so two runs with identical inputs
    and configuration produce identical bytes everywhere.
    """
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ensemble, obs = load_dataset(config.ensemble, config.observations,
                                 sigma=config.sigma)

    jobs = [
        (ensemble, obs, tau, config.replicates, config.seed, config.alpha,
         config.min_ess, config.excursion, config.perturb)
        for tau in config.taus
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_tau_job, jobs))
    else:
        results = [_tau_job(j) for j in jobs]

    table = gauss_log_terms(ensemble, obs)
    wrc_possible = config.wrc and all(
        name in ensemble.parameter_names for name in MVG_PARAMETER_NAMES
    )
    written: list[Path] = []
    summary: dict[str, dict] = {}
    for curve, bands, report, conv in results:
        tau = curve.tau
        written += save_outputs(curve, bands, report, out_dir)
        if not conv.passed:
            log.warning(
                "tau=%d: reference ESS %.2f fell below floor %.1f",
                tau, conv.min_ess_observed, conv.floor,
            )
        summary[str(tau)] = {
            "signals": len(report.signals),
            "flagged_windows": sum(v != "inside" for v in report.verdicts),
            "convergence": {
                "passed": conv.passed,
                "floor": conv.floor,
                "min_ess_observed": conv.min_ess_observed,
            },
        }
        if config.posterior and report.signals:
            sub = out_dir / f"posterior_tau{tau}"
            sub.mkdir(exist_ok=True)
            for j in _snapshot_windows(report, curve):
                snap = posterior_weights(table, j, tau, ensemble=ensemble,
                                         grid_points=config.grid_points)
                written.append(
                    save_posterior_csv(snap, sub / f"posterior_w{j}.csv"))
                if wrc_possible:
                    written.append(
                        save_wrc_csv(curve_bands(snap, ensemble),
                                     sub / f"wrc_w{j}.csv"))

    pred, par, bounds = _resolve_ensemble_paths(config.ensemble)
    inputs = {
        p.name: {"path": str(p), "sha256": _sha256(p)}
        for p in (pred, par, bounds, Path(config.observations))
        if p.exists()
    }
    manifest = {
        "tool": {
            "name": "tbme",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "config": asdict(config),
        "inputs": inputs,
        "outputs": {
            str(p.relative_to(out_dir)): _sha256(p) for p in written
        },
        "summary": summary,
    }
    atomic_write_text(out_dir / "manifest.json",
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synthlab import CASE_IDS, SynthConfig, build_case, save_case

    overrides = {
        "n_mc": args.n_mc, "n_days": args.n_days,
        "seed": args.seed, "sigma": args.sigma,
    }
    config = SynthConfig(**{k: v for k, v in overrides.items() if v is not None})
    cases = CASE_IDS if args.case == "all" else (args.case,)
    for case_id in cases:
        bundle = build_case(case_id, config)
        paths = save_case(bundle, args.out)
        print(f"case_{case_id}: {len(paths)} files under "
              f"{Path(args.out) / ('case_' + case_id)}")
    return 0


def cmd_tbme(args) -> int:
    ensemble, obs = load_dataset(args.ensemble, args.observations,
                                 sigma=args.sigma)
    table = gauss_log_terms(ensemble, obs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for tau in args.taus:
        curve = tbme_curve(table, tau)
        path = save_curve(curve, out_dir / f"tbme_tau{tau}.csv")
        print(f"{path}: {curve.n_windows} windows, n_mc={curve.n_mc_used}")
    return 0


def cmd_reference(args) -> int:
    if args.observations is not None:
        ensemble, obs = load_dataset(args.ensemble, args.observations,
                                     sigma=args.sigma)
        sigma = obs.sigma
    elif args.sigma is not None:
        ensemble = load_ensemble(args.ensemble)
        sigma = args.sigma
    else:
        raise ValidationError(
            "the error scale must come from --observations or --sigma")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for tau in args.taus:
        bands = sample_reference(ensemble, sigma, tau, args.replicates,
                                 args.seed, perturb=args.perturb)
        conv = check_convergence(bands, args.min_ess)
        path = save_bands(bands, out_dir / f"reference_tau{tau}.csv")
        note = "" if conv.passed else (
            f"  WARNING: min ESS {conv.min_ess_observed:.2f} "
            f"below floor {conv.floor:.1f}")
        print(f"{path}: {args.replicates} replicates{note}")
    return 0


def cmd_detect(args) -> int:
    curve = load_curve(args.curve)
    bands = load_bands(args.reference)
    report = run_detection(curve, bands, alpha_quantile=args.alpha,
                           excursion=args.excursion)
    out = Path(args.out)
    path = out if out.suffix == ".json" else out / f"detection_tau{curve.tau}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_report(report, path)
    flagged = sum(v != "inside" for v in report.verdicts)
    print(f"{path}: {len(report.signals)} signal(s), "
          f"{flagged}/{len(report.verdicts)} windows flagged")
    for s in report.signals:
        print(f"  days {s.onset}..{s.offset}  L_s={s.L_s} "
              f"L_e~{s.L_e_estimate}  {s.severity}  states={','.join(s.states)}")
    return 0


def cmd_posterior(args) -> int:
    ensemble, obs = load_dataset(args.ensemble, args.observations,
                                 sigma=args.sigma)
    if args.wrc:
        missing = [n for n in MVG_PARAMETER_NAMES
                   if n not in ensemble.parameter_names]
        if missing:
            raise ValidationError(
                f"--wrc needs retention parameters, ensemble lacks {missing}")
    table = gauss_log_terms(ensemble, obs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for j in args.windows:
        snap = posterior_weights(table, j, args.tau, ensemble=ensemble,
                                 grid_points=args.grid_points)
        path = save_posterior_csv(snap, out_dir / f"posterior_w{j}.csv")
        print(f"{path}: ess={snap.ess:.1f} best member row {snap.map_index + 1}")
        if args.wrc:
            wpath = save_wrc_csv(curve_bands(snap, ensemble),
                                 out_dir / f"wrc_w{j}.csv")
            print(f"{wpath}")
    return 0


def cmd_run(args) -> int:
    merged: dict = {}
    if args.config is not None:
        raw = load_json(args.config)
        valid = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(raw) - valid)
        if unknown:
            raise ValidationError(f"{args.config}: unknown config keys {unknown}")
        merged.update(raw)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    missing = [k for k in ("ensemble", "observations", "out") if k not in merged]
    if missing:
        raise ValidationError(
            f"missing required settings {missing}: pass flags or a config file")
    config = RunConfig(**merged)
    manifest = run_pipeline(config)
    out_dir = Path(config.out)
    print(f"{out_dir / 'manifest.json'}")
    for tau in config.taus:
        s = manifest["summary"][str(tau)]
        conv = "ok" if s["convergence"]["passed"] else "LOW ESS"
        print(f"  tau={tau}: {s['signals']} signal(s), "
              f"{s['flagged_windows']} flagged windows, reference {conv}")
    return 0


def cmd_validate(args) -> int:
    if args.observations is not None:
        ensemble, obs = load_dataset(args.ensemble, args.observations,
                                     sigma=args.sigma)
        print(f"observations: {obs.n_obs} days, "
              f"sigma {obs.sigma.min():.4g}..{obs.sigma.max():.4g}")
    else:
        ensemble = load_ensemble(args.ensemble)
    print(f"ensemble: {ensemble.n_mc} realizations x {ensemble.n_obs} days, "
          f"{len(ensemble.parameter_names)} parameters "
          f"({', '.join(ensemble.parameter_names)})")
    return 0


def cmd_report(args) -> int:
    from .figures import render_run_dir

    written = render_run_dir(args.run, case_dir=args.case, out_dir=args.out)
    if not written:
        raise ValidationError(f"{args.run}: nothing renderable found")
    for p in written:
        print(p)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def _add_dataset_args(p, observations_required=True):
    p.add_argument("--ensemble", required=True,
                   help="ensemble directory or predictions csv")
    p.add_argument("--observations", required=observations_required,
                   help="observations csv")
    p.add_argument("--sigma", type=float, default=None,
                   help="observation error scale [m] when the csv has no sigma column")


def _add_tau_arg(p):
    p.add_argument("--tau", type=int, action="append", dest="taus",
                   required=True, metavar="TAU",
                   help="window size in days; repeat for several")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbme",
        description="time-windowed Bayesian model evidence diagnostics",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic validation case")
    p.add_argument("--case", default="all",
                   choices=("base", "structural", "forcing", "superimposed", "all"))
    p.add_argument("--out", required=True)
    p.add_argument("--n-mc", type=int, default=None, dest="n_mc")
    p.add_argument("--n-days", type=int, default=None, dest="n_days")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tbme", help="windowed evidence curve(s)")
    _add_dataset_args(p)
    _add_tau_arg(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tbme)

    p = sub.add_parser("reference", help="leave-one-out reference bands")
    _add_dataset_args(p, observations_required=False)
    _add_tau_arg(p)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", action="store_true",
                   help="add observation noise to each synthetic truth")
    p.add_argument("--min-ess", type=float, default=None, dest="min_ess")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("detect", help="verdicts, signals and phase labels")
    p.add_argument("--curve", required=True, help="tbme_tau<T>.csv")
    p.add_argument("--reference", required=True, help="reference_tau<T>.csv")
    p.add_argument("--alpha", default="q025", choices=QUANTILE_FIELDS)
    p.add_argument("--excursion", action="store_true",
                   help="widen signals to the enclosing below-q160 excursion")
    p.add_argument("--out", required=True,
                   help="output json path or directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("posterior", help="parameter snapshots for chosen windows")
    _add_dataset_args(p)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--window", type=int, action="append", dest="windows",
                   required=True, metavar="DAY",
                   help="window end day; repeat for several")
    p.add_argument("--grid-points", type=int, default=256, dest="grid_points")
    p.add_argument("--wrc", action="store_true",
                   help="also write retention/conductivity bands")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("run", help="full pipeline with manifest")
    p.add_argument("--config", default=None, help="JSON file of RunConfig fields")
    p.add_argument("--ensemble")
    p.add_argument("--observations")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--tau", type=int, action="append", dest="taus")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", default=None, choices=QUANTILE_FIELDS)
    p.add_argument("--min-ess", type=float, default=None, dest="min_ess")
    p.add_argument("--grid-points", type=int, default=None, dest="grid_points")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--excursion", action="store_const", const=True, default=None)
    p.add_argument("--perturb", action="store_const", const=True, default=None)
    p.add_argument("--no-posterior", action="store_const", const=False,
                   default=None, dest="posterior")
    p.add_argument("--no-wrc", action="store_const", const=False,
                   default=None, dest="wrc")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="load inputs and report their shape")
    _add_dataset_args(p, observations_required=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render a run directory to PNG figures")
    p.add_argument("--run", required=True, help="directory written by `tbme run`")
    p.add_argument("--case", default=None,
                   help="case directory for observation/forcing panels")
    p.add_argument("--out", default=None, help="figure directory (default <run>/figures)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DegenerateWindowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
