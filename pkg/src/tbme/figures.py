"""Figure rendering for run directories.

Presentation only: the detection pipeline never imports this module, and
every figure is rebuilt from the delimited files the pipeline writes, so a
rendered report stays reproducible from disk alone.  The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataio import (TAU_FILE_RE, load_bands, load_curve, load_forcing,
                     load_observations, load_posterior_csv, load_report,
                     load_wrc_csv)

POSTERIOR_FILE_RE = re.compile(r"^posterior_w(\d+)\.csv$")
WRC_FILE_RE = re.compile(r"^wrc_w(\d+)\.csv$")

VERDICT_COLORS = {"below_quantile": "tab:orange", "below_minimum": "tab:red"}
SEVERITY_SPAN_COLORS = {"below_quantile": "orange", "below_minimum": "red"}


def _band_fill(ax, bands):
    x = bands.window_ends
    q = bands.quantiles
    ax.fill_between(x, q["min"], q["max"], color="0.55", alpha=0.15,
                    linewidth=0, label="reference min..max")
    ax.fill_between(x, q["q025"], q["q975"], color="0.45", alpha=0.3,
                    linewidth=0, label="reference 95%")
    ax.fill_between(x, q["q160"], q["q840"], color="0.35", alpha=0.4,
                    linewidth=0, label="reference 68%")
    ax.plot(x, q["q500"], color="0.2", linestyle="--", linewidth=0.8,
            label="reference median")


def render_curve_figure(curve, bands=None, report=None, observations=None,
                        forcing=None, path=None, title=None):
    """Evidence curve over its reference band, with flagged windows marked.

    Optional observation and forcing panels share the time axis so a signal
    can be read against the data that produced it.
    """
    n_panels = 1 + (observations is not None) + (forcing is not None)
    heights = [3.0] + [1.2] * (n_panels - 1)
    fig, axes = plt.subplots(
        n_panels, 1, sharex=True, figsize=(9.0, 2.0 + sum(heights)),
        gridspec_kw={"height_ratios": heights}, squeeze=False,
    )
    axes = axes[:, 0]
    ax = axes[0]

    if bands is not None:
        _band_fill(ax, bands)
    ax.plot(curve.window_ends, curve.log_tbme, color="black", linewidth=1.2,
            label="log tBME")
    if report is not None:
        for sig in report.signals:
            ax.axvspan(sig.onset, sig.offset, alpha=0.12,
                       color=SEVERITY_SPAN_COLORS.get(sig.severity, "red"),
                       linewidth=0)
            if sig.states:
                ax.annotate("-".join(sig.states),
                            xy=(0.5 * (sig.onset + sig.offset), 0.98),
                            xycoords=("data", "axes fraction"),
                            ha="center", va="top", fontsize=7, color="0.25")
        verdicts = np.asarray(report.verdicts)
        for verdict, color in VERDICT_COLORS.items():
            hit = verdicts == verdict
            if hit.any():
                ax.plot(curve.window_ends[hit], curve.log_tbme[hit], "o",
                        markersize=3.5, color=color, linestyle="none",
                        label=verdict.replace("_", " "))
    ax.set_ylabel("log evidence")
    ax.legend(loc="lower left", fontsize=7, ncol=2, framealpha=0.8)
    ax.set_title(title or f"window size {curve.tau}")

    k = 1
    if observations is not None:
        axo = axes[k]
        k += 1
        axo.plot(observations.times, observations.values, color="tab:blue",
                 linewidth=0.9)
        axo.set_ylabel("head [m]")
    if forcing is not None:
        axf = axes[k]
        axf.bar(forcing.times, forcing.precip, width=1.0, color="tab:cyan",
                label="precip")
        axf.plot(forcing.times, forcing.pet, color="tab:brown", linewidth=0.9,
                 label="pet")
        axf.set_ylabel("cm/day")
        axf.legend(loc="upper right", fontsize=7)
    axes[-1].set_xlabel("day (window end)")

    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def posterior_plot_data(snapshot) -> dict:
    """Shape an in-memory snapshot like ``load_posterior_csv`` output."""
    marginals = {}
    for name, m in snapshot.marginals.items():
        if m.density is None:
            marginals[name] = {"grid": np.array([]), "density": np.array([]),
                               "point_mass": m.map_value}
        else:
            marginals[name] = {"grid": m.grid, "density": m.density,
                               "q025": m.q025, "q500": m.q500, "q975": m.q975,
                               "map_value": m.map_value}
    return {"window_end": snapshot.window_end, "tau": snapshot.tau,
            "marginals": marginals}


def render_posterior_figure(post: dict, path, title=None):
    """Marginal densities of one posterior snapshot, one panel per parameter."""
    marginals = post["marginals"]
    n = max(len(marginals), 1)
    ncols = min(n, 4)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.4 * nrows),
                             squeeze=False)
    for ax in axes.flat[n:]:
        ax.set_visible(False)
    for ax, (name, m) in zip(axes.flat, marginals.items()):
        if "point_mass" in m or m["grid"].size == 0:
            x = m.get("point_mass", m.get("map_value"))
            ax.axvline(x, color="tab:red", linewidth=1.5)
            ax.set_yticks([])
        else:
            ax.fill_between(m["grid"], m["density"], color="tab:blue", alpha=0.35,
                            linewidth=0)
            ax.plot(m["grid"], m["density"], color="tab:blue", linewidth=1.0)
            for key, style in (("q025", ":"), ("q500", "--"), ("q975", ":")):
                if key in m:
                    ax.axvline(m[key], color="0.3", linestyle=style, linewidth=0.8)
            if "map_value" in m:
                ax.axvline(m["map_value"], color="tab:red", linewidth=1.0)
        ax.set_title(name, fontsize=9)
    fig.suptitle(title or
                 f"posterior at day {post['window_end']} (window size {post['tau']})",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def wrc_plot_data(wrc) -> dict:
    """Shape an in-memory ``WrcBands`` like ``load_wrc_csv`` output."""
    columns = {"h": wrc.h_grid}
    for lab in wrc.levels:
        columns[f"theta_{lab}"] = wrc.theta[lab]
        columns[f"K_{lab}"] = wrc.conductivity[lab]
    columns["theta_map"] = wrc.theta_map
    columns["K_map"] = wrc.conductivity_map
    return {"window_end": wrc.window_end, "tau": wrc.tau, "columns": columns}


def render_wrc_figure(wrc: dict, path, title=None):
    """Retention and conductivity bands against suction on a log axis."""
    cols = wrc["columns"]
    suction = -np.asarray(cols["h"])
    theta_keys = sorted(k for k in cols if k.startswith("theta_q"))
    k_keys = sorted(k for k in cols if k.startswith("K_q"))

    fig, (ax_t, ax_k) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    if len(theta_keys) >= 2:
        ax_t.fill_between(suction, cols[theta_keys[0]], cols[theta_keys[-1]],
                          color="tab:blue", alpha=0.25, linewidth=0)
        ax_k.fill_between(suction, cols[k_keys[0]], cols[k_keys[-1]],
                          color="tab:green", alpha=0.25, linewidth=0)
    mid_t = next((k for k in theta_keys if k.endswith("q500")), None)
    mid_k = next((k for k in k_keys if k.endswith("q500")), None)
    if mid_t:
        ax_t.plot(suction, cols[mid_t], color="tab:blue", linewidth=1.0,
                  linestyle="--", label="median")
        ax_k.plot(suction, cols[mid_k], color="tab:green", linewidth=1.0,
                  linestyle="--", label="median")
    ax_t.plot(suction, cols["theta_map"], color="black", linewidth=1.2, label="MAP")
    ax_k.plot(suction, cols["K_map"], color="black", linewidth=1.2, label="MAP")
    ax_t.set_xscale("log")
    ax_k.set_xscale("log")
    ax_k.set_yscale("log")
    ax_t.set_xlabel("suction -h [m]")
    ax_k.set_xlabel("suction -h [m]")
    ax_t.set_ylabel("water content [-]")
    ax_k.set_ylabel("conductivity")
    ax_t.legend(fontsize=7)
    fig.suptitle(title or
                 f"soil curves at day {wrc['window_end']} (window size {wrc['tau']})",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def render_run_dir(run_dir, case_dir=None, out_dir=None) -> list[Path]:
    """Render every renderable artifact of a run directory to PNG.

    Picks up per-window-size curve/band/detection triples plus any posterior
    and curve-band snapshots (both flat and under ``posterior_tau*``
    subdirectories).  ``case_dir`` adds observation and forcing panels when
    the case files are present.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)

    observations = forcing = None
    if case_dir is not None:
        case_dir = Path(case_dir)
        obs_path = case_dir / "observations.csv"
        forcing_path = case_dir / "forcing.csv"
        if obs_path.exists():
            observations = load_observations(obs_path)
        if forcing_path.exists():
            forcing = load_forcing(forcing_path)

    written = []
    taus = sorted(
        int(m.group(2))
        for p in run_dir.iterdir()
        if (m := TAU_FILE_RE.match(p.name)) and m.group(1) == "tbme"
    )
    for tau in taus:
        curve = load_curve(run_dir / f"tbme_tau{tau}.csv")
        ref = run_dir / f"reference_tau{tau}.csv"
        det = run_dir / f"detection_tau{tau}.json"
        bands = load_bands(ref) if ref.exists() else None
        report = load_report(det) if det.exists() else None
        written.append(render_curve_figure(
            curve, bands=bands, report=report, observations=observations,
            forcing=forcing, path=out_dir / f"tbme_tau{tau}.png",
        ))

    snapshot_dirs = [run_dir] + sorted(
        p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("posterior_tau")
    )
    for d in snapshot_dirs:
        prefix = "" if d == run_dir else f"{d.name}_"
        for p in sorted(d.iterdir()):
            if POSTERIOR_FILE_RE.match(p.name):
                written.append(render_posterior_figure(
                    load_posterior_csv(p),
                    out_dir / f"{prefix}{p.stem}.png",
                ))
            elif WRC_FILE_RE.match(p.name):
                written.append(render_wrc_figure(
                    load_wrc_csv(p),
                    out_dir / f"{prefix}{p.stem}.png",
                ))
    return written
