"""Figure rendering: every artifact of a run directory becomes a PNG.

Smoke-level on purpose; correctness of the numbers lives with the pipeline
tests, here we only guarantee that rendering works headless from disk.
"""

import numpy as np
import pytest

from tbme.cli import RunConfig, run_pipeline
from tbme.figures import (
    posterior_plot_data,
    render_curve_figure,
    render_posterior_figure,
    render_run_dir,
    render_wrc_figure,
    wrc_plot_data,
)
from tbme.likelihood import gauss_log_terms
from tbme.posterior import posterior_weights
from tbme.soilfuncs import curve_bands
from tbme.synthlab import SynthConfig, build_case, save_case

PNG_MAGIC = b"\x89PNG"


@pytest.fixture(scope="module")
def run_and_case(tmp_path_factory):
    root = tmp_path_factory.mktemp("render")
    bundle = build_case("structural", SynthConfig(n_days=60, n_mc=24, seed=11))
    save_case(bundle, root)
    case_dir = root / "case_structural"
    run_dir = root / "run"
    run_pipeline(RunConfig(
        ensemble=str(case_dir),
        observations=str(case_dir / "observations.csv"),
        out=str(run_dir),
        taus=[5],
        replicates=60,
        seed=4,
        min_ess=0.5,
    ))
    return run_dir, case_dir


def assert_png(path):
    assert path.exists(), path
    assert path.read_bytes()[:4] == PNG_MAGIC, path


def test_render_run_dir_covers_every_artifact(run_and_case, tmp_path):
    run_dir, case_dir = run_and_case
    written = render_run_dir(run_dir, case_dir=case_dir, out_dir=tmp_path)
    assert written
    for path in written:
        assert_png(path)

    names = {p.name for p in written}
    assert "tbme_tau5.png" in names
    # the structural case produces signals, hence snapshot figures
    assert any(n.startswith("posterior_tau5_posterior_w") for n in names)
    assert any(n.startswith("posterior_tau5_wrc_w") for n in names)


def test_render_run_dir_defaults_to_figures_subdir(run_and_case):
    run_dir, _ = run_and_case
    written = render_run_dir(run_dir)
    assert written
    assert all(p.parent == run_dir / "figures" for p in written)


def test_render_curve_figure_minimal(run_and_case, tmp_path):
    from tbme.dataio import load_curve

    run_dir, _ = run_and_case
    curve = load_curve(run_dir / "tbme_tau5.csv")
    out = render_curve_figure(curve, path=tmp_path / "bare.png")
    assert_png(out)


def test_render_posterior_figure_from_memory(run_and_case, tmp_path):
    from tbme.dataio import load_ensemble, load_observations

    _, case_dir = run_and_case
    ensemble = load_ensemble(case_dir)
    obs = load_observations(case_dir / "observations.csv")
    table = gauss_log_terms(ensemble, obs)
    snap = posterior_weights(table, 30, 10, ensemble=ensemble, grid_points=64)

    out = render_posterior_figure(posterior_plot_data(snap),
                                  tmp_path / "posterior.png")
    assert_png(out)

    wrc = wrc_plot_data(curve_bands(snap, ensemble))
    out = render_wrc_figure(wrc, tmp_path / "wrc.png")
    assert_png(out)


def test_render_posterior_point_mass_panel(tmp_path):
    post = {
        "window_end": 7,
        "tau": 3,
        "marginals": {
            "a": {"grid": np.array([]), "density": np.array([]),
                  "point_mass": 0.25},
        },
    }
    assert_png(render_posterior_figure(post, tmp_path / "point.png"))
