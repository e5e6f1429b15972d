"""Command line interface: staged stages vs the one-shot pipeline, exit
codes, config merging and byte-for-byte reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from tbme.cli import RunConfig, main, run_pipeline
from tbme.dataio import ValidationError, load_json

REPLICATES = "150"


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory) -> Path:
    """A small structural case generated through the real subcommand."""
    root = tmp_path_factory.mktemp("cases")
    rc = main(["synth", "--case", "structural", "--out", str(root),
               "--n-mc", "30", "--n-days", "60", "--seed", "11"])
    assert rc == 0
    return root / "case_structural"


def dataset_args(case_dir: Path) -> list[str]:
    return ["--ensemble", str(case_dir),
            "--observations", str(case_dir / "observations.csv")]


def read_tree(out_dir: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(out_dir)): p.read_bytes()
        for p in sorted(out_dir.rglob("*")) if p.is_file()
    }


def test_synth_writes_the_case_layout(tmp_path, capsys):
    rc = main(["synth", "--case", "base", "--out", str(tmp_path),
               "--n-mc", "12", "--n-days", "40", "--seed", "3"])
    assert rc == 0
    case = tmp_path / "case_base"
    for name in ("ensemble_predictions.csv", "ensemble_parameters.csv",
                 "bounds.json", "observations.csv", "forcing.csv",
                 "truth.json"):
        assert (case / name).exists(), name
    assert "case_base" in capsys.readouterr().out
    truth = load_json(case / "truth.json")
    assert truth["config"]["n_mc"] == 12


def test_validate_reports_shapes(case_dir, capsys):
    rc = main(["validate", *dataset_args(case_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "observations: 60 days" in out
    assert "ensemble: 29 realizations x 60 days" in out

    rc = main(["validate", "--ensemble", str(case_dir)])
    assert rc == 0
    assert "ensemble: 29 realizations" in capsys.readouterr().out


def test_staged_subcommands_match_the_pipeline(case_dir, tmp_path):
    staged = tmp_path / "staged"
    assert main(["tbme", *dataset_args(case_dir), "--tau", "5",
                 "--out", str(staged)]) == 0
    assert main(["reference", *dataset_args(case_dir), "--tau", "5",
                 "--replicates", REPLICATES, "--seed", "4",
                 "--out", str(staged)]) == 0
    assert main(["detect", "--curve", str(staged / "tbme_tau5.csv"),
                 "--reference", str(staged / "reference_tau5.csv"),
                 "--out", str(staged)]) == 0

    full = tmp_path / "full"
    assert main(["run", *dataset_args(case_dir), "--tau", "5",
                 "--replicates", REPLICATES, "--seed", "4",
                 "--no-posterior", "--no-wrc", "--out", str(full)]) == 0

    for name in ("tbme_tau5.csv", "reference_tau5.csv", "detection_tau5.json"):
        assert (staged / name).read_bytes() == (full / name).read_bytes(), name


def test_run_reproducible_and_worker_independent(case_dir, tmp_path, capsys):
    def run(out: Path, workers: str) -> dict:
        rc = main(["run", *dataset_args(case_dir), "--tau", "5", "--tau", "10",
                   "--replicates", REPLICATES, "--seed", "4",
                   "--workers", workers, "--out", str(out)])
        assert rc == 0
        return load_json(out / "manifest.json")

    serial = run(tmp_path / "serial", "1")
    first = read_tree(tmp_path / "serial")
    run(tmp_path / "serial", "1")
    pool = run(tmp_path / "pool", "2")

    # identical settings reproduce every byte, manifest included
    assert read_tree(tmp_path / "serial") == first

    # worker count may not leak into any product; only the manifest's
    # recorded config differs
    t_serial = read_tree(tmp_path / "serial")
    t_pool = read_tree(tmp_path / "pool")
    t_serial.pop("manifest.json")
    t_pool.pop("manifest.json")
    assert t_serial == t_pool
    assert serial["outputs"] == pool["outputs"]
    assert serial["config"]["workers"] == 1
    assert pool["config"]["workers"] == 2

    out = capsys.readouterr().out
    assert "tau=5:" in out and "tau=10:" in out

    # the structural defect actually produces posterior snapshots
    assert serial["summary"]["10"]["signals"] >= 1
    assert any(name.startswith("posterior_tau10/") for name in serial["outputs"])
    assert any(name.startswith("posterior_tau10/wrc_") for name in serial["outputs"])


def test_run_accepts_config_file_with_flag_overrides(case_dir, tmp_path):
    cfg = {
        "ensemble": str(case_dir),
        "observations": str(case_dir / "observations.csv"),
        "out": str(tmp_path / "from_config"),
        "taus": [5],
        "replicates": int(REPLICATES),
        "seed": 4,
        "posterior": False,
        "wrc": False,
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(cfg_path)]) == 0
    manifest = load_json(tmp_path / "from_config" / "manifest.json")
    assert manifest["config"]["taus"] == [5]

    # a flag beats the file
    assert main(["run", "--config", str(cfg_path),
                 "--out", str(tmp_path / "overridden")]) == 0
    assert (tmp_path / "overridden" / "manifest.json").exists()

    bad = dict(cfg, typo=1)
    cfg_path.write_text(json.dumps(bad))
    assert main(["run", "--config", str(cfg_path)]) == 1


def test_detect_honours_explicit_json_path(case_dir, tmp_path):
    staged = tmp_path / "staged"
    main(["tbme", *dataset_args(case_dir), "--tau", "5", "--out", str(staged)])
    main(["reference", *dataset_args(case_dir), "--tau", "5",
          "--replicates", REPLICATES, "--seed", "4", "--out", str(staged)])
    target = tmp_path / "custom" / "verdicts.json"
    rc = main(["detect", "--curve", str(staged / "tbme_tau5.csv"),
               "--reference", str(staged / "reference_tau5.csv"),
               "--out", str(target)])
    assert rc == 0
    assert target.exists()


def test_posterior_subcommand_writes_snapshots(case_dir, tmp_path, capsys):
    rc = main(["posterior", *dataset_args(case_dir), "--tau", "10",
               "--window", "40", "--window", "55", "--wrc",
               "--out", str(tmp_path)])
    assert rc == 0
    for name in ("posterior_w40.csv", "posterior_w55.csv",
                 "wrc_w40.csv", "wrc_w55.csv"):
        assert (tmp_path / name).exists(), name
    assert "ess=" in capsys.readouterr().out


def test_reference_needs_an_error_scale(case_dir, tmp_path, capsys):
    rc = main(["reference", "--ensemble", str(case_dir), "--tau", "5",
               "--out", str(tmp_path)])
    assert rc == 1
    assert "error scale" in capsys.readouterr().err

    rc = main(["reference", "--ensemble", str(case_dir), "--tau", "3",
               "--sigma", "0.005", "--replicates", "50", "--seed", "1",
               "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "reference_tau3.csv").exists()


def test_exit_code_1_on_invalid_input(capsys):
    rc = main(["run", "--tau", "5"])
    assert rc == 1
    assert "missing required settings" in capsys.readouterr().err


def test_exit_code_1_on_unusable_observations(case_dir, tmp_path, capsys):
    # absurd observations overflow the squared residual; the table builder
    # refuses them up front rather than leaving -inf for the evidence stage
    obs = np.loadtxt(case_dir / "observations.csv", delimiter=",", skiprows=1)
    path = tmp_path / "absurd.csv"
    lines = ["t,value,sigma"]
    lines += [f"{int(t)},1e200,{float(sigma)!r}" for t, _, sigma in obs]
    path.write_text("\n".join(lines) + "\n")
    rc = main(["tbme", "--ensemble", str(case_dir),
               "--observations", str(path), "--tau", "5",
               "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "non-finite log-likelihood" in capsys.readouterr().err


def test_exit_code_2_on_degenerate_window(case_dir, tmp_path, capsys,
                                          monkeypatch):
    from tbme import cli
    from tbme.errors import DegenerateWindowError

    def explode(table, tau):
        raise DegenerateWindowError("all member likelihoods vanish")

    monkeypatch.setattr(cli, "tbme_curve", explode)
    rc = main(["tbme", *dataset_args(case_dir), "--tau", "5",
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "vanish" in capsys.readouterr().err


def test_exit_code_3_on_filesystem_error(case_dir, tmp_path, capsys):
    rc = main(["detect", "--curve", str(tmp_path / "missing.csv"),
               "--reference", str(tmp_path / "missing_too.csv"),
               "--out", str(tmp_path)])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_run_config_validation():
    with pytest.raises(ValidationError, match="window size"):
        RunConfig(ensemble="e", observations="o", out="x", taus=[])
    with pytest.raises(ValidationError, match="duplicate"):
        RunConfig(ensemble="e", observations="o", out="x", taus=[5, 5])
    with pytest.raises(ValidationError, match="alpha"):
        RunConfig(ensemble="e", observations="o", out="x", alpha="q999")
    with pytest.raises(ValidationError, match="workers"):
        RunConfig(ensemble="e", observations="o", out="x", workers=0)
    with pytest.raises(ValidationError, match="replicates"):
        RunConfig(ensemble="e", observations="o", out="x", replicates=1)


def test_run_pipeline_callable_directly(case_dir, tmp_path):
    config = RunConfig(
        ensemble=str(case_dir),
        observations=str(case_dir / "observations.csv"),
        out=str(tmp_path / "api"),
        taus=[5],
        replicates=int(REPLICATES),
        seed=4,
        min_ess=0.5,  # a 29-member ensemble cannot meet the default floor
        posterior=False,
        wrc=False,
    )
    manifest = run_pipeline(config)
    assert set(manifest) == {"tool", "config", "inputs", "outputs", "summary"}
    assert manifest["summary"]["5"]["convergence"]["passed"] is True
    assert manifest["summary"]["5"]["convergence"]["floor"] == 0.5
    for rel, digest in manifest["outputs"].items():
        assert (tmp_path / "api" / rel).exists(), rel
        assert len(digest) == 64
