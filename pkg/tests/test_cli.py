"""
End-to-end command-line runs against a temporary workspace.
"""
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from app import create_app
from app.services.network import CoefficientNetwork

SMALL_RUN = [
    "--set", "paths.data_dir=data",
    "--set", "paths.checkpoints_dir=checkpoints",
    "--set", "paths.reports_dir=reports",
    "--set", "datagen.laps=1",
    "--set", "train.epochs=1",
    "--set", "train.batch_size=16",
    "--set", "train.tau=1",
    "--set", "train.hidden_sizes=[6]",
    "--set", "mpc.horizon=5",
    "--set", "mpc.iterations=3",
    "--set", "race.max_lap_time_s=0.2",
]


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DEEPDYN_CONFIG", raising=False)
    result = CliRunner().invoke(create_app(), [*SMALL_RUN, "init-config", "run.json"])
    assert result.exit_code == 0, result.output
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(create_app(), ["--config", "run.json", *args])


def payload(result):
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data["success"] is True
    return data


def test_help_lists_commands():
    result = CliRunner().invoke(create_app(), ["--help"])
    assert result.exit_code == 0
    for command in ("init-config", "generate", "train", "tune", "eval", "race"):
        assert command in result.output


def test_init_config_writes_overrides(workspace):
    saved = json.loads((workspace / "run.json").read_text(encoding="utf-8"))
    assert saved["train"]["hidden_sizes"] == [6]
    assert saved["paths"]["data_dir"] == "data"
    again = CliRunner().invoke(create_app(), ["init-config", "run.json"])
    assert again.exit_code == 2
    forced = CliRunner().invoke(create_app(), ["--set", "seed=4", "init-config", "run.json", "--force"])
    assert payload(forced)["config"] == "run.json"
    assert json.loads((workspace / "run.json").read_text(encoding="utf-8"))["seed"] == 4


def test_invalid_overrides_exit_with_config_code(workspace):
    assert invoke("--set", "train.epochs=-1", "export-ground-truth").exit_code == 2
    assert invoke("--set", "train.nope=1", "export-ground-truth").exit_code == 2
    assert invoke("--set", "train.epochs", "export-ground-truth").exit_code == 2
    assert not (workspace / "checkpoints").exists()


def test_tracks_listing_and_export(workspace):
    data = payload(invoke("tracks", "--export", "tracks"))
    assert set(data["tracks"]) == {"track1", "track2"}
    assert all(info["length"] > 0 and info["half_width"] > 0 for info in data["tracks"].values())
    assert (workspace / "tracks" / "track1.json").exists()


def test_track_files_replace_builtin_tracks(workspace):
    payload(invoke("tracks", "--export", "tracks"))
    generated = payload(invoke("--set", "datagen.train_track_path=tracks/track2.json", "generate", "--samples", "120"))
    assert generated["train"]["track"] == "track2"
    assert generated["test"]["track"] == "track2"

    payload(invoke("export-ground-truth"))
    raced = invoke("--set", "race.track_path=tracks/track1.json", "race", "--checkpoint",
                   "checkpoints/ground-truth.json")
    assert raced.exit_code == 5
    summary = json.loads((workspace / "reports" / "race_ground-truth_summary.json").read_text(encoding="utf-8"))
    assert summary["track"] == "track1"
    assert invoke("--set", "race.track_path=tracks/missing.json", "race").exit_code == 3


def test_missing_data_exits_with_data_code(workspace):
    assert payload(invoke("export-ground-truth"))["checkpoint"].endswith("ground-truth.json")
    result = invoke("eval", "--checkpoint", "checkpoints/ground-truth.json", "--data", "missing.csv")
    assert result.exit_code == 3


def test_generate_train_eval_race(workspace):
    generated = payload(invoke("generate", "--samples", "120"))
    assert generated["train"]["rows"] == 120 and generated["test"]["rows"] == 120
    assert generated["train"]["track"] == "track1" and generated["test"]["track"] == "track2"
    assert len(pd.read_csv(workspace / "data" / "train.csv")) == 120

    trained = payload(invoke("train", "--model", "ddm"))
    assert trained["best_epoch"] in (0, 1)
    assert (workspace / "checkpoints" / "ddm.json").exists()
    report = json.loads((workspace / "checkpoints" / "ddm.report.json").read_text(encoding="utf-8"))
    assert len(report["val_loss"]) == 2

    payload(invoke("export-ground-truth"))
    evaluated = payload(invoke("eval", "--checkpoint", "checkpoints/ddm.json",
                               "--checkpoint", "checkpoints/ground-truth.json"))
    assert evaluated["horizon_ms"] == 300.0
    assert set(evaluated["models"]) == {"ddm", "ground-truth"}
    assert evaluated["models"]["ground-truth"]["ade"] < 1e-9
    comparison = pd.read_csv(workspace / "reports" / "eval_comparison.csv", index_col=0)
    assert list(comparison.index) == ["ddm", "ground-truth"]
    assert (workspace / "reports" / "eval_ddm_coefficients.json").exists()

    raced = invoke("race", "--checkpoint", "checkpoints/ground-truth.json")
    assert raced.exit_code == 5
    summary = json.loads((workspace / "reports" / "race_ground-truth_summary.json").read_text(encoding="utf-8"))
    assert summary["abort_reason"] == "TIMEOUT"
    assert summary["steps"] == int(np.ceil(0.2 / (1.0 / 50.0)))
    assert len(pd.read_csv(workspace / "reports" / "race_ground-truth_trace.csv")) == summary["steps"]
    assert (workspace / "reports" / "race_comparison.csv").exists()


def test_divergence_exit_code(workspace, monkeypatch):
    payload(invoke("generate", "--samples", "120"))
    monkeypatch.setattr(CoefficientNetwork, "backward",
                        lambda self, windows, model, params=None, **kwargs: (float("nan"), {}))
    result = invoke("train", "--model", "ddm")
    assert result.exit_code == 4
    assert (workspace / "checkpoints" / "ddm.diverged.json").exists()
    report = json.loads((workspace / "checkpoints" / "ddm.report.json").read_text(encoding="utf-8"))
    assert report["diverged"] is True
    assert not (workspace / "checkpoints" / "ddm.json").exists()


ARTIFACTS = [
    "data/train.csv",
    "data/test.csv",
    "checkpoints/ddm.json",
    "checkpoints/ddm.report.json",
    "reports/eval_ddm_open_loop.json",
    "reports/eval_ddm_coefficients.json",
    "reports/eval_comparison.csv",
    "reports/race_ddm_trace.csv",
    "reports/race_ddm_summary.json",
]


def _run_pipeline(directory, monkeypatch):
    directory.mkdir()
    monkeypatch.chdir(directory)
    assert CliRunner().invoke(create_app(), [*SMALL_RUN, "init-config", "run.json"]).exit_code == 0
    payload(invoke("generate", "--samples", "120"))
    payload(invoke("train", "--model", "ddm"))
    payload(invoke("eval", "--checkpoint", "checkpoints/ddm.json"))
    assert invoke("race", "--checkpoint", "checkpoints/ddm.json").exit_code == 5
    return {name: (directory / name).read_bytes() for name in ARTIFACTS}


def test_same_config_and_seed_give_identical_artifacts(tmp_path, monkeypatch):
    monkeypatch.delenv("DEEPDYN_CONFIG", raising=False)
    first = _run_pipeline(tmp_path / "a", monkeypatch)
    second = _run_pipeline(tmp_path / "b", monkeypatch)
    for name in ARTIFACTS:
        assert first[name] == second[name], name
