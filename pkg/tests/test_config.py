"""
Run configuration: validation, dotted overrides, persistence and the run context.
"""
import json

import click
import pandas as pd
import pytest

from app import parse_overrides
from app.services.run_context import RunContext
from app.services.tracks import make_stadium, save_track
from settings import CONFIG_ENV_VAR, load_run_config, resolve_config_path
from utils.config_manager import ConfigManager, parse_override_value
from utils.constants import SIM_GROUND_TRUTH
from utils.errors import (
    ConfigurationError,
    DataError,
    RaceAbortError,
    TrainingDivergenceError,
    ValidationError,
    error_message,
)
from utils.validation import RunConfig, validate_run_config


@pytest.fixture
def manager():
    return ConfigManager()


def test_defaults_are_valid():
    config = RunConfig()
    assert config.dynamics.rate_hz == 50.0
    assert config.train_seed == config.seed
    assert config.model_copy(update={"train": config.train.model_copy(update={"seed": 9})}).train_seed == 9


def test_save_load_round_trip(tmp_path, manager):
    config = manager.apply_overrides(RunConfig(), {"train.epochs": 7, "mpc.horizon": 12})
    path = manager.save(config, tmp_path / "nested" / "run.json")
    assert manager.load(path) == config
    assert json.loads(path.read_text(encoding="utf-8"))["train"]["epochs"] == 7


def test_override_values_parse_as_json():
    assert parse_override_value("5") == 5
    assert parse_override_value("[64, 64]") == [64, 64]
    assert parse_override_value("half-tanh") == "half-tanh"


def test_overrides_are_revalidated(manager):
    with pytest.raises(ValidationError) as exc:
        manager.apply_overrides(RunConfig(), {"train.batch_size": 0})
    assert exc.value.details["field"] == "train.batch_size"
    assert exc.value.exit_code == 2


def test_unknown_override_paths(manager):
    with pytest.raises(ValidationError) as exc:
        manager.apply_overrides(RunConfig(), {"train.nope": 1})
    assert exc.value.details["field"] == "train.nope"
    with pytest.raises(ValidationError) as exc:
        manager.apply_overrides(RunConfig(), {"optimizer.lr": 1})
    assert exc.value.details["field"] == "optimizer.lr"


def test_bounds_overrides_accept_new_keys(manager):
    config = manager.apply_overrides(RunConfig(), {"bounds.overrides.B_f": [4.0, 8.0]})
    assert config.bounds.overrides["B_f"] == (4.0, 8.0)
    with pytest.raises(ValidationError):
        manager.apply_overrides(RunConfig(), {"bounds.overrides.B_f": [8.0, 4.0]})


def test_ground_truth_must_be_complete():
    truth = dict(SIM_GROUND_TRUTH)
    del truth["I_z"]
    with pytest.raises(ValidationError) as exc:
        validate_run_config({"dynamics": {"ground_truth": truth}})
    assert exc.value.details["field"] == "dynamics.ground_truth"


def test_schema_version_is_checked():
    with pytest.raises(ValidationError) as exc:
        validate_run_config({"schema_version": 99})
    assert exc.value.details["field"] == "schema_version"


def test_unknown_top_level_key():
    with pytest.raises(ValidationError) as exc:
        validate_run_config({"trian": {}})
    assert exc.value.details["field"] == "trian"


def test_unreadable_files(tmp_path, manager):
    with pytest.raises(ConfigurationError):
        manager.load(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        manager.load(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[]", encoding="utf-8")
    with pytest.raises(ValidationError):
        manager.load(listing)


def test_config_path_resolution(tmp_path, monkeypatch):
    explicit = tmp_path / "a.json"
    assert resolve_config_path(explicit) == explicit
    monkeypatch.setenv(CONFIG_ENV_VAR, str(tmp_path / "b.json"))
    assert resolve_config_path() == tmp_path / "b.json"


def test_load_with_overrides(tmp_path, manager):
    path = manager.save(RunConfig(), tmp_path / "run.json")
    config = load_run_config(path, {"seed": 3})
    assert config.seed == 3


def test_cli_override_pairs():
    assert parse_overrides(["train.epochs=5", "bounds.activation=half-tanh"], seed=4) == {
        "train.epochs": 5, "bounds.activation": "half-tanh", "seed": 4}
    with pytest.raises(click.BadParameter):
        parse_overrides(["train.epochs"])


def test_run_context(tmp_path):
    paths = {"data_dir": str(tmp_path / "d"), "checkpoints_dir": str(tmp_path / "c"),
             "reports_dir": str(tmp_path / "r")}
    config = RunConfig.model_validate({"paths": paths})
    run = RunContext(config)
    assert run.model().ts == pytest.approx(0.02)
    assert run.model(25.0).ts == pytest.approx(0.04)
    assert run.train_csv == tmp_path / "d" / "train.csv"
    assert run.checkpoint_path("ddm") == tmp_path / "c" / "ddm.json"
    assert run.report_path("x.csv") == tmp_path / "r" / "x.csv"
    assert run.model_kind("dpm-plus20").fixed_iz == pytest.approx(1.2 * SIM_GROUND_TRUTH["I_z"])
    assert run.model_kind("ddm").fixed_iz is None
    assert run.bounds().interval("D_f") == (0.05, 1.0)

    real = RunContext(config.model_copy(update={"bounds": config.bounds.model_copy(update={"regime": "real"})}))
    assert real.bounds().interval("I_z") == (500.0, 2000.0)


def test_error_envelope_names_the_field():
    error = ValidationError("bad value", field="train.epochs")
    assert error.to_dict() == {"success": False, "error": {"message": "bad value", "code": "VALIDATION_ERROR",
                                                           "details": {"field": "train.epochs"}}}
    assert error_message(error) == "[VALIDATION_ERROR] bad value field=train.epochs"


def test_run_context_reads_track_files(tmp_path):
    path = save_track(make_stadium(straight=4.0), tmp_path / "stadium.json")
    raceline = tmp_path / "line.csv"
    corners = {"x": [0.0, 4.0, 6.0, 4.0, 0.0, -2.0], "y": [-2.0, -2.0, 0.0, 2.0, 2.0, 0.0]}
    pd.DataFrame(corners).to_csv(raceline, index=False)
    run = RunContext(RunConfig())
    assert run.track("track1").name == "track1"
    loaded = run.track("track1", track_path=str(path))
    assert loaded.name == "stadium"
    assert loaded.length == pytest.approx(make_stadium(straight=4.0).length)
    replaced = run.track("track1", str(raceline), str(path))
    assert replaced.name == "stadium"
    assert len(replaced.raceline) == 7
    with pytest.raises(DataError):
        run.track("track1", track_path=str(tmp_path / "missing.json"))


def test_error_classes_carry_their_exit_codes():
    assert ConfigurationError("bad file").exit_code == 2
    assert ValidationError("bad value").exit_code == 2
    assert DataError("missing", "runs/data/train.csv").exit_code == 3
    assert TrainingDivergenceError("nan loss", 3).exit_code == 4
    assert RaceAbortError("spin-out").exit_code == 5
