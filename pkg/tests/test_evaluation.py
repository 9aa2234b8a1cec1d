"""
Open-loop metrics against scalar loop oracles, coefficient reports and tables.
"""
import json

import numpy as np
import pandas as pd
import pytest

from app.models import ControlInput, ModelVariant, PoseState, VelocityState
from app.services.dynamics import SingleTrackModel, step_pose, step_velocity
from app.services.estimators import GroundTruthEstimator, NetworkEstimator
from app.services.evaluation import (
    NA,
    coefficient_report,
    coefficient_table,
    comparison_table,
    default_horizon_ms,
    horizon_errors,
    horizon_rollout_metrics,
    horizon_steps,
    one_step_metrics,
    open_loop_report,
    race_table,
)
from app.services.race import RaceReport
from app.services.telemetry import Dataset
from conftest import make_network
from utils.constants import PACEJKA_NAMES
from utils.errors import DataError, ValidationError, WindowingError

HORIZON_S = 0.3


@pytest.fixture(scope="module")
def biased(ground_truth):
    """A fixed, wrong coefficient set standing in for a trained model."""
    estimator = GroundTruthEstimator(ground_truth.replace(D_f=ground_truth.D_f * 1.1, C_m1=ground_truth.C_m1 * 0.9))
    estimator.name = "biased"
    return estimator


def _two_sessions(dataset: Dataset) -> Dataset:
    frame = dataset.frame.iloc[:200].copy()
    frame.loc[100:, "session"] = 1
    return Dataset(frame.reset_index(drop=True), dataset.rate_hz)


def test_ground_truth_is_exact(sim_dataset, model, ground_truth):
    estimator = GroundTruthEstimator(ground_truth)
    metrics = one_step_metrics(estimator, sim_dataset, model)
    assert all(m["rmse"] < 1e-10 and m["eps_max"] < 1e-10 for m in metrics.values())
    ade, fde = horizon_rollout_metrics(estimator, sim_dataset, HORIZON_S, model)
    assert ade < 1e-9 and fde < 1e-9


def test_one_step_metrics_match_loop(sim_dataset, model, known, biased):
    coeffs = biased.coefficients
    errors = []
    for r in range(len(sim_dataset) - 1):
        nxt = step_velocity(VelocityState.from_array(sim_dataset.states[r]),
                            ControlInput.from_array(sim_dataset.controls[r]), known, coeffs, model.ts)
        errors.append(nxt.as_array()[:3] - sim_dataset.states[r + 1, :3])
    errors = np.array(errors)
    metrics = one_step_metrics(biased, sim_dataset, model)
    for i, channel in enumerate(("vx", "vy", "omega")):
        assert metrics[channel]["rmse"] == pytest.approx(np.sqrt(np.mean(errors[:, i] ** 2)), rel=1e-9)
        assert metrics[channel]["eps_max"] == pytest.approx(np.abs(errors[:, i]).max(), rel=1e-9)


def test_horizon_metrics_match_loop(sim_dataset, model, known, biased):
    n = horizon_steps(HORIZON_S, model.ts)
    coeffs = biased.coefficients
    ades, fdes = [], []
    for r in range(len(sim_dataset) - n):
        pose = PoseState.from_array(sim_dataset.poses[r])
        state = VelocityState.from_array(sim_dataset.states[r])
        dists = []
        for k in range(n):
            control = ControlInput.from_array(sim_dataset.controls[r + k])
            pose, state = step_pose(pose, state, model.ts), step_velocity(state, control, known, coeffs, model.ts)
            logged = sim_dataset.poses[r + k + 1]
            dists.append(np.hypot(pose.x - logged[0], pose.y - logged[1]))
        ades.append(np.mean(dists))
        fdes.append(dists[-1])
    ade, fde = horizon_rollout_metrics(biased, sim_dataset, HORIZON_S, model)
    assert ade == pytest.approx(np.mean(ades), rel=1e-9)
    assert fde == pytest.approx(np.mean(fdes), rel=1e-9)
    assert ade > 1e-6


def test_horizon_must_be_whole_samples():
    assert horizon_steps(0.3, 0.02) == 15
    assert horizon_steps(0.6, 0.04) == 15
    with pytest.raises(ValidationError) as exc:
        horizon_steps(0.31, 0.02)
    assert exc.value.details["field"] == "eval.horizon_ms"
    with pytest.raises(ValidationError):
        horizon_steps(0.0, 0.02)


def test_default_horizon_depends_on_rate():
    assert default_horizon_ms(50.0, 300.0, 600.0) == 300.0
    assert default_horizon_ms(25.0, 300.0, 600.0) == 600.0


def test_starts_crossing_sessions_are_skipped(sim_dataset, model, ground_truth):
    dataset = _two_sessions(sim_dataset)
    result = horizon_errors(GroundTruthEstimator(ground_truth), dataset, HORIZON_S, model)
    assert result.steps == 15
    assert result.skipped == 2 * 14
    assert len(result.per_start) == 2 * 85
    assert result.diverged == 0


def test_rate_mismatch(sim_dataset, known, ground_truth):
    slow = SingleTrackModel(known, 1.0 / 25.0)
    with pytest.raises(DataError):
        one_step_metrics(GroundTruthEstimator(ground_truth), sim_dataset, slow)


def test_recording_shorter_than_horizon(sim_dataset, model, ground_truth):
    with pytest.raises(WindowingError):
        horizon_errors(GroundTruthEstimator(ground_truth), sim_dataset.excerpt(10), HORIZON_S, model)


def test_diverging_rollouts_are_dropped(sim_dataset, model, ground_truth):
    wild = GroundTruthEstimator(ground_truth.replace(I_z=1e-12))
    result = horizon_errors(wild, sim_dataset, HORIZON_S, model)
    assert result.diverged > 0
    assert len(result.per_start) + result.diverged == len(sim_dataset) - 15
    assert np.all(np.isfinite(result.per_start["ade"]))


def test_open_loop_report(sim_dataset, model, biased):
    report, per_window = open_loop_report(biased, sim_dataset, model, HORIZON_S)
    assert report.horizon_steps == 15
    assert report.windows == len(sim_dataset) - 1
    assert report.starts == len(sim_dataset) - 15
    assert list(per_window.columns) == ["row", "err_vx", "err_vy", "err_omega", "ade", "fde"]
    assert per_window["ade"].isna().sum() == 14
    first = json.dumps(report.to_dict(), sort_keys=True)
    again, _ = open_loop_report(biased, sim_dataset, model, HORIZON_S)
    assert json.dumps(again.to_dict(), sort_keys=True) == first


def test_ground_truth_coefficient_report(sim_dataset, bounds, ground_truth):
    report = coefficient_report(GroundTruthEstimator(ground_truth), sim_dataset, bounds, ground_truth)
    assert report.out_of_range == []
    assert report.dpm_out_of_range is None
    assert report.entry("B_f").relative_error == pytest.approx(0.0, abs=1e-12)
    assert report.entry("G_f").relative_error is None
    assert report.entry("G_f").absolute_error == 0.0
    assert report.to_dict()["coefficients"]["I_z"]["in_range"] is True


def test_dpm_report_marks_unestimated(sim_dataset, bounds, ground_truth):
    network = make_network(bounds, variant=ModelVariant.DPM_MINUS20, tau=1)
    report = coefficient_report(NetworkEstimator(network), sim_dataset, bounds, ground_truth)
    assert report.entry("I_z").mean is None
    assert not report.entry("C_m1").estimated
    assert report.entry("B_f").estimated
    assert report.mean_f_rx is not None
    assert report.dpm_out_of_range in ("confirmed", "inconclusive")
    assert set(report.out_of_range) <= {"B_f", "C_f", "D_f", "E_f", "B_r", "C_r", "D_r", "E_r"}

    table = coefficient_table([report], ground_truth)
    assert list(table.index) == ["Actual", "dpm-minus20"]
    assert table.loc["dpm-minus20", "I_z"] == NA
    assert table.loc["Actual", "I_z"] == ground_truth.I_z


def test_comparison_and_race_tables(sim_dataset, model, ground_truth, biased):
    exact, _ = open_loop_report(GroundTruthEstimator(ground_truth), sim_dataset, model, HORIZON_S)
    wrong, _ = open_loop_report(biased, sim_dataset, model, HORIZON_S)
    table = comparison_table([exact, wrong])
    assert list(table.columns) == ["rmse_vx", "eps_max_vx", "rmse_vy", "eps_max_vy", "rmse_omega",
                                   "eps_max_omega", "ade", "fde"]
    assert list(table.index) == ["ground-truth", "biased"]
    assert (table.iloc[0] <= table.iloc[1]).all()

    finished = RaceReport("ground-truth", "track2", lap_times=[12.5], average_speed=1.4, completed=True)
    aborted = RaceReport("ddm", "track2", violations=2)
    races = race_table([finished, aborted])
    assert races.loc["ground-truth", "lap_time"] == 12.5
    assert races.loc["ddm", "lap_time"] == NA
    assert isinstance(races, pd.DataFrame)


@pytest.mark.slow
def test_ddm_beats_dpm_open_loop(trained_ddm, trained_dpm_gt, test_recording, model):
    ddm, _ = open_loop_report(NetworkEstimator(trained_ddm[0]), test_recording, model, HORIZON_S)
    dpm, _ = open_loop_report(NetworkEstimator(trained_dpm_gt[0]), test_recording, model, HORIZON_S)
    assert ddm.metrics["vx"]["rmse"] < 1e-3
    assert ddm.ade < 1e-2
    for channel in ("vx", "vy", "omega"):
        assert ddm.metrics[channel]["rmse"] < dpm.metrics[channel]["rmse"], channel
    assert ddm.ade < dpm.ade
    assert ddm.fde < dpm.fde


@pytest.mark.slow
def test_trained_dpm_flag_follows_its_estimates(trained_ddm, trained_dpm_gt, test_recording, bounds, ground_truth):
    _, ddm_training = trained_ddm
    network, dpm_training = trained_dpm_gt
    assert len(dpm_training.val_loss) == len(ddm_training.val_loss)
    report = coefficient_report(NetworkEstimator(network), test_recording, bounds, ground_truth)
    pacejka_outside = [name for name in report.out_of_range if name in PACEJKA_NAMES]
    assert report.dpm_out_of_range == ("confirmed" if pacejka_outside else "inconclusive")
    assert report.to_dict()["dpm_out_of_range"] == report.dpm_out_of_range
