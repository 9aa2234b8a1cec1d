"""
Adam, the training loop, divergence handling and random search.
"""
import math

import numpy as np
import pytest

from app.models import ModelKind, ModelVariant
from app.services.network import CoefficientNetwork, NetworkParams
from app.services.trainer import (
    Adam,
    TrialResult,
    sample_configs,
    serialize_trial_results,
    train,
    tune,
)
from conftest import make_network
from utils.constants import COEFFICIENT_NAMES, PACEJKA_NAMES
from utils.errors import TrainingDivergenceError, ValidationError, WindowingError
from utils.validation import TrainConfig, TuneConfig

TINY = TrainConfig(epochs=3, batch_size=16, tau=1, hidden_sizes=[6], log_every=1)
DDM = ModelKind(ModelVariant.DDM)


def test_adam_matches_scalar_oracle():
    params = NetworkParams({"w": np.array([0.5, -1.0])})
    adam = Adam(lr=0.01)
    grads = [np.array([0.2, -0.4]), np.array([0.1, 0.3])]
    expected = [0.5, -1.0]
    m = [0.0, 0.0]
    v = [0.0, 0.0]
    for t, g in enumerate(grads, start=1):
        adam.step(params, {"w": g})
        for i in range(2):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            m_hat = m[i] / (1 - 0.9 ** t)
            v_hat = v[i] / (1 - 0.999 ** t)
            expected[i] -= 0.01 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert np.allclose(params["w"], expected, rtol=1e-12, atol=0)


def test_train_reports_curves(sim_dataset, bounds, model):
    network, report = train(sim_dataset, TINY, bounds, DDM, model, seed=0)
    assert len(report.train_loss) == 3
    assert len(report.val_loss) == 4
    assert report.best_val_loss == min(report.val_loss)
    assert 0 <= report.best_epoch <= 3
    assert set(report.mean_coefficients) == set(COEFFICIENT_NAMES)
    assert report.mean_f_rx is None
    assert not report.diverged
    assert report.train_windows + report.val_windows == len(sim_dataset.windows(1))
    assert network.batch_loss(sim_dataset.windows(1), model) < math.inf


def test_zero_epochs_returns_the_initial_network(sim_dataset, bounds, model):
    network, report = train(sim_dataset, TINY.model_copy(update={"epochs": 0}), bounds, DDM, model, seed=0)
    initial = make_network(bounds, tau=1, hidden=(6,), seed=0)
    assert all(np.array_equal(network.params[k], initial.params[k]) for k in initial.params)
    assert report.train_loss == []
    assert report.val_loss == [report.best_val_loss]
    assert report.best_epoch == 0
    assert set(report.mean_coefficients) == set(COEFFICIENT_NAMES)


def test_spread_penalty_enters_the_training_loss(sim_dataset, bounds, model):
    _, plain = train(sim_dataset, TINY.model_copy(update={"consistency_weight": 0.0}), bounds, DDM, model, seed=0)
    _, penalised = train(sim_dataset, TINY.model_copy(update={"consistency_weight": 10.0}), bounds, DDM, model,
                         seed=0)
    assert plain.val_loss[0] == penalised.val_loss[0]
    assert plain.train_loss[0] != penalised.train_loss[0]


def test_train_is_deterministic(sim_dataset, bounds, model):
    a, ra = train(sim_dataset, TINY, bounds, DDM, model, seed=3)
    b, rb = train(sim_dataset, TINY, bounds, DDM, model, seed=3)
    assert ra.to_dict() == rb.to_dict()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_train_dpm_reports_pacejka_and_force(sim_dataset, bounds, model, ground_truth):
    kind = ModelKind.for_variant(ModelVariant.DPM_MINUS20, ground_truth.I_z)
    config = TINY.model_copy(update={"epochs": 1, "model": "dpm-minus20"})
    network, report = train(sim_dataset, config, bounds, kind, model, seed=0)
    assert network.is_dpm
    assert set(report.mean_coefficients) == set(PACEJKA_NAMES)
    assert report.mean_f_rx is not None
    assert report.to_dict()["kind"] == {"variant": "dpm-minus20", "fixed_iz": 0.8 * ground_truth.I_z}


def test_batch_larger_than_training_split(sim_dataset, bounds, model):
    with pytest.raises(WindowingError):
        train(sim_dataset, TINY.model_copy(update={"batch_size": 10_000}), bounds, DDM, model, seed=0)


def test_divergence_keeps_last_finite_network(sim_dataset, bounds, model, monkeypatch):
    monkeypatch.setattr(CoefficientNetwork, "backward",
                        lambda self, windows, model, params=None, **kwargs: (float("nan"), {}))
    with pytest.raises(TrainingDivergenceError) as exc:
        train(sim_dataset, TINY, bounds, DDM, model, seed=0)
    error = exc.value
    assert error.exit_code == 4
    assert error.epoch == 1
    assert isinstance(error.checkpoint, CoefficientNetwork)
    assert error.checkpoint.params.is_finite()
    assert error.report.diverged


SPACE = TuneConfig(budget=2, epochs=1, max_concurrent_trials=2, batch_sizes=[16], hidden_layers_range=(1, 2),
                   widths=[4, 6], recurrent_layers=[0], taus=[1, 2])


def test_sample_configs_depend_only_on_seed():
    a = sample_configs(TINY, SPACE, 5, seed=11)
    b = sample_configs(TINY, SPACE, 5, seed=11)
    assert a == b
    for config in a:
        assert 1e-4 <= config.learning_rate <= 1e-2
        assert config.epochs == 1
        assert config.tau in (1, 2)
        assert len(set(config.hidden_sizes)) == 1


def test_tune_orders_trials_by_index(sim_dataset, bounds, model):
    best, table = tune(sim_dataset, TINY, SPACE, bounds, DDM, model, seed=0)
    assert list(table["trial"]) == [0, 1]
    assert np.isfinite(table["val_loss"]).all()
    assert best.epochs == 1
    winner = table.loc[table["val_loss"].idxmin()]
    assert best.learning_rate == winner["learning_rate"]
    assert best.tau == winner["tau"]


def test_tuned_winner_is_no_worse_than_the_median_trial(sim_dataset, bounds, model):
    space = SPACE.model_copy(update={"budget": 4})
    best, table = tune(sim_dataset, TINY, space, bounds, DDM, model, seed=5)
    assert len(table) == 4
    winner = table.loc[table["val_loss"].idxmin()]
    assert winner["val_loss"] <= table["val_loss"].median()
    assert (best.learning_rate, best.batch_size, best.tau) == (winner["learning_rate"], winner["batch_size"],
                                                               winner["tau"])


def test_tune_rejects_empty_budget(sim_dataset, bounds, model):
    with pytest.raises(ValidationError):
        tune(sim_dataset, TINY, SPACE, bounds, DDM, model, seed=0, budget=0)


def test_failed_trials_rank_last():
    configs = [TINY, TINY]
    ok = TrialResult(1, TINY, 0.5, 2)
    results = serialize_trial_results(configs, [WindowingError("too short"), ok])
    assert results[0].val_loss == math.inf
    assert results[0].error.startswith("WINDOWING_ERROR")
    assert results[1] is ok
    with pytest.raises(RuntimeError):
        serialize_trial_results(configs, [RuntimeError("bug"), ok])


RELATIVE_TOLERANCE = {"B_f": 0.15, "C_f": 0.15, "D_f": 0.15, "B_r": 0.15, "C_r": 0.15, "D_r": 0.15, "I_z": 0.25}
ABSOLUTE_TOLERANCE = {"E_f": 0.05, "E_r": 0.05}


@pytest.mark.slow
def test_ddm_learns_on_a_full_recording(trained_ddm, train_recording, ground_truth, bounds):
    network, report = trained_ddm
    assert report.best_val_loss < 0.5 * report.val_loss[0]
    estimates = network.forward(train_recording.windows(4).features).coeffs
    assert np.all(bounds.contains(estimates))

    truth = ground_truth.to_dict()
    means = report.mean_coefficients
    for name, tolerance in RELATIVE_TOLERANCE.items():
        assert abs(means[name] - truth[name]) <= tolerance * abs(truth[name]), (name, means[name], truth[name])
    for name, tolerance in ABSOLUTE_TOLERANCE.items():
        assert abs(means[name] - truth[name]) <= tolerance, (name, means[name], truth[name])
