"""
Coefficient network: layout, guard containment, the DPM output mapping,
checkpoints and full-chain gradients against central differences.
"""
import numpy as np
import pytest

from app.models import ModelVariant, VelocityState
from app.services.estimators import GroundTruthEstimator, load_estimator, save_ground_truth, save_network
from app.services.network import (
    Architecture,
    CoefficientNetwork,
    NetworkParams,
    Normalizer,
    coefficient_spread,
    loss,
    mish,
    mish_grad,
)
from app.services.tape import Tape
from conftest import make_network
from utils.errors import DimensionError, SimulationError


def test_layer_shapes_chain():
    arch = Architecture(3, (8, 4), 0, 17)
    shapes = arch.layer_shapes()
    assert list(shapes) == ["dense0.weight", "dense0.bias", "dense1.weight", "dense1.bias",
                            "head.weight", "head.bias"]
    assert shapes["dense0.weight"] == (21, 8)
    assert shapes["head.weight"] == (4, 17)


def test_recurrent_layer_shapes():
    shapes = Architecture(5, (6,), 2, 9).layer_shapes()
    assert shapes["gru0.w_x"] == (7, 18)
    assert shapes["gru1.w_x"] == (6, 18)
    assert shapes["gru1.w_h"] == (6, 18)
    assert shapes["dense0.weight"] == (6, 6)


def test_architecture_rejects_empty_hidden():
    with pytest.raises(DimensionError):
        Architecture(2, (), 0, 17)


def test_same_seed_same_parameters(bounds):
    a = make_network(bounds, seed=7)
    b = make_network(bounds, seed=7)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_mish_gradient():
    a = np.linspace(-5, 5, 41)
    h = 1e-6
    assert np.allclose(mish_grad(a), (mish(a + h) - mish(a - h)) / (2 * h), atol=1e-8)


def test_ddm_outputs_stay_in_bounds_with_huge_weights(bounds, sim_dataset):
    network = make_network(bounds)
    params = NetworkParams({k: v * 1e3 for k, v in network.params.items()})
    est = network.with_params(params).forward(sim_dataset.windows(2).features)
    assert est.f_rx is None
    assert np.all(bounds.contains(est.coeffs))


def test_dpm_maps_pacejka_and_force(bounds, sim_dataset, ground_truth):
    network = make_network(bounds, variant=ModelVariant.DPM_PLUS20)
    est = network.forward(sim_dataset.windows(2).features[:5])
    assert est.coeffs.shape == (5, 17)
    assert est.f_rx.shape == (5,)
    assert np.allclose(est.coeffs[:, 16], 1.2 * ground_truth.I_z)
    assert np.all(est.coeffs[:, [4, 5, 10, 11, 12, 13, 14, 15]] == 0.0)


def test_wrong_window_shape(small_network):
    with pytest.raises(DimensionError):
        small_network.forward(np.zeros((2, 5, 7)))


def test_non_finite_activations(bounds, sim_dataset):
    network = make_network(bounds)
    params = network.params.copy()
    params["head.bias"][0] = np.nan
    with pytest.raises(SimulationError) as exc:
        network.with_params(params).forward(sim_dataset.windows(2).features[:3])
    assert exc.value.code == "NON_FINITE_ACTIVATION"


def test_normalizer_keeps_constant_channels():
    features = np.zeros((4, 2, 7))
    features[..., 0] = np.arange(8).reshape(4, 2)
    norm = Normalizer.fit(features)
    assert norm.std[1] == 1.0
    assert np.allclose(norm.apply(features)[..., 0].mean(), 0.0)


def test_loss_uses_three_channels():
    a = VelocityState(1.0, 0.0, 0.0, 0.5, 0.1)
    b = VelocityState(1.3, 0.0, 0.0, 0.0, 0.0)
    assert loss(a, b) == pytest.approx(0.09 / 3)


def test_tape_accumulates_leaf_gradients():
    tape = Tape()
    tape.record(lambda g, t: (t.accumulate("w", g), g * 2.0)[1])
    tape.record(lambda g, t: (t.accumulate("w", g), g * 3.0)[1])
    assert tape.backward(np.array(1.0)) == 6.0
    assert tape.grads["w"] == 4.0


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def _numeric_gradient(network, batch, model, weight, h=1e-6):
    numeric = {}
    for name in network.params:
        grad = np.zeros_like(network.params[name])
        for i in range(grad.size):
            up = network.params.copy()
            down = network.params.copy()
            up[name].flat[i] += h
            down[name].flat[i] -= h
            grad.flat[i] = (network.objective(batch, model, up, weight)
                            - network.objective(batch, model, down, weight)) / (2 * h)
        numeric[name] = grad
    return numeric


@pytest.mark.parametrize("seed", range(100))
def test_full_chain_gradient(seed, bounds, sim_dataset, model):
    rng = np.random.default_rng(seed)
    variant = [ModelVariant.DDM, ModelVariant.DPM_GT][seed % 2]
    recurrent = int(seed % 4 == 3)
    weight = [0.0, 1.0][(seed // 2) % 2]
    tau = int(rng.integers(1, 4))
    windows = sim_dataset.windows(tau)
    batch = windows.subset(rng.choice(len(windows), size=6, replace=False))
    network = make_network(bounds, variant=variant, tau=tau, hidden=(16, 16), recurrent=recurrent,
                           seed=seed, windows=windows)

    value, grads = network.backward(batch, model, consistency_weight=weight)
    assert value == pytest.approx(network.objective(batch, model, consistency_weight=weight), rel=1e-12)
    if weight == 0.0:
        assert value == pytest.approx(network.batch_loss(batch, model), rel=1e-12)

    numeric = _numeric_gradient(network, batch, model, weight)
    analytic = np.concatenate([grads[name].ravel() for name in network.params])
    expected = np.concatenate([numeric[name].ravel() for name in network.params])
    assert _relative_error(analytic, expected) < 1e-4


def test_spread_gradient_matches_differences(bounds, rng):
    coeffs = bounds.lower + rng.uniform(0.1, 0.9, size=(5, 17)) * bounds.span
    value, grad = coefficient_spread(coeffs, bounds)
    h = 1e-7 * bounds.span
    numeric = np.zeros_like(coeffs)
    for i in range(5):
        for j in range(17):
            up = coeffs.copy()
            down = coeffs.copy()
            up[i, j] += h[j]
            down[i, j] -= h[j]
            numeric[i, j] = (coefficient_spread(up, bounds)[0] - coefficient_spread(down, bounds)[0]) / (2 * h[j])
    assert value > 0
    assert _relative_error(grad, numeric) < 1e-6


def test_constant_estimates_have_no_spread(bounds, ground_truth):
    value, grad = coefficient_spread(np.tile(ground_truth.as_array(), (8, 1)), bounds)
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_spread_does_not_touch_dpm(bounds, sim_dataset, model):
    network = make_network(bounds, variant=ModelVariant.DPM_GT)
    batch = sim_dataset.windows(2).subset(np.arange(8))
    assert network.backward(batch, model, consistency_weight=5.0)[0] == pytest.approx(network.batch_loss(batch, model))


def test_checkpoint_round_trip(tmp_path, bounds, sim_dataset):
    windows = sim_dataset.windows(2)
    network = make_network(bounds, hidden=(5, 4), recurrent=1, windows=windows)
    path = save_network(network, tmp_path / "ddm.json", {"epochs": 1})
    estimator = load_estimator(path)
    assert estimator.tau == 2
    assert estimator.name == "ddm"
    assert np.array_equal(estimator.estimate(windows.features).coeffs, network.forward(windows.features).coeffs)
    assert path.read_text() == save_network(network, tmp_path / "again.json", {"epochs": 1}).read_text()


def test_ground_truth_checkpoint(tmp_path, ground_truth):
    path = save_ground_truth(ground_truth, tmp_path / "gt.json")
    estimator = load_estimator(path)
    assert isinstance(estimator, GroundTruthEstimator)
    est = estimator.estimate(np.zeros((3, 1, 7)))
    assert np.array_equal(est.coeffs, np.tile(ground_truth.as_array(), (3, 1)))


def test_loss_ignores_logged_actuators(small_network, sim_dataset, model):
    windows = sim_dataset.windows(2)
    shifted = type(windows)(windows.features, windows.states, windows.controls,
                            windows.next_states + np.array([0.0, 0.0, 0.0, 0.3, -0.1]), windows.rows, windows.tau)
    assert small_network.batch_loss(shifted, model) == small_network.batch_loss(windows, model)


def test_single_window_estimate_is_typed(small_network, sim_dataset, bounds):
    window = sim_dataset.windows(2).features[7]
    coeffs = small_network.estimate_coefficients(window)
    assert np.array_equal(coeffs.as_array(), small_network.forward(window[None]).coeffs[0])
    assert bounds.contains(coeffs.as_array()).all()
