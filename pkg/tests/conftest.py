"""
Shared fixtures: simulator constants, a short simulated recording and small
network configurations.
"""
import numpy as np
import pytest

from app.models import KnownCoefficients, ModelKind, ModelVariant, UnknownCoefficients
from app.services.coefficients import sim_nominal_bounds
from app.services.datagen import pure_pursuit_drive
from app.services.dynamics import SingleTrackModel
from app.services.network import CoefficientNetwork, Normalizer
from app.services.tracks import get_track
from app.services.trainer import train
from utils.constants import SIM_GROUND_TRUTH, SIM_L_F, SIM_L_R, SIM_MASS, SIM_RATE_HZ
from utils.validation import TrainConfig


@pytest.fixture(scope="session")
def known():
    return KnownCoefficients(SIM_MASS, SIM_L_F, SIM_L_R)


@pytest.fixture(scope="session")
def ground_truth():
    return UnknownCoefficients.from_dict(SIM_GROUND_TRUTH)


@pytest.fixture(scope="session")
def model(known):
    return SingleTrackModel(known, 1.0 / SIM_RATE_HZ)


@pytest.fixture(scope="session")
def bounds(ground_truth):
    return sim_nominal_bounds(ground_truth)


@pytest.fixture(scope="session")
def sim_dataset(known, ground_truth):
    """About six seconds of pure-pursuit driving on the training track."""
    return pure_pursuit_drive(get_track("track1"), known, ground_truth, laps=1, rate_hz=SIM_RATE_HZ,
                              seed=0, max_steps=300)


@pytest.fixture(scope="session")
def test_track_dataset(known, ground_truth):
    return pure_pursuit_drive(get_track("track2"), known, ground_truth, laps=1, rate_hz=SIM_RATE_HZ,
                              seed=1, max_steps=200)


@pytest.fixture(scope="session")
def train_recording(known, ground_truth):
    """A thousand samples from the middle of four laps on the training track."""
    dataset = pure_pursuit_drive(get_track("track1"), known, ground_truth, laps=4, rate_hz=SIM_RATE_HZ, seed=0)
    return dataset.excerpt(min(1000, len(dataset)))


@pytest.fixture(scope="session")
def test_recording(known, ground_truth):
    dataset = pure_pursuit_drive(get_track("track2"), known, ground_truth, laps=4, rate_hz=SIM_RATE_HZ, seed=1)
    return dataset.excerpt(min(1000, len(dataset)))


@pytest.fixture(scope="session")
def trained_ddm(train_recording, bounds, model):
    """(network, report) for the DDM under the default training settings."""
    return train(train_recording, TrainConfig(), bounds, ModelKind(ModelVariant.DDM), model, seed=0)


@pytest.fixture(scope="session")
def trained_dpm_gt(train_recording, bounds, model, ground_truth):
    kind = ModelKind.for_variant(ModelVariant.DPM_GT, ground_truth.I_z)
    return train(train_recording, TrainConfig(model="dpm-gt"), bounds, kind, model, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_network(bounds, variant=ModelVariant.DDM, tau=2, hidden=(6,), recurrent=0, seed=0, windows=None,
                 iz=SIM_GROUND_TRUTH["I_z"]):
    kind = ModelKind.for_variant(variant, iz)
    normalizer = Normalizer.fit(windows.features) if windows is not None else None
    return CoefficientNetwork.create(kind, bounds, tau, hidden, recurrent, seed, normalizer)


@pytest.fixture
def small_network(bounds, sim_dataset):
    return make_network(bounds, windows=sim_dataset.windows(2))
