"""
Coefficient estimators: a trained network or the simulator's ground truth,
behind one interface used by evaluation and racing.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from app.models import ModelKind, ModelVariant, UnknownCoefficients
from app.services.coefficients import CoefficientBounds, get_squash
from app.services.dynamics import SingleTrackModel
from app.services.network import (
    Architecture,
    CoefficientNetwork,
    Estimate,
    NetworkParams,
    Normalizer,
)
from app.services.windows import WindowSet
from utils.checkpoint import read_checkpoint, write_checkpoint
from utils.constants import COEFFICIENT_NAMES, PACEJKA_NAMES
from utils.errors import SchemaError

logger = logging.getLogger(__name__)


class CoefficientEstimator:
    """Maps (N, tau+1, 7) history windows to coefficient estimates."""

    name = "estimator"
    tau = 0
    kind: ModelKind

    def estimate(self, features: np.ndarray) -> Estimate:
        raise NotImplementedError

    def predict(self, windows: WindowSet, model: SingleTrackModel) -> np.ndarray:
        """One-step predictions (N, 5) through the physics layer."""
        est = self.estimate(windows.features)
        next_state, _ = model.step(windows.states, windows.controls, est.coeffs, est.f_rx)
        return next_state

    @property
    def estimated_names(self):
        """Coefficients this estimator actually estimates."""
        if self.kind.variant.is_dpm:
            return PACEJKA_NAMES
        if self.kind.variant is ModelVariant.GROUND_TRUTH:
            return ()
        return COEFFICIENT_NAMES


class GroundTruthEstimator(CoefficientEstimator):
    """Returns the simulator's coefficients for every window."""

    name = "ground-truth"

    def __init__(self, coefficients: UnknownCoefficients, tau: int = 0):
        self.coefficients = coefficients
        self.tau = tau
        self.kind = ModelKind(ModelVariant.GROUND_TRUTH)

    def estimate(self, features: np.ndarray) -> Estimate:
        features = np.asarray(features)
        n = features.shape[0] if features.ndim == 3 else 1
        return Estimate(np.tile(self.coefficients.as_array(), (n, 1)))


class NetworkEstimator(CoefficientEstimator):
    """Wraps a trained CoefficientNetwork (DDM or a DPM variant)."""

    def __init__(self, network: CoefficientNetwork, train_config: Optional[Dict[str, Any]] = None):
        self.network = network
        self.train_config = train_config or {}
        self.tau = network.arch.input_steps - 1
        self.kind = network.kind
        self.name = network.kind.variant.value

    def estimate(self, features: np.ndarray) -> Estimate:
        return self.network.forward(features)


def network_payload(network: CoefficientNetwork, train_config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "kind": network.kind.to_dict(),
        "architecture": network.arch.to_dict(),
        "params": {name: value.tolist() for name, value in network.params.items()},
        "bounds": network.bounds.to_dict(),
        "guard_activation": network.squash.name,
        "normalizer": network.normalizer.to_dict(),
        "train_config": train_config or {},
    }


def save_network(network: CoefficientNetwork, path: Union[str, Path],
                 train_config: Optional[Dict[str, Any]] = None) -> Path:
    return write_checkpoint(network_payload(network, train_config), path)


def save_ground_truth(coefficients: UnknownCoefficients, path: Union[str, Path]) -> Path:
    """Write a pseudo-checkpoint that evaluates with the simulator's coefficients."""
    return write_checkpoint({"kind": ModelKind(ModelVariant.GROUND_TRUTH).to_dict(),
                             "coefficients": coefficients.to_dict()}, path)


def load_estimator(path: Union[str, Path]) -> CoefficientEstimator:
    """
    Rebuild an estimator from a checkpoint file.

    Raises:
        SchemaError: If required sections are missing or inconsistent.
    """
    payload = read_checkpoint(path)
    try:
        kind = ModelKind.from_dict(payload["kind"])
        if kind.variant is ModelVariant.GROUND_TRUTH:
            return GroundTruthEstimator(UnknownCoefficients.from_dict(payload["coefficients"]))
        arch = Architecture.from_dict(payload["architecture"])
        stored = payload["params"]
        params = NetworkParams({name: np.array(stored[name], dtype=float) for name in arch.layer_shapes()})
        network = CoefficientNetwork(
            arch, params, kind,
            CoefficientBounds.from_dict(payload["bounds"]),
            Normalizer.from_dict(payload["normalizer"]),
            get_squash(payload.get("guard_activation", "sigmoid")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Malformed checkpoint: {e}", str(path))
    logger.info("Loaded %s checkpoint from %s", kind.variant.value, path)
    return NetworkEstimator(network, payload.get("train_config"))
