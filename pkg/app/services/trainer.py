"""
Training and hyperparameter search for the coefficient networks.

Training is mini-batch Adam on the one-step loss plus the weighted batch
spread of the DDM coefficients, with a window-level
validation split. The parameters with the lowest validation loss are kept.
Tuning samples architectures at random and trains each candidate; trials
run concurrently in worker threads.
"""

import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.models import ModelKind
from app.services.coefficients import CoefficientBounds, get_squash
from app.services.dynamics import SingleTrackModel
from app.services.network import CoefficientNetwork, NetworkParams, Normalizer
from app.services.telemetry import Dataset
from app.services.windows import WindowSet, split_windows
from utils.constants import COEFFICIENT_NAMES, PACEJKA_NAMES
from utils.errors import AppError, SimulationError, TrainingDivergenceError, ValidationError, WindowingError
from utils.validation import TrainConfig, TuneConfig

logger = logging.getLogger(__name__)


class Adam:
    """Adaptive moment estimation over named parameter arrays."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: NetworkParams, grads: Dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        for k in params:
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(self.v[k] * (1.0 / bc2)) + self.epsilon
            params[k][...] -= step_size * self.m[k] / denom


@dataclass
class TrainingReport:
    """
    Loss curves and validation-set coefficient means.

    ``val_loss[0]`` is the untrained network's loss; ``train_loss[i]`` (the
    training objective, spread penalty included) and
    ``val_loss[i + 1]`` belong to epoch ``i + 1``.
    """
    kind: ModelKind
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    mean_coefficients: Dict[str, float] = field(default_factory=dict)
    mean_f_rx: Optional[float] = None
    train_windows: int = 0
    val_windows: int = 0
    diverged: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.to_dict(),
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "mean_coefficients": dict(self.mean_coefficients),
            "mean_f_rx": self.mean_f_rx,
            "train_windows": self.train_windows,
            "val_windows": self.val_windows,
            "diverged": self.diverged,
        }


def _finite_grads(grads: Dict[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def mean_estimates(network: CoefficientNetwork, windows: WindowSet) -> Tuple[Dict[str, float], Optional[float]]:
    """Mean estimated coefficients over a window set (only the estimated ones for DPM)."""
    est = network.forward(windows.features)
    means = est.coeffs.mean(axis=0)
    names = PACEJKA_NAMES if network.is_dpm else COEFFICIENT_NAMES
    values = {name: float(means[COEFFICIENT_NAMES.index(name)]) for name in names}
    f_rx = None if est.f_rx is None else float(est.f_rx.mean())
    return values, f_rx


def train(dataset: Dataset, config: TrainConfig, bounds: CoefficientBounds, kind: ModelKind,
          model: SingleTrackModel, seed: int, activation: str = "sigmoid") -> Tuple[CoefficientNetwork, TrainingReport]:
    """
    Fit a coefficient network to one-step transitions.

    Args:
        dataset: Telemetry to window
        config: Architecture and optimiser settings
        bounds: Physics Guard intervals (unused by DPM variants)
        kind: Model variant
        model: Physics layer (known coefficients, sample time, limits)
        seed: Seeds the split, initialisation and shuffling

    Returns:
        Tuple of (network with the best validation parameters, report)

    Raises:
        WindowingError: If the training split holds fewer windows than a batch.
        TrainingDivergenceError: On a non-finite loss, gradient or parameter.
    """
    train_set, val_set = split_windows(dataset.windows(config.tau), config.validation_fraction, seed)
    return train_windows(train_set, val_set, config, bounds, kind, model, seed, activation)


def train_windows(train_set: WindowSet, val_set: WindowSet, config: TrainConfig, bounds: CoefficientBounds,
                  kind: ModelKind, model: SingleTrackModel, seed: int,
                  activation: str = "sigmoid") -> Tuple[CoefficientNetwork, TrainingReport]:
    """Training loop on an existing split."""
    if len(train_set) < config.batch_size:
        raise WindowingError(f"{len(train_set)} training windows cannot fill a batch of {config.batch_size}",
                             {'windows': len(train_set), 'batch_size': config.batch_size})

    network = CoefficientNetwork.create(kind, bounds, config.tau, config.hidden_sizes, config.recurrent_layers,
                                        seed, Normalizer.fit(train_set.features))
    network.squash = get_squash(activation)
    params = network.params
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(seed + 1)
    report = TrainingReport(kind, train_windows=len(train_set), val_windows=len(val_set))

    best_params = params.copy()
    report.best_val_loss = network.batch_loss(val_set, model)
    report.val_loss.append(report.best_val_loss)
    logger.info("Training %s on %d windows (%d validation), initial validation loss %.6g",
                kind.variant.value, len(train_set), len(val_set), report.best_val_loss)

    def diverge(epoch: int, what: str):
        report.diverged = True
        best = network.with_params(best_params)
        logger.error("Training diverged at epoch %d: %s", epoch, what)
        raise TrainingDivergenceError(f"Training diverged at epoch {epoch}: {what}", epoch, best, report)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = train_set.subset(order[start:start + config.batch_size])
            try:
                loss, grads = network.backward(batch, model, consistency_weight=config.consistency_weight)
            except SimulationError as e:
                diverge(epoch, e.message)
            if not np.isfinite(loss):
                diverge(epoch, "non-finite training loss")
            if not _finite_grads(grads):
                diverge(epoch, "non-finite gradient")
            optimizer.step(params, grads)
            if not params.is_finite():
                diverge(epoch, "non-finite parameters")
            total += loss * len(batch)

        try:
            val = network.batch_loss(val_set, model)
        except SimulationError as e:
            diverge(epoch, e.message)
        if not np.isfinite(val):
            diverge(epoch, "non-finite validation loss")
        report.train_loss.append(total / len(train_set))
        report.val_loss.append(val)
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best_params = params.copy()
        if epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info("Epoch %d/%d: train %.6g, validation %.6g (best %.6g at %d)",
                        epoch, config.epochs, report.train_loss[-1], val, report.best_val_loss, report.best_epoch)

    best = network.with_params(best_params)
    report.mean_coefficients, report.mean_f_rx = mean_estimates(best, val_set)
    return best, report


# ----------------------------------------------------------------------
# Random search
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    index: int
    config: TrainConfig
    val_loss: float
    best_epoch: int = 0
    error: Optional[str] = None

    def to_row(self) -> Dict[str, Any]:
        return {
            "trial": self.index,
            "learning_rate": self.config.learning_rate,
            "batch_size": self.config.batch_size,
            "hidden_layers": len(self.config.hidden_sizes),
            "width": self.config.hidden_sizes[0],
            "recurrent_layers": self.config.recurrent_layers,
            "tau": self.config.tau,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "error": self.error or "",
        }


def sample_configs(base: TrainConfig, space: TuneConfig, budget: int, seed: int) -> List[TrainConfig]:
    """Draw ``budget`` candidate configurations; the sequence depends only on the seed."""
    rng = np.random.default_rng(seed)
    lo, hi = space.learning_rate_range
    layers_lo, layers_hi = space.hidden_layers_range
    configs = []
    for _ in range(budget):
        lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        batch = int(rng.choice(space.batch_sizes))
        layers = int(rng.integers(layers_lo, layers_hi + 1))
        width = int(rng.choice(space.widths))
        recurrent = int(rng.choice(space.recurrent_layers))
        tau = int(rng.choice(space.taus))
        configs.append(base.model_copy(update={
            "learning_rate": lr, "batch_size": batch, "hidden_sizes": [width] * layers,
            "recurrent_layers": recurrent, "tau": tau, "epochs": space.epochs,
        }))
    return configs


def _run_trial(index: int, dataset: Dataset, config: TrainConfig, bounds: CoefficientBounds,
               kind: ModelKind, model: SingleTrackModel, seed: int, activation: str) -> TrialResult:
    _, report = train(dataset, config, bounds, kind, model, seed, activation)
    logger.info("Trial %d finished: validation loss %.6g", index, report.best_val_loss)
    return TrialResult(index, config, report.best_val_loss, report.best_epoch)


async def _run_trials(configs: List[TrainConfig], dataset: Dataset, bounds: CoefficientBounds, kind: ModelKind,
                      model: SingleTrackModel, seed: int, activation: str, max_concurrent: int) -> List[Any]:
    semaphore = asyncio.Semaphore(max_concurrent)

    async def run(index: int, config: TrainConfig):
        async with semaphore:
            return await asyncio.to_thread(_run_trial, index, dataset, config, bounds, kind, model, seed, activation)

    tasks = [run(i, config) for i, config in enumerate(configs)]
    return await asyncio.gather(*tasks, return_exceptions=True)


def serialize_trial_results(configs: List[TrainConfig], results: List[Any]) -> List[TrialResult]:
    """Turn gather(..., return_exceptions=True) output into TrialResults, failed trials at +inf."""
    trials = []
    for index, (config, result) in enumerate(zip(configs, results)):
        if isinstance(result, AppError):
            logger.warning("Trial %d failed: %s", index, result.message)
            trials.append(TrialResult(index, config, math.inf, error=f"{result.code}: {result.message}"))
        elif isinstance(result, BaseException):
            raise result
        else:
            trials.append(result)
    return trials


def tune(dataset: Dataset, base: TrainConfig, space: TuneConfig, bounds: CoefficientBounds, kind: ModelKind,
         model: SingleTrackModel, seed: int, budget: Optional[int] = None,
         activation: str = "sigmoid") -> Tuple[TrainConfig, pd.DataFrame]:
    """
    Random search over learning rate, batch size, depth, width, recurrent
    layers and history length.

    Returns:
        Tuple of (best configuration, trials table ordered by trial index)

    Raises:
        TrainingDivergenceError: If every trial failed.
    """
    budget = space.budget if budget is None else budget
    if budget < 1:
        raise ValidationError("Tuning budget must be at least 1", field="tune.budget")
    configs = sample_configs(base, space, budget, seed)
    logger.info("Tuning %s with %d trials (%d concurrent)", kind.variant.value, budget, space.max_concurrent_trials)
    results = asyncio.run(_run_trials(configs, dataset, bounds, kind, model, seed, activation,
                                      space.max_concurrent_trials))
    trials = serialize_trial_results(configs, results)
    table = pd.DataFrame([t.to_row() for t in trials])

    finite = [t for t in trials if np.isfinite(t.val_loss)]
    if not finite:
        raise TrainingDivergenceError("Every tuning trial failed", 0)
    best = min(finite, key=lambda t: (t.val_loss, t.index))
    logger.info("Best trial %d: validation loss %.6g", best.index, best.val_loss)
    return best.config, table
