"""
Coefficient-estimation network (Deep Dynamics) and the Deep Pacejka baseline.

Input: a history window normalised per channel. Optional stacked gated
recurrent layers read the window step by step; otherwise it is flattened.
Dense hidden layers use Mish. The linear head feeds either the Physics Guard
(DDM, 17 outputs) or, for the DPM baseline, eight unguarded Pacejka
coefficients plus a direct longitudinal force.

One-step predictions go through the single-track model and the loss is the
mean squared error over (v_x, v_y, omega). Training may add the batch spread
of the guarded coefficients to it. Gradients come from the chain tape.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from app.models import (
    ActuatorLimits,
    ControlInput,
    KnownCoefficients,
    ModelKind,
    UnknownCoefficients,
    VelocityState,
)
from app.services.coefficients import CoefficientBounds, SQUASHES, Squash, physics_guard, physics_guard_grad
from app.services.dynamics import SingleTrackModel, step_velocity
from app.services.tape import Tape
from app.services.windows import WindowSet
from utils.constants import COEFFICIENT_NAMES, FEATURE_NAMES, PACEJKA_NAMES
from utils.errors import DimensionError, SimulationError

logger = logging.getLogger(__name__)

N_FEATURES = len(FEATURE_NAMES)
DDM_OUTPUTS = len(COEFFICIENT_NAMES)
DPM_OUTPUTS = len(PACEJKA_NAMES) + 1
PACEJKA_INDEX = np.array([COEFFICIENT_NAMES.index(name) for name in PACEJKA_NAMES])
IZ_INDEX = COEFFICIENT_NAMES.index("I_z")


# ----------------------------------------------------------------------
# Parameters and architecture
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    """Layer layout; dimensions chain from (tau+1)*7 inputs to the head."""
    input_steps: int
    hidden_sizes: Tuple[int, ...]
    recurrent_layers: int
    output_size: int

    def __post_init__(self):
        if self.input_steps < 1:
            raise DimensionError("A window needs at least one step", ">= 1", self.input_steps)
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise DimensionError("At least one positive hidden layer size is required", ">= 1", self.hidden_sizes)
        if self.recurrent_layers < 0:
            raise DimensionError("recurrent_layers must be non-negative", ">= 0", self.recurrent_layers)

    @property
    def input_width(self) -> int:
        return self.input_steps * N_FEATURES

    def layer_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Ordered parameter names and shapes."""
        shapes: Dict[str, Tuple[int, ...]] = {}
        width = self.input_width
        if self.recurrent_layers:
            hidden = self.hidden_sizes[0]
            inp = N_FEATURES
            for layer in range(self.recurrent_layers):
                shapes[f"gru{layer}.w_x"] = (inp, 3 * hidden)
                shapes[f"gru{layer}.w_h"] = (hidden, 3 * hidden)
                shapes[f"gru{layer}.b_x"] = (3 * hidden,)
                shapes[f"gru{layer}.b_h"] = (3 * hidden,)
                inp = hidden
            width = hidden
        for layer, size in enumerate(self.hidden_sizes):
            shapes[f"dense{layer}.weight"] = (width, size)
            shapes[f"dense{layer}.bias"] = (size,)
            width = size
        shapes["head.weight"] = (width, self.output_size)
        shapes["head.bias"] = (self.output_size,)
        return shapes

    def to_dict(self) -> Dict:
        return {"input_steps": self.input_steps, "hidden_sizes": list(self.hidden_sizes),
                "recurrent_layers": self.recurrent_layers, "output_size": self.output_size}

    @classmethod
    def from_dict(cls, data: Dict) -> "Architecture":
        return cls(int(data["input_steps"]), tuple(int(h) for h in data["hidden_sizes"]),
                   int(data["recurrent_layers"]), int(data["output_size"]))


@dataclass
class NetworkParams:
    """Named weight and bias arrays, in layer order."""
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "NetworkParams":
        return NetworkParams({name: value.copy() for name, value in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.arrays.values())

    @property
    def size(self) -> int:
        return int(sum(value.size for value in self.arrays.values()))


def init_params(arch: Architecture, rng: np.random.Generator) -> NetworkParams:
    """Uniform fan-in scaled initialisation; biases start at zero."""
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in arch.layer_shapes().items():
        if name.endswith("bias") or ".b_" in name:
            arrays[name] = np.zeros(shape)
            continue
        fan_in = shape[0]
        if name.startswith("gru"):
            bound = 1.0 / np.sqrt(shape[1] // 3)
        elif name.startswith("head"):
            bound = 1.0 / np.sqrt(fan_in)
        else:
            bound = np.sqrt(6.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return NetworkParams(arrays)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel standardisation of the seven window features."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        flat = np.asarray(features, dtype=float).reshape(-1, N_FEATURES)
        std = flat.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(flat.mean(axis=0), std)

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "Normalizer":
        return cls(np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float))


# ----------------------------------------------------------------------
# Layer primitives
# ----------------------------------------------------------------------


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def mish(a):
    return a * np.tanh(np.logaddexp(0.0, a))


def mish_grad(a):
    t = np.tanh(np.logaddexp(0.0, a))
    return t + a * (1.0 - t * t) * _sigmoid(a)


def _gru_forward(x_seq: np.ndarray, w_x, w_h, b_x, b_h):
    """Run one gated recurrent layer over (N, S, F) inputs; returns (N, S, H) and caches."""
    n, steps, _ = x_seq.shape
    hidden = w_h.shape[0]
    h = np.zeros((n, hidden))
    outputs = np.empty((n, steps, hidden))
    caches = []
    for s in range(steps):
        gx = x_seq[:, s, :] @ w_x + b_x
        gh = h @ w_h + b_h
        r = _sigmoid(gx[:, :hidden] + gh[:, :hidden])
        z = _sigmoid(gx[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
        cand = np.tanh(gx[:, 2 * hidden:] + r * gh[:, 2 * hidden:])
        h_new = (1.0 - z) * cand + z * h
        caches.append((h, r, z, cand, gh[:, 2 * hidden:]))
        outputs[:, s, :] = h_new
        h = h_new
    return outputs, caches


def _gru_backward(g_out: np.ndarray, x_seq: np.ndarray, caches, w_x, w_h):
    """Backpropagation through time for one recurrent layer."""
    n, steps, _ = x_seq.shape
    hidden = w_h.shape[0]
    g_x_seq = np.zeros_like(x_seq)
    g_wx = np.zeros_like(w_x)
    g_wh = np.zeros_like(w_h)
    g_bx = np.zeros(3 * hidden)
    g_bh = np.zeros(3 * hidden)
    g_carry = np.zeros((n, hidden))
    for s in reversed(range(steps)):
        h_prev, r, z, cand, gh_n = caches[s]
        g_h = g_out[:, s, :] + g_carry
        g_cand = g_h * (1.0 - z)
        g_z = g_h * (cand - h_prev)
        g_a_n = g_cand * (1.0 - cand * cand)
        g_r = g_a_n * gh_n
        g_a_r = g_r * r * (1.0 - r)
        g_a_z = g_z * z * (1.0 - z)
        g_gx = np.concatenate([g_a_r, g_a_z, g_a_n], axis=1)
        g_gh = np.concatenate([g_a_r, g_a_z, g_a_n * r], axis=1)
        g_wx += x_seq[:, s, :].T @ g_gx
        g_bx += g_gx.sum(axis=0)
        g_wh += h_prev.T @ g_gh
        g_bh += g_gh.sum(axis=0)
        g_x_seq[:, s, :] = g_gx @ w_x.T
        g_carry = g_h * z + g_gh @ w_h.T
    return g_x_seq, g_wx, g_wh, g_bx, g_bh


# ----------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------


def _as_state_array(value) -> np.ndarray:
    if isinstance(value, VelocityState):
        return value.as_array()
    return np.asarray(value, dtype=float)


def loss(predicted, observed) -> float:
    """Mean squared error over (v_x, v_y, omega), averaged over any batch axis."""
    diff = _as_state_array(predicted)[..., :3] - _as_state_array(observed)[..., :3]
    return float(np.mean(diff * diff))


def predict_next(state: VelocityState, control: ControlInput, known: KnownCoefficients,
                 est: UnknownCoefficients, ts: float,
                 limits: ActuatorLimits = ActuatorLimits()) -> VelocityState:
    """One-step forecast through the single-track model with estimated coefficients."""
    return step_velocity(state, control, known, est, ts, limits)


@dataclass(frozen=True)
class Estimate:
    """Per-window coefficient estimates; f_rx is set only for the DPM baseline."""
    coeffs: np.ndarray  # (N, 17)
    f_rx: Optional[np.ndarray] = None  # (N,)

    def row(self, i: int) -> "Estimate":
        return Estimate(self.coeffs[i], None if self.f_rx is None else self.f_rx[i])


# ----------------------------------------------------------------------
# Network
# ----------------------------------------------------------------------


class CoefficientNetwork:
    """
    Network parameters plus everything needed to turn a window into
    coefficients: architecture, model kind, bounds, normaliser and guard.
    """

    def __init__(self, arch: Architecture, params: NetworkParams, kind: ModelKind,
                 bounds: CoefficientBounds, normalizer: Optional[Normalizer] = None,
                 squash: Optional[Squash] = None):
        expected = DPM_OUTPUTS if kind.variant.is_dpm else DDM_OUTPUTS
        if arch.output_size != expected:
            raise DimensionError(f"{kind.variant.value} needs {expected} outputs", expected, arch.output_size)
        shapes = arch.layer_shapes()
        if list(shapes) != list(params.arrays) or any(params[k].shape != v for k, v in shapes.items()):
            raise DimensionError("Parameters do not match the architecture",
                                 {k: v for k, v in shapes.items()},
                                 {k: v.shape for k, v in params.items()})
        self.arch = arch
        self.params = params
        self.kind = kind
        self.bounds = bounds
        self.normalizer = normalizer or Normalizer.identity()
        self.squash = squash or SQUASHES["sigmoid"]

    @classmethod
    def create(cls, kind: ModelKind, bounds: CoefficientBounds, tau: int, hidden_sizes,
               recurrent_layers: int, seed: int, normalizer: Optional[Normalizer] = None) -> "CoefficientNetwork":
        output = DPM_OUTPUTS if kind.variant.is_dpm else DDM_OUTPUTS
        arch = Architecture(tau + 1, tuple(hidden_sizes), recurrent_layers, output)
        params = init_params(arch, np.random.default_rng(seed))
        return cls(arch, params, kind, bounds, normalizer)

    @property
    def is_dpm(self) -> bool:
        return self.kind.variant.is_dpm

    def with_params(self, params: NetworkParams) -> "CoefficientNetwork":
        return CoefficientNetwork(self.arch, params, self.kind, self.bounds, self.normalizer, self.squash)

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def _check_features(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim == 2:
            features = features[None]
        if features.shape[1:] != (self.arch.input_steps, N_FEATURES):
            raise DimensionError("Window shape does not match the network input",
                                 (self.arch.input_steps, N_FEATURES), features.shape[1:])
        return features

    def pre_activations(self, features: np.ndarray, tape: Optional[Tape] = None,
                        params: Optional[NetworkParams] = None) -> np.ndarray:
        """Head output z (N, outputs) for raw (N, tau+1, 7) windows."""
        params = params or self.params
        features = self._check_features(features)
        x = self.normalizer.apply(features)
        n = x.shape[0]

        if self.arch.recurrent_layers:
            seq = x
            for layer in range(self.arch.recurrent_layers):
                names = [f"gru{layer}.{p}" for p in ("w_x", "w_h", "b_x", "b_h")]
                w_x, w_h, b_x, b_h = (params[nm] for nm in names)
                out, caches = _gru_forward(seq, w_x, w_h, b_x, b_h)
                if tape is not None:
                    tape.record(self._gru_entry(seq, caches, w_x, w_h, names))
                seq = out
            h = seq[:, -1, :]
            if tape is not None:
                steps = seq.shape[1]
                tape.record(lambda g, t, steps=steps: _last_step_backward(g, steps))
        else:
            h = x.reshape(n, -1)
            if tape is not None:
                shape = x.shape
                tape.record(lambda g, t, shape=shape: g.reshape(shape))

        for layer in range(len(self.arch.hidden_sizes)):
            w, b = params[f"dense{layer}.weight"], params[f"dense{layer}.bias"]
            a = h @ w + b
            out = mish(a)
            if tape is not None:
                tape.record(self._dense_entry(h, a, w, f"dense{layer}", activation=True))
            h = out

        w, b = params["head.weight"], params["head.bias"]
        z = h @ w + b
        if tape is not None:
            tape.record(self._dense_entry(h, None, w, "head", activation=False))
        if not np.all(np.isfinite(z)):
            raise SimulationError("Non-finite network activations", code="NON_FINITE_ACTIVATION")
        return z

    @staticmethod
    def _dense_entry(h, a, w, prefix: str, activation: bool):
        def backward(g, tape: Tape):
            if activation:
                g = g * mish_grad(a)
            tape.accumulate(f"{prefix}.weight", h.T @ g)
            tape.accumulate(f"{prefix}.bias", g.sum(axis=0))
            return g @ w.T
        return backward

    @staticmethod
    def _gru_entry(seq, caches, w_x, w_h, names):
        def backward(g, tape: Tape):
            g_x, g_wx, g_wh, g_bx, g_bh = _gru_backward(g, seq, caches, w_x, w_h)
            for name, grad in zip(names, (g_wx, g_wh, g_bx, g_bh)):
                tape.accumulate(name, grad)
            return g_x
        return backward

    def _to_estimate(self, z: np.ndarray, tape: Optional[Tape] = None) -> Estimate:
        if not self.is_dpm:
            coeffs = physics_guard(z, self.bounds, self.squash)
            if not np.all(self.bounds.contains(coeffs)):
                raise SimulationError("Guarded coefficients left their bounds", code="GUARD_CONTAINMENT")
            if tape is not None:
                tape.record(lambda g, t: physics_guard_grad(z, self.bounds, g, self.squash))
            return Estimate(coeffs)

        n = z.shape[0]
        coeffs = np.zeros((n, DDM_OUTPUTS))
        coeffs[:, PACEJKA_INDEX] = z[:, :len(PACEJKA_NAMES)]
        coeffs[:, IZ_INDEX] = self.kind.fixed_iz
        f_rx = z[:, -1].copy()
        if tape is not None:
            def backward(g, t):
                g_coeffs, g_f_rx = g
                return np.concatenate([g_coeffs[:, PACEJKA_INDEX], g_f_rx[:, None]], axis=1)
            tape.record(backward)
        return Estimate(coeffs, f_rx)

    def forward(self, features: np.ndarray) -> Estimate:
        """Coefficient estimates for (N, tau+1, 7) or a single (tau+1, 7) window."""
        return self._to_estimate(self.pre_activations(features))

    def estimate_coefficients(self, features: np.ndarray) -> UnknownCoefficients:
        """Typed DDM coefficients for one window."""
        est = self.forward(features)
        return UnknownCoefficients.from_array(est.coeffs[0])

    # ------------------------------------------------------------------
    # Loss and gradients
    # ------------------------------------------------------------------

    def _step(self, windows: WindowSet, model: SingleTrackModel, params: Optional[NetworkParams] = None):
        est = self._to_estimate(self.pre_activations(windows.features, params=params))
        next_state, _ = model.step(windows.states, windows.controls, est.coeffs, est.f_rx)
        return next_state, est

    def predict(self, windows: WindowSet, model: SingleTrackModel,
                params: Optional[NetworkParams] = None) -> np.ndarray:
        """One-step predictions (N, 5) for every window."""
        return self._step(windows, model, params)[0]

    def batch_loss(self, windows: WindowSet, model: SingleTrackModel,
                   params: Optional[NetworkParams] = None) -> float:
        return loss(self.predict(windows, model, params), windows.next_states)

    def objective(self, windows: WindowSet, model: SingleTrackModel, params: Optional[NetworkParams] = None,
                  consistency_weight: float = 0.0) -> float:
        """Training objective: one-step loss plus the weighted coefficient spread (DDM only)."""
        predicted, est = self._step(windows, model, params)
        value = loss(predicted, windows.next_states)
        if consistency_weight > 0 and not self.is_dpm:
            value += consistency_weight * coefficient_spread(est.coeffs, self.bounds)[0]
        return value

    def backward(self, windows: WindowSet, model: SingleTrackModel, params: Optional[NetworkParams] = None,
                 consistency_weight: float = 0.0) -> Tuple[float, Dict[str, np.ndarray]]:
        """
        Training objective and its gradient w.r.t. every network parameter.

        With ``consistency_weight`` 0 the objective is the one-step loss.

        Returns:
            Tuple of (objective, gradients keyed like NetworkParams)
        """
        params = params or self.params
        tape = Tape()
        z = self.pre_activations(windows.features, tape, params)
        est = self._to_estimate(z, tape)
        predicted, cache = model.step(windows.states, windows.controls, est.coeffs, est.f_rx)
        diff = predicted[:, :3] - windows.next_states[:, :3]
        value = float(np.mean(diff * diff))
        seed = np.zeros_like(predicted)
        seed[:, :3] = 2.0 * diff / diff.size
        _, _, g_coeffs, g_f_rx = model.step_vjp(cache, seed)
        if consistency_weight > 0 and not self.is_dpm:
            spread, g_spread = coefficient_spread(est.coeffs, self.bounds)
            value += consistency_weight * spread
            g_coeffs = g_coeffs + consistency_weight * g_spread
        tape.backward((g_coeffs, g_f_rx) if self.is_dpm else g_coeffs)
        grads = {name: tape.grads.get(name, np.zeros_like(params[name])) for name in params}
        return value, grads


def coefficient_spread(coeffs: np.ndarray, bounds: CoefficientBounds) -> Tuple[float, np.ndarray]:
    """
    Mean batch variance of the coefficients rescaled to [0, 1] by their
    bounds, and its gradient w.r.t. ``coeffs``.

    Window-varying coefficients can zero the one-step loss away from the
    simulator values; a batch-constant set cannot.
    """
    coeffs = np.atleast_2d(coeffs)
    unit = (coeffs - bounds.lower) / bounds.span
    dev = unit - unit.mean(axis=0)
    return float(np.mean(dev * dev)), 2.0 * dev / dev.size / bounds.span


def _last_step_backward(g: np.ndarray, steps: int) -> np.ndarray:
    g_seq = np.zeros((g.shape[0], steps, g.shape[1]))
    g_seq[:, -1, :] = g
    return g_seq
