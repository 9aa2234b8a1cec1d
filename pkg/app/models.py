"""
Common models and enums used across the application.
"""

from dataclasses import dataclass, fields
from enum import Enum
from typing import Dict, Optional

import numpy as np

from utils.constants import COEFFICIENT_NAMES, DSTEER_MAX, DTHROTTLE_MAX, STEER_MAX


class ModelVariant(Enum):
    """Coefficient estimator variants that can be trained, evaluated and raced"""
    DDM = "ddm"
    DPM_GT = "dpm-gt"
    DPM_PLUS20 = "dpm-plus20"
    DPM_MINUS20 = "dpm-minus20"
    GROUND_TRUTH = "ground-truth"  # pseudo-model returning the simulator's coefficients

    @property
    def is_dpm(self) -> bool:
        return self in (ModelVariant.DPM_GT, ModelVariant.DPM_PLUS20, ModelVariant.DPM_MINUS20)

    @property
    def iz_scale(self) -> float:
        """Multiplier applied to the ground-truth I_z for DPM variants."""
        return {
            ModelVariant.DPM_GT: 1.0,
            ModelVariant.DPM_PLUS20: 1.2,
            ModelVariant.DPM_MINUS20: 0.8,
        }.get(self, 1.0)


@dataclass(frozen=True)
class ModelKind:
    """Variant plus the fixed moment of inertia the DPM variants assume."""
    variant: ModelVariant
    fixed_iz: Optional[float] = None

    def __post_init__(self):
        if self.variant.is_dpm and self.fixed_iz is None:
            raise ValueError(f"{self.variant.value} requires a fixed I_z")
        if not self.variant.is_dpm and self.fixed_iz is not None:
            raise ValueError(f"{self.variant.value} does not take a fixed I_z")

    @classmethod
    def for_variant(cls, variant: ModelVariant, ground_truth_iz: float) -> "ModelKind":
        if variant.is_dpm:
            return cls(variant, ground_truth_iz * variant.iz_scale)
        return cls(variant)

    def to_dict(self) -> Dict:
        return {"variant": self.variant.value, "fixed_iz": self.fixed_iz}

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelKind":
        return cls(ModelVariant(data["variant"]), data.get("fixed_iz"))


@dataclass(frozen=True)
class VelocityState:
    """Identification state X = [v_x, v_y, omega, T, delta]."""
    vx: float
    vy: float
    omega: float
    throttle: float
    steer: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega, self.throttle, self.steer], dtype=float)

    @classmethod
    def from_array(cls, values) -> "VelocityState":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class PoseState:
    """Inertial pose; theta is kept in (-pi, pi]."""
    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, values) -> "PoseState":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ControlInput:
    """Per-step throttle and steering changes U = [dT, d_delta]."""
    dthrottle: float
    dsteer: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dthrottle, self.dsteer], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ControlInput":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ActuatorLimits:
    """Steering range and per-step actuator rate limits."""
    steer_max: float = STEER_MAX
    dthrottle_max: float = DTHROTTLE_MAX
    dsteer_max: float = DSTEER_MAX

    def clamp_control(self, control: np.ndarray) -> np.ndarray:
        bound = np.array([self.dthrottle_max, self.dsteer_max])
        return np.clip(control, -bound, bound)


@dataclass(frozen=True)
class KnownCoefficients:
    """Coefficients measurable in a garage: mass and axle distances."""
    m: float
    l_f: float
    l_r: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"Known coefficient {f.name} must be strictly positive")


@dataclass(frozen=True)
class UnknownCoefficients:
    """The 17 coefficients estimated by the network, in COEFFICIENT_NAMES order."""
    B_f: float
    C_f: float
    D_f: float
    E_f: float
    G_f: float
    K_f: float
    B_r: float
    C_r: float
    D_r: float
    E_r: float
    G_r: float
    K_r: float
    C_m1: float
    C_m2: float
    C_r0: float
    C_d: float
    I_z: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in COEFFICIENT_NAMES], dtype=float)

    def to_dict(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in COEFFICIENT_NAMES}

    def replace(self, **changes: float) -> "UnknownCoefficients":
        return UnknownCoefficients(**{**self.to_dict(), **changes})

    @classmethod
    def from_array(cls, values) -> "UnknownCoefficients":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(COEFFICIENT_NAMES),):
            raise ValueError(f"Expected {len(COEFFICIENT_NAMES)} coefficients, got shape {values.shape}")
        return cls(**{name: float(v) for name, v in zip(COEFFICIENT_NAMES, values)})

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "UnknownCoefficients":
        missing = [name for name in COEFFICIENT_NAMES if name not in data]
        if missing:
            raise ValueError(f"Missing coefficients: {', '.join(missing)}")
        return cls(**{name: float(data[name]) for name in COEFFICIENT_NAMES})


@dataclass(frozen=True)
class TireForces:
    """Axle forces and slip angles at one state."""
    F_fy: float
    F_ry: float
    F_rx: float
    alpha_f: float
    alpha_r: float
