"""
Coefficient bounds and the Physics Guard.

The guard squashes unbounded network outputs into the nominal coefficient
intervals: out = s(z) * (upper - lower) + lower for a bounded, monotone
squashing function s with range (0, 1).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from app.models import UnknownCoefficients
from utils import constants as C
from utils.constants import COEFFICIENT_NAMES
from utils.errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)

N_COEFFICIENTS = len(COEFFICIENT_NAMES)
HALVE_DOUBLE_NAMES = ("C_m1", "C_m2", "C_r0", "C_d", "I_z")


@dataclass(frozen=True)
class CoefficientBounds:
    """Per-coefficient open intervals, aligned with COEFFICIENT_NAMES."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != (N_COEFFICIENTS,) or upper.shape != (N_COEFFICIENTS,):
            raise DimensionError("Bounds must hold one entry per coefficient",
                                 (N_COEFFICIENTS,), (lower.shape, upper.shape))
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValidationError("Coefficient bounds must be finite", field="bounds")
        bad = [name for name, lo, hi in zip(COEFFICIENT_NAMES, lower, upper) if not lo < hi]
        if bad:
            raise ValidationError(f"Lower bound must be below upper bound for: {', '.join(bad)}",
                                  field=f"bounds.{bad[0]}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return self.lower + 0.5 * self.span

    def interval(self, name: str) -> Tuple[float, float]:
        i = COEFFICIENT_NAMES.index(name)
        return float(self.lower[i]), float(self.upper[i])

    def contains(self, values, strict: bool = True) -> np.ndarray:
        """Element-wise membership test for (..., 17) coefficient arrays."""
        values = np.asarray(values, dtype=float)
        if strict:
            return (values > self.lower) & (values < self.upper)
        return (values >= self.lower) & (values <= self.upper)

    def to_dict(self) -> Dict[str, list]:
        """JSON form keyed by coefficient symbol: {"B_f": [lower, upper], ...}."""
        return {name: [float(lo), float(hi)]
                for name, lo, hi in zip(COEFFICIENT_NAMES, self.lower, self.upper)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Tuple[float, float]]) -> "CoefficientBounds":
        missing = [name for name in COEFFICIENT_NAMES if name not in data]
        if missing:
            raise ValidationError(f"Bounds missing coefficients: {', '.join(missing)}",
                                  field=f"bounds.{missing[0]}")
        return cls(
            np.array([data[name][0] for name in COEFFICIENT_NAMES], dtype=float),
            np.array([data[name][1] for name in COEFFICIENT_NAMES], dtype=float),
        )


class Squash:
    """Bounded monotone squashing function with range (0, 1)."""

    name = "base"

    def value(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SigmoidSquash(Squash):
    name = "sigmoid"

    def value(self, z):
        # tanh form avoids overflow of exp(-z) for large negative z
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))

    def derivative(self, z):
        s = self.value(z)
        return s * (1.0 - s)


class HalfTanhSquash(Squash):
    """(tanh(z) + 1) / 2: a steeper alternative with the same range."""
    name = "half-tanh"

    def value(self, z):
        return 0.5 * (1.0 + np.tanh(np.asarray(z, dtype=float)))

    def derivative(self, z):
        t = np.tanh(np.asarray(z, dtype=float))
        return 0.5 * (1.0 - t * t)


SQUASHES: Dict[str, Squash] = {s.name: s for s in (SigmoidSquash(), HalfTanhSquash())}


def get_squash(name: str) -> Squash:
    try:
        return SQUASHES[name]
    except KeyError:
        raise ValidationError(f"Unknown guard activation '{name}'", field="bounds.activation")


def _check_width(z: np.ndarray) -> None:
    if z.shape[-1:] != (N_COEFFICIENTS,):
        raise DimensionError("Guard input must end in one entry per coefficient",
                             (N_COEFFICIENTS,), z.shape)


def physics_guard(z, bounds: CoefficientBounds, squash: Optional[Squash] = None) -> np.ndarray:
    """
    Map unbounded pre-activations (..., 17) strictly inside the bounds.

    Outputs that round onto a bound are moved one ulp inside it.

    Raises:
        DimensionError: If the last axis is not 17 wide.
    """
    squash = squash or SQUASHES["sigmoid"]
    z = np.asarray(z, dtype=float)
    _check_width(z)
    out = squash.value(z) * bounds.span + bounds.lower
    inner_lower = np.nextafter(bounds.lower, bounds.upper)
    inner_upper = np.nextafter(bounds.upper, bounds.lower)
    return np.clip(out, inner_lower, inner_upper)


def physics_guard_grad(z, bounds: CoefficientBounds, upstream, squash: Optional[Squash] = None) -> np.ndarray:
    """Backward pass of the guard: upstream * s'(z) * (upper - lower)."""
    squash = squash or SQUASHES["sigmoid"]
    z = np.asarray(z, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    _check_width(z)
    if upstream.shape != z.shape:
        raise DimensionError("Upstream gradient must match guard input", z.shape, upstream.shape)
    return upstream * squash.derivative(z) * bounds.span


def guard_coefficients(z, bounds: CoefficientBounds) -> UnknownCoefficients:
    """Single-vector convenience returning the typed coefficient set."""
    return UnknownCoefficients.from_array(physics_guard(z, bounds))


def sim_nominal_bounds(ground_truth: UnknownCoefficients,
                       ranges: Optional[Mapping[str, Tuple[float, float]]] = None) -> CoefficientBounds:
    """
    Nominal ranges for the simulator regime.

    Drivetrain coefficients and I_z span [0.5 v, 2 v] around the ground truth;
    Pacejka B, C, E take literature ranges; D and the G/K offsets take the
    simulator-scale ranges (overridable through ``ranges``).

    Raises:
        ValidationError: If a halve/double entry is not strictly positive.
    """
    values = ground_truth.to_dict()
    table = {
        "B_f": C.PACEJKA_B_RANGE, "B_r": C.PACEJKA_B_RANGE,
        "C_f": C.PACEJKA_C_RANGE, "C_r": C.PACEJKA_C_RANGE,
        "E_f": C.PACEJKA_E_RANGE, "E_r": C.PACEJKA_E_RANGE,
        "D_f": C.SIM_D_RANGE, "D_r": C.SIM_D_RANGE,
        "G_f": C.SIM_G_RANGE, "G_r": C.SIM_G_RANGE,
        "K_f": C.SIM_K_RANGE, "K_r": C.SIM_K_RANGE,
    }
    for name in HALVE_DOUBLE_NAMES:
        if not values[name] > 0:
            raise ValidationError(f"Ground-truth {name} must be positive to halve/double it, got {values[name]}",
                                  field=f"ground_truth.{name}")
        table[name] = (0.5 * values[name], 2.0 * values[name])
    if ranges:
        table.update({name: tuple(pair) for name, pair in ranges.items()})
    bounds = CoefficientBounds.from_dict(table)

    outside = [name for name, inside in zip(COEFFICIENT_NAMES, bounds.contains(ground_truth.as_array()))
               if not inside]
    if outside:
        logger.warning("Ground truth lies outside its nominal range for: %s", ", ".join(outside))
    return bounds


def real_nominal_bounds(ranges: Optional[Mapping[str, Tuple[float, float]]] = None) -> CoefficientBounds:
    """Nominal ranges for a full-scale racecar."""
    table = {
        "B_f": C.PACEJKA_B_RANGE, "B_r": C.PACEJKA_B_RANGE,
        "C_f": C.PACEJKA_C_RANGE, "C_r": C.PACEJKA_C_RANGE,
        "D_f": C.REAL_D_RANGE, "D_r": C.REAL_D_RANGE,
        "E_f": C.PACEJKA_E_RANGE, "E_r": C.PACEJKA_E_RANGE,
        "G_f": C.REAL_G_RANGE, "G_r": C.REAL_G_RANGE,
        "K_f": C.REAL_K_RANGE, "K_r": C.REAL_K_RANGE,
        "C_m1": C.REAL_CM1_RANGE, "C_m2": C.REAL_CM2_RANGE,
        "C_r0": C.REAL_CR0_RANGE, "C_d": C.REAL_CD_RANGE,
        "I_z": C.REAL_IZ_RANGE,
    }
    if ranges:
        table.update({name: tuple(pair) for name, pair in ranges.items()})
    return CoefficientBounds.from_dict(table)
