"""
Run-configuration schemas using Pydantic.
Provides type-safe validation for the JSON run configuration and CLI overrides.
"""
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils import constants as C
from utils.errors import ValidationError as AppValidationError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# ========== Vehicle ==========

class DynamicsConfig(_Section):
    """Known coefficients, sample rate, actuator limits and simulator ground truth"""
    m: float = Field(default=C.SIM_MASS, gt=0, description="Vehicle mass (kg)")
    l_f: float = Field(default=C.SIM_L_F, gt=0, description="CG to front axle (m)")
    l_r: float = Field(default=C.SIM_L_R, gt=0, description="CG to rear axle (m)")
    rate_hz: float = Field(default=C.SIM_RATE_HZ, gt=0, description="Simulation and control rate")
    steer_max: float = Field(default=C.STEER_MAX, gt=0)
    dthrottle_max: float = Field(default=C.DTHROTTLE_MAX, gt=0)
    dsteer_max: float = Field(default=C.DSTEER_MAX, gt=0)
    vx_floor: float = Field(default=C.VX_FLOOR, gt=0, description="Minimum v_x for slip angles")
    ground_truth: Dict[str, float] = Field(default_factory=lambda: dict(C.SIM_GROUND_TRUTH))

    @field_validator('ground_truth')
    @classmethod
    def validate_ground_truth(cls, v):
        missing = [name for name in C.COEFFICIENT_NAMES if name not in v]
        if missing:
            raise ValueError(f'Ground truth missing coefficients: {", ".join(missing)}')
        unknown = [name for name in v if name not in C.COEFFICIENT_NAMES]
        if unknown:
            raise ValueError(f'Unknown coefficients: {", ".join(unknown)}')
        if not all(np.isfinite(value) for value in v.values()):
            raise ValueError('Ground-truth coefficients must be finite')
        return v

    @property
    def ts(self) -> float:
        return 1.0 / self.rate_hz


class BoundsConfig(_Section):
    """Nominal coefficient ranges fed to the Physics Guard"""
    regime: Literal["sim", "real"] = Field(default="sim", description="Which default range table to start from")
    activation: Literal["sigmoid", "half-tanh"] = "sigmoid"
    overrides: Dict[str, Tuple[float, float]] = Field(default_factory=dict,
                                                      description="Per-coefficient [lower, upper] replacements")

    @field_validator('overrides')
    @classmethod
    def validate_overrides(cls, v):
        for name, (lower, upper) in v.items():
            if name not in C.COEFFICIENT_NAMES:
                raise ValueError(f'Unknown coefficient: {name}')
            if not lower < upper:
                raise ValueError(f'{name}: lower bound {lower} must be below upper bound {upper}')
        return v


# ========== Training ==========

class TrainConfig(_Section):
    """Network architecture and optimiser settings"""
    model: Literal["ddm", "dpm-gt", "dpm-plus20", "dpm-minus20"] = "ddm"
    learning_rate: float = Field(default=2e-3, gt=0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=300, ge=0)
    tau: int = Field(default=4, ge=0, description="History length in steps")
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64], min_length=1)
    recurrent_layers: int = Field(default=0, ge=0, le=4)
    seed: Optional[int] = Field(default=None, description="Falls back to the run seed")
    validation_fraction: float = Field(default=0.2, gt=0, lt=1)
    consistency_weight: float = Field(default=1.0, ge=0,
                                      description="Weight on the batch spread of guarded coefficients (DDM)")
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    log_every: int = Field(default=25, ge=1)

    @field_validator('hidden_sizes')
    @classmethod
    def validate_hidden_sizes(cls, v):
        if any(size < 1 for size in v):
            raise ValueError('Hidden layer sizes must be positive')
        return v


class TuneConfig(_Section):
    """Random-search space and trial budget"""
    budget: int = Field(default=20, ge=1)
    epochs: int = Field(default=60, ge=0, description="Epochs per trial")
    max_concurrent_trials: int = Field(default=4, ge=1)
    learning_rate_range: Tuple[float, float] = (1e-4, 1e-2)
    batch_sizes: List[int] = Field(default_factory=lambda: [32, 64, 128], min_length=1)
    hidden_layers_range: Tuple[int, int] = (1, 3)
    widths: List[int] = Field(default_factory=lambda: [32, 64, 128, 256], min_length=1)
    recurrent_layers: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    taus: List[int] = Field(default_factory=lambda: [1, 2, 4, 8], min_length=1)

    @model_validator(mode='after')
    def validate_ranges(self):
        lo, hi = self.learning_rate_range
        if not 0 < lo <= hi:
            raise ValueError('learning_rate_range must satisfy 0 < low <= high')
        lo, hi = self.hidden_layers_range
        if not 1 <= lo <= hi:
            raise ValueError('hidden_layers_range must satisfy 1 <= low <= high')
        return self


# ========== Control ==========

def _is_square2(matrix) -> bool:
    return len(matrix) == 2 and all(len(row) == 2 for row in matrix)


class MpcConfig(_Section):
    """Raceline-tracking MPC weights, horizon and solver settings"""
    horizon: int = Field(default=15, ge=1)
    q: List[List[float]] = Field(default_factory=lambda: [[10.0, 0.0], [0.0, 10.0]],
                                 description="Position tracking weight (PSD)")
    r: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0], [0.0, 100.0]],
                                 description="Actuation weight on (dT, d_delta) (PD)")
    iterations: int = Field(default=50, ge=1)
    step_size: float = Field(default=20.0, gt=0, description="Largest step on rate-normalised controls")
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    max_backtracks: int = Field(default=16, ge=0)
    tolerance: float = Field(default=1e-10, ge=0, description="Stop when the cost improves less than this")
    preview_speed_min: float = Field(default=1.2, gt=0)
    preview_speed_max: float = Field(default=2.0, gt=0)

    @field_validator('q')
    @classmethod
    def validate_q(cls, v):
        if not _is_square2(v):
            raise ValueError('Q must be 2x2')
        matrix = np.array(v, dtype=float)
        if not np.allclose(matrix, matrix.T) or np.linalg.eigvalsh(matrix).min() < 0:
            raise ValueError('Q must be symmetric positive semidefinite')
        return v

    @field_validator('r')
    @classmethod
    def validate_r(cls, v):
        if not _is_square2(v):
            raise ValueError('R must be 2x2')
        matrix = np.array(v, dtype=float)
        if not np.allclose(matrix, matrix.T) or np.linalg.eigvalsh(matrix).min() <= 0:
            raise ValueError('R must be symmetric positive definite')
        return v

    @model_validator(mode='after')
    def validate_preview(self):
        if self.preview_speed_min > self.preview_speed_max:
            raise ValueError('preview_speed_min must not exceed preview_speed_max')
        return self


class PidConfig(_Section):
    """Throttle PID used by the DPM baselines"""
    kp: float = Field(default=0.4, ge=0)
    ki: float = Field(default=0.05, ge=0)
    kd: float = Field(default=0.0, ge=0)
    bias: float = Field(default=0.3, ge=0, le=1, description="Feed-forward throttle")
    target_speed: float = Field(default=1.2, gt=0)


class RaceConfig(_Section):
    """Closed-loop race settings"""
    track: Literal["track1", "track2"] = "track2"
    laps: int = Field(default=1, ge=1)
    initial_vx: float = Field(default=0.1, gt=0)
    initial_throttle: float = Field(default=0.3, ge=0, le=1)
    launch_speed: float = Field(default=0.8, ge=0, description="Steering is held below this v_x")
    max_lap_time_s: float = Field(default=30.0, gt=0)
    raceline_path: Optional[str] = None
    track_path: Optional[str] = Field(default=None, description="Track JSON file used instead of the built-in track")
    pid: PidConfig = Field(default_factory=PidConfig)


# ========== Data ==========

class DatagenConfig(_Section):
    """Pure-pursuit data generation"""
    train_track: Literal["track1", "track2"] = "track1"
    test_track: Literal["track1", "track2"] = "track2"
    laps: int = Field(default=20, ge=1)
    samples: Optional[int] = Field(default=1000, ge=2, description="Rows kept per set; null keeps all")
    initial_vx: float = Field(default=1.0, gt=0)
    lookahead_gain: float = Field(default=0.3, ge=0, description="Seconds of lookahead per m/s")
    lookahead_base: float = Field(default=0.1, gt=0, description="Minimum lookahead (m)")
    v_max: float = Field(default=2.0, gt=0)
    v_min: float = Field(default=1.1, gt=0)
    a_lat_max: float = Field(default=3.0, gt=0)
    speed_gain: float = Field(default=0.5, ge=0, description="Throttle per m/s of speed error")
    throttle_bias: float = Field(default=0.25, ge=0, le=1)
    speed_jitter: float = Field(default=0.1, ge=0, lt=1, description="Per-lap target-speed scatter")
    raceline_path: Optional[str] = None
    train_track_path: Optional[str] = Field(default=None, description="Track JSON file replacing train_track")
    test_track_path: Optional[str] = Field(default=None, description="Track JSON file replacing test_track")

    @model_validator(mode='after')
    def validate_speeds(self):
        if self.v_min > self.v_max:
            raise ValueError('v_min must not exceed v_max')
        return self


class EvalConfig(_Section):
    """Open-loop evaluation settings"""
    horizon_ms_sim: float = Field(default=300.0, gt=0)
    horizon_ms_real: float = Field(default=600.0, gt=0)
    per_window_csv: bool = False


class PathsConfig(_Section):
    """Artefact locations, relative paths resolve against the working directory"""
    data_dir: str = str(C.DATA_DIR)
    checkpoints_dir: str = str(C.CHECKPOINTS_DIR)
    reports_dir: str = str(C.REPORTS_DIR)
    train_csv: str = "train.csv"
    test_csv: str = "test.csv"


class RunConfig(_Section):
    """Root of the JSON run configuration"""
    schema_version: int = C.CONFIG_SCHEMA_VERSION
    seed: int = 0
    paths: PathsConfig = Field(default_factory=PathsConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    bounds: BoundsConfig = Field(default_factory=BoundsConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    tune: TuneConfig = Field(default_factory=TuneConfig)
    mpc: MpcConfig = Field(default_factory=MpcConfig)
    datagen: DatagenConfig = Field(default_factory=DatagenConfig)
    race: RaceConfig = Field(default_factory=RaceConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @field_validator('schema_version')
    @classmethod
    def validate_schema_version(cls, v):
        if v != C.CONFIG_SCHEMA_VERSION:
            raise ValueError(f'Unsupported schema_version {v}; expected {C.CONFIG_SCHEMA_VERSION}')
        return v

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed


# ========== Helper Functions ==========

def get_validation_errors(e: Exception) -> List[Dict[str, Any]]:
    """
    Extract validation errors from Pydantic ValidationError.

    Args:
        e: Pydantic ValidationError

    Returns:
        List of error dictionaries with field and message
    """
    if hasattr(e, 'errors'):
        return [
            {
                'field': '.'.join(str(loc) for loc in err['loc']),
                'message': err['msg'],
                'type': err['type']
            }
            for err in e.errors()
        ]
    return [{'message': str(e)}]


def validate_run_config(data: Dict[str, Any]) -> RunConfig:
    """
    Validate a raw configuration mapping.

    Raises:
        ValidationError: Naming the first offending JSON path; all errors are in details.
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        errors = get_validation_errors(e)
        error_messages = [f"{err['field']}: {err['message']}" for err in errors]
        raise AppValidationError(
            '; '.join(error_messages),
            field=errors[0].get('field') if errors else None,
            details={'errors': errors}
        )
