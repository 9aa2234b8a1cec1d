"""
Application-wide path constants and configuration values.
Centralized location for file system paths, simulator constants and magic numbers.
"""
from pathlib import Path

# Base directories
BASE_DIR = Path(__file__).parent.parent
RUNS_DIR = BASE_DIR / "runs"
DATA_DIR = RUNS_DIR / "data"
CHECKPOINTS_DIR = RUNS_DIR / "checkpoints"
REPORTS_DIR = RUNS_DIR / "reports"

DEFAULT_CONFIG_FILE = BASE_DIR / "config" / "run_config.json"
CONFIG_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1

# Coefficient ordering shared by bounds vectors, guard outputs and checkpoints
COEFFICIENT_NAMES = (
    "B_f", "C_f", "D_f", "E_f", "G_f", "K_f",
    "B_r", "C_r", "D_r", "E_r", "G_r", "K_r",
    "C_m1", "C_m2", "C_r0", "C_d",
    "I_z",
)
PACEJKA_NAMES = ("B_f", "C_f", "D_f", "E_f", "B_r", "C_r", "D_r", "E_r")
DRIVETRAIN_NAMES = ("C_m1", "C_m2", "C_r0", "C_d")
OFFSET_NAMES = ("G_f", "K_f", "G_r", "K_r")

# Per-timestep network input features, oldest sample first
FEATURE_NAMES = ("vx", "vy", "omega", "throttle", "steer", "dthrottle", "dsteer")
STATE_NAMES = ("vx", "vy", "omega", "throttle", "steer")
LOSS_CHANNELS = ("vx", "vy", "omega")

# Telemetry interchange schema
CSV_COLUMNS = (
    "t", "x", "y", "theta", "vx", "vy", "omega",
    "throttle", "steer", "dthrottle", "dsteer", "session",
)

# 1:43 scale simulator: known coefficients
SIM_MASS = 0.041  # kg
SIM_L_F = 0.029  # m
SIM_L_R = 0.033  # m

# 1:43 scale simulator: ground-truth unknown coefficients
SIM_GROUND_TRUTH = {
    "B_f": 5.579, "C_f": 1.200, "D_f": 0.192, "E_f": -0.083, "G_f": 0.0, "K_f": 0.0,
    "B_r": 5.385, "C_r": 1.269, "D_r": 0.173, "E_r": -0.019, "G_r": 0.0, "K_r": 0.0,
    "C_m1": 0.287, "C_m2": 0.0545, "C_r0": 0.0518, "C_d": 0.00035,
    "I_z": 2.78e-5,
}

# Actuator limits and simulator floor
STEER_MAX = 0.35  # rad
DTHROTTLE_MAX = 0.05  # per step
DSTEER_MAX = 0.02  # rad per step
VX_FLOOR = 0.05  # m/s
SIM_RATE_HZ = 50.0

# Nominal ranges shared by both regimes (Pacejka literature ranges)
PACEJKA_B_RANGE = (5.0, 30.0)
PACEJKA_C_RANGE = (0.5, 2.0)
PACEJKA_E_RANGE = (-2.0, 0.0)

# Simulator-scale ranges for entries that are neither halved/doubled nor literature-bound
SIM_D_RANGE = (0.05, 1.0)  # N
SIM_G_RANGE = (-0.05, 0.05)  # rad
SIM_K_RANGE = (-0.05, 0.05)  # N

# Full-scale racecar ranges
REAL_IZ_RANGE = (500.0, 2000.0)
REAL_CD_RANGE = (0.1, 1.0)
REAL_CR0_RANGE = (0.1, 1.4)
REAL_CM1_RANGE = (500.0, 2000.0)
REAL_CM2_RANGE = (1e-6, 1.0)
REAL_D_RANGE = (100.0, 10000.0)
REAL_G_RANGE = (-0.1, 0.1)  # rad
REAL_K_RANGE = (-200.0, 200.0)  # N

# Sampling rates below this are treated as real telemetry by evaluation defaults
REAL_TELEMETRY_RATE_HZ = 40.0
