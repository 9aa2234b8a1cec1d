"""
Telemetry datasets and their CSV interchange format.

Columns (in order): t,x,y,theta,vx,vy,omega,throttle,steer,dthrottle,dsteer,session
Values are written with 17 significant digits so a save/load round trip is exact.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.services.windows import WindowSet, build_windows, split_windows
from utils.constants import CSV_COLUMNS
from utils.errors import DataError, NaNFieldError, SchemaError, TimestampError, ValidationError

logger = logging.getLogger(__name__)

TIMESTAMP_TOLERANCE = 1e-6
POSE_COLUMNS = ["x", "y", "theta"]
STATE_COLUMNS = ["vx", "vy", "omega", "throttle", "steer"]
CONTROL_COLUMNS = ["dthrottle", "dsteer"]


@dataclass(frozen=True)
class Dataset:
    """Ordered telemetry rows plus the sampling rate they were logged at."""
    frame: pd.DataFrame
    rate_hz: float

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValidationError("rate_hz must be positive", field="rate_hz")
        if list(self.frame.columns) != list(CSV_COLUMNS):
            raise SchemaError(f"Dataset columns must be {','.join(CSV_COLUMNS)}",
                              details={'columns': list(self.frame.columns)})

    @classmethod
    def from_arrays(cls, t, poses, states, controls, sessions, rate_hz: float) -> "Dataset":
        frame = pd.DataFrame(np.column_stack([t, poses, states, controls]), columns=list(CSV_COLUMNS[:-1]))
        frame["session"] = np.asarray(sessions, dtype=np.int64)
        dataset = cls(frame.reset_index(drop=True), float(rate_hz))
        dataset.validate()
        return dataset

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def ts(self) -> float:
        return 1.0 / self.rate_hz

    @property
    def t(self) -> np.ndarray:
        return self.frame["t"].to_numpy(dtype=float)

    @property
    def poses(self) -> np.ndarray:
        return self.frame[POSE_COLUMNS].to_numpy(dtype=float)

    @property
    def states(self) -> np.ndarray:
        return self.frame[STATE_COLUMNS].to_numpy(dtype=float)

    @property
    def controls(self) -> np.ndarray:
        return self.frame[CONTROL_COLUMNS].to_numpy(dtype=float)

    @property
    def sessions(self) -> np.ndarray:
        return self.frame["session"].to_numpy()

    def validate(self, file_path: Optional[str] = None) -> None:
        """
        Check finiteness, session layout and timestamp spacing.

        Raises:
            NaNFieldError: First non-finite cell, by data row (0-based) and column.
            SchemaError: If session ids do not form contiguous blocks.
            TimestampError: If timestamps decrease or are unevenly spaced within a session.
        """
        values = self.frame[list(CSV_COLUMNS)].to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise NaNFieldError(int(row), CSV_COLUMNS[col], file_path)

        sessions = self.sessions
        changes = np.flatnonzero(sessions[1:] != sessions[:-1]) + 1
        block_ids = sessions[np.concatenate([[0], changes])] if len(sessions) else sessions
        if len(np.unique(block_ids)) != len(block_ids):
            raise SchemaError("Session ids must form contiguous blocks", file_path)

        t = self.t
        same_session = sessions[1:] == sessions[:-1]
        dt = np.diff(t)
        backwards = np.flatnonzero(same_session & ~(dt > 0))
        if backwards.size:
            row = int(backwards[0] + 1)
            raise TimestampError(f"Timestamps not strictly increasing at row {row}", row, file_path)
        irregular = np.flatnonzero(same_session & (np.abs(dt - self.ts) > TIMESTAMP_TOLERANCE))
        if irregular.size:
            row = int(irregular[0] + 1)
            raise TimestampError(
                f"Timestamp spacing {dt[irregular[0]]:.9g} s at row {row} differs from {self.ts:.9g} s",
                row, file_path)

    def excerpt(self, rows: int, start: Optional[int] = None) -> "Dataset":
        """Contiguous slice of ``rows`` rows, centred in the recording by default."""
        if rows > len(self):
            raise DataError(f"Requested {rows} rows from a dataset of {len(self)}")
        if start is None:
            start = (len(self) - rows) // 2
        frame = self.frame.iloc[start:start + rows].reset_index(drop=True)
        return Dataset(frame, self.rate_hz)

    def windows(self, tau: int) -> WindowSet:
        return build_windows(self.states, self.controls, self.sessions, tau)


def save_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write the dataset in the interchange CSV format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = dataset.frame.copy()
    frame["session"] = frame["session"].astype(np.int64)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    logger.info("Saved %d rows to %s", len(frame), path)
    return path


def load_csv(path: Union[str, Path], rate_hz: Optional[float] = None,
             throttle_percent: bool = False) -> Dataset:
    """
    Read an interchange CSV.

    Args:
        path: CSV file
        rate_hz: Sampling rate; inferred from the median timestamp step when omitted
        throttle_percent: Throttle columns are in percent and are converted to fractions

    Raises:
        SchemaError: Header differs from the documented columns.
        NaNFieldError: A cell is empty or non-finite.
        TimestampError: Timestamps are non-monotone or irregular.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Telemetry file not found: {path}", str(path))
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SchemaError(f"Could not parse telemetry CSV: {e}", str(path))
    if list(frame.columns) != list(CSV_COLUMNS):
        raise SchemaError(f"Expected header {','.join(CSV_COLUMNS)}, got {','.join(map(str, frame.columns))}",
                          str(path))
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=float))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NaNFieldError(int(row), CSV_COLUMNS[col], str(path))
    if throttle_percent:
        numeric[["throttle", "dthrottle"]] = numeric[["throttle", "dthrottle"]] / 100.0
    numeric["session"] = numeric["session"].astype(np.int64)

    if rate_hz is None:
        rate_hz = _infer_rate(numeric, str(path))
    dataset = Dataset(numeric, float(rate_hz))
    dataset.validate(str(path))
    logger.info("Loaded %d rows at %.6g Hz from %s", len(dataset), dataset.rate_hz, path)
    return dataset


def _infer_rate(frame: pd.DataFrame, file_path: str) -> float:
    same = frame["session"].to_numpy()[1:] == frame["session"].to_numpy()[:-1]
    dt = np.diff(frame["t"].to_numpy(dtype=float))[same]
    positive = dt[dt > 0]
    if positive.size == 0:
        raise TimestampError("Cannot infer the sampling rate: no increasing timestamps", None, file_path)
    return float(1.0 / np.median(positive))


def split(dataset: Dataset, validation_fraction: float, seed: int, tau: int) -> Tuple[WindowSet, WindowSet]:
    """Random train/validation split at the window level."""
    return split_windows(dataset.windows(tau), validation_fraction, seed)
