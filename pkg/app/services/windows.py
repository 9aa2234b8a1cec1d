"""
History windows: the network's view of a dataset.

A window ending at row t holds rows t-tau .. t (state and control per row,
oldest first) and is paired with the observed state at row t+1. Windows never
cross a session boundary.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from app.models import ControlInput, VelocityState
from utils.errors import ValidationError, WindowingError


@dataclass(frozen=True)
class HistoryWindow:
    """tau+1 consecutive (state, control) pairs, oldest first."""
    samples: Tuple[Tuple[VelocityState, ControlInput], ...]
    tau: int

    def __post_init__(self):
        if len(self.samples) != self.tau + 1:
            raise WindowingError(f"History window needs {self.tau + 1} samples, got {len(self.samples)}")

    def features(self) -> np.ndarray:
        """(tau+1, 7) array ordered (vx, vy, omega, throttle, steer, dthrottle, dsteer)."""
        return np.array([np.concatenate([s.as_array(), u.as_array()]) for s, u in self.samples])

    @property
    def state(self) -> VelocityState:
        return self.samples[-1][0]

    @property
    def control(self) -> ControlInput:
        return self.samples[-1][1]


@dataclass(frozen=True)
class WindowSet:
    """A batch of windows with the one-step targets used by the loss."""
    features: np.ndarray  # (N, tau+1, 7)
    states: np.ndarray  # (N, 5) state at the window's last row
    controls: np.ndarray  # (N, 2) control applied at the window's last row
    next_states: np.ndarray  # (N, 5) observed state one row later
    rows: np.ndarray  # (N,) dataset row of each window's last sample
    tau: int

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def subset(self, index: Sequence[int]) -> "WindowSet":
        index = np.asarray(index, dtype=int)
        return WindowSet(self.features[index], self.states[index], self.controls[index],
                         self.next_states[index], self.rows[index], self.tau)


def window_end_rows(sessions: np.ndarray, tau: int, lookahead: int = 1) -> np.ndarray:
    """
    Rows t such that rows t-tau .. t+lookahead share one session.

    Args:
        sessions: (N,) session id per row
        tau: history length
        lookahead: rows needed after t (1 for one-step targets)
    """
    if tau < 0:
        raise ValidationError("tau must be non-negative", field="train.tau")
    sessions = np.asarray(sessions)
    n = sessions.shape[0]
    span = tau + lookahead
    if n <= span:
        return np.zeros(0, dtype=int)
    starts = np.arange(0, n - span)
    same = sessions[starts] == sessions[starts + span]
    # sessions are contiguous blocks, so equal ends imply no boundary in between
    return (starts[same] + tau).astype(int)


def build_windows(states: np.ndarray, controls: np.ndarray, sessions: np.ndarray, tau: int,
                  rows: np.ndarray = None) -> WindowSet:
    """Assemble windows for the given end rows (default: every valid row)."""
    if rows is None:
        rows = window_end_rows(sessions, tau)
    rows = np.asarray(rows, dtype=int)
    if rows.size == 0:
        raise WindowingError(f"No complete windows of length {tau + 1} in {len(states)} rows",
                             {"rows": int(len(states)), "tau": tau})
    per_row = np.concatenate([states, controls], axis=1)
    offsets = np.arange(-tau, 1)
    features = per_row[rows[:, None] + offsets[None, :]]
    return WindowSet(features, states[rows], controls[rows], states[rows + 1], rows, tau)


def split_windows(windows: WindowSet, validation_fraction: float, seed: int) -> Tuple[WindowSet, WindowSet]:
    """
    Random split at the window level.

    Raises:
        ValidationError: If the fraction is outside (0, 1).
        WindowingError: If either side would be empty.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValidationError("validation_fraction must lie in (0, 1)", field="train.validation_fraction")
    n = len(windows)
    n_val = int(round(validation_fraction * n))
    if n_val < 1 or n - n_val < 1:
        raise WindowingError(f"{n} windows cannot be split with fraction {validation_fraction}",
                             {"windows": n})
    order = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return windows.subset(train_idx), windows.subset(val_idx)
