"""
Open-loop metrics and coefficient reports.

One-step metrics compare each window's predicted next state with the logged
one. Horizon metrics estimate coefficients once per start window, roll the
velocity and pose updates forward under the logged controls, and measure the
(x, y) displacement from the logged poses.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.models import ModelVariant, UnknownCoefficients
from app.services.coefficients import CoefficientBounds
from app.services.dynamics import SingleTrackModel, advance_pose
from app.services.estimators import CoefficientEstimator
from app.services.race import RaceReport
from app.services.telemetry import Dataset
from app.services.windows import build_windows, window_end_rows
from utils.constants import COEFFICIENT_NAMES, LOSS_CHANNELS, PACEJKA_NAMES, REAL_TELEMETRY_RATE_HZ
from utils.errors import DataError, ValidationError, WindowingError

logger = logging.getLogger(__name__)

HORIZON_TOLERANCE = 1e-9
RATE_TOLERANCE = 1e-9
NA = "NA"


def _check_rate(dataset: Dataset, model: SingleTrackModel) -> None:
    if abs(dataset.ts - model.ts) > RATE_TOLERANCE:
        raise DataError(f"Dataset sample time {dataset.ts:.9g} s does not match the model's {model.ts:.9g} s",
                        details={"dataset_ts": dataset.ts, "model_ts": model.ts})


def default_horizon_ms(rate_hz: float, sim_ms: float, real_ms: float) -> float:
    """Simulator recordings use the short horizon, slower real telemetry the long one."""
    return real_ms if rate_hz < REAL_TELEMETRY_RATE_HZ else sim_ms


def horizon_steps(horizon_s: float, ts: float) -> int:
    """
    Number of samples in the horizon.

    Raises:
        ValidationError: If the horizon is not a positive whole number of samples.
    """
    steps = horizon_s / ts
    n = int(round(steps))
    if n < 1 or abs(steps - n) > HORIZON_TOLERANCE:
        raise ValidationError(f"Horizon of {horizon_s:g} s is not a whole number of {ts:g} s samples",
                              field="eval.horizon_ms", details={"horizon_s": horizon_s, "ts": ts})
    return n


# ========== One-step ==========

def one_step_errors(estimator: CoefficientEstimator, dataset: Dataset, model: SingleTrackModel) -> pd.DataFrame:
    """Signed one-step prediction errors per window (predicted - observed)."""
    _check_rate(dataset, model)
    windows = dataset.windows(estimator.tau)
    predicted = estimator.predict(windows, model)
    diff = predicted[:, :len(LOSS_CHANNELS)] - windows.next_states[:, :len(LOSS_CHANNELS)]
    frame = pd.DataFrame(diff, columns=[f"err_{c}" for c in LOSS_CHANNELS])
    frame.insert(0, "row", windows.rows)
    return frame


def summarize_errors(errors: pd.DataFrame) -> Dict[str, Dict[str, float]]:
    metrics = {}
    for channel in LOSS_CHANNELS:
        e = errors[f"err_{channel}"].to_numpy(dtype=float)
        metrics[channel] = {
            "rmse": float(np.sqrt(np.mean(e * e))),
            "eps_max": float(np.max(np.abs(e))),
        }
    return metrics


def one_step_metrics(estimator: CoefficientEstimator, dataset: Dataset,
                     model: SingleTrackModel) -> Dict[str, Dict[str, float]]:
    """Per-channel RMSE and maximum absolute error of one-step predictions."""
    return summarize_errors(one_step_errors(estimator, dataset, model))


# ========== Horizon ==========

@dataclass
class HorizonResult:
    per_start: pd.DataFrame  # row, ade, fde
    steps: int
    skipped: int
    diverged: int


def horizon_errors(estimator: CoefficientEstimator, dataset: Dataset, horizon_s: float,
                   model: SingleTrackModel) -> HorizonResult:
    """
    Per-start ADE/FDE. Starts whose horizon crosses a session boundary are
    skipped; rollouts that leave the slip-angle domain or turn non-finite are
    dropped and counted as diverged.

    Raises:
        ValidationError: If the horizon is not a whole number of samples.
        WindowingError: If no start has a complete horizon.
    """
    _check_rate(dataset, model)
    n = horizon_steps(horizon_s, dataset.ts)
    tau = estimator.tau
    sessions = dataset.sessions
    rows = window_end_rows(sessions, tau, lookahead=n)
    skipped = len(window_end_rows(sessions, tau, lookahead=1)) - len(rows)
    if skipped:
        logger.warning("Skipped %d horizon starts that cross a session boundary", skipped)
    if rows.size == 0:
        raise WindowingError(f"No start index has a complete {n}-step horizon",
                             {"rows": len(dataset), "tau": tau, "steps": n})

    states_log, controls_log, poses_log = dataset.states, dataset.controls, dataset.poses
    windows = build_windows(states_log, controls_log, sessions, tau, rows)
    est = estimator.estimate(windows.features)
    coeffs, f_rx = est.coeffs, est.f_rx

    state = states_log[rows].copy()
    pose = poses_log[rows].copy()
    alive = np.ones(rows.size, dtype=bool)
    errors = np.zeros((rows.size, n))
    safe = states_log[rows].copy()
    for k in range(n):
        # frozen rollouts are stepped from a harmless placeholder and ignored
        stepped = np.where(alive[:, None], state, safe)
        with np.errstate(all="ignore"):
            next_state, _ = model.step(stepped, controls_log[rows + k], coeffs, f_rx)
            next_pose, _ = advance_pose(pose, stepped, dataset.ts)
        ok = (np.all(np.isfinite(next_state), axis=1) & np.all(np.isfinite(next_pose), axis=1)
              & (next_state[:, 0] >= model.vx_floor))
        alive &= ok
        state = np.where(alive[:, None], next_state, state)
        pose = np.where(alive[:, None], next_pose, pose)
        errors[:, k] = np.hypot(pose[:, 0] - poses_log[rows + k + 1, 0], pose[:, 1] - poses_log[rows + k + 1, 1])

    diverged = int((~alive).sum())
    if diverged:
        logger.warning("%d of %d horizon rollouts diverged and were dropped", diverged, rows.size)
    per_start = pd.DataFrame({
        "row": rows[alive],
        "ade": errors[alive].mean(axis=1),
        "fde": errors[alive, -1],
    })
    return HorizonResult(per_start, n, int(skipped), diverged)


def horizon_rollout_metrics(estimator: CoefficientEstimator, dataset: Dataset, horizon_s: float,
                            model: SingleTrackModel) -> Tuple[float, float]:
    """Mean ADE and FDE (m) over every valid start."""
    result = horizon_errors(estimator, dataset, horizon_s, model)
    if result.per_start.empty:
        return math.inf, math.inf
    return float(result.per_start["ade"].mean()), float(result.per_start["fde"].mean())


# ========== Reports ==========

@dataclass
class OpenLoopReport:
    """One-step and horizon metrics of one estimator on one dataset."""
    model: str
    metrics: Dict[str, Dict[str, float]]
    ade: Optional[float]
    fde: Optional[float]
    horizon_s: float
    horizon_steps: int
    windows: int
    starts: int
    skipped_starts: int
    diverged_starts: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "metrics": {c: dict(v) for c, v in self.metrics.items()},
            "ade": self.ade,
            "fde": self.fde,
            "horizon_s": self.horizon_s,
            "horizon_steps": self.horizon_steps,
            "windows": self.windows,
            "starts": self.starts,
            "skipped_starts": self.skipped_starts,
            "diverged_starts": self.diverged_starts,
        }


def open_loop_report(estimator: CoefficientEstimator, dataset: Dataset, model: SingleTrackModel,
                     horizon_s: float) -> Tuple[OpenLoopReport, pd.DataFrame]:
    """
    Full open-loop evaluation.

    Returns:
        Tuple of (report, per-window error frame for plotting)
    """
    step_errors = one_step_errors(estimator, dataset, model)
    horizon = horizon_errors(estimator, dataset, horizon_s, model)
    per_start = horizon.per_start
    report = OpenLoopReport(
        model=estimator.name,
        metrics=summarize_errors(step_errors),
        ade=float(per_start["ade"].mean()) if len(per_start) else None,
        fde=float(per_start["fde"].mean()) if len(per_start) else None,
        horizon_s=horizon_s,
        horizon_steps=horizon.steps,
        windows=len(step_errors),
        starts=len(per_start),
        skipped_starts=horizon.skipped,
        diverged_starts=horizon.diverged,
    )
    logger.info("%s: RMSE vx %.4g, vy %.4g, omega %.4g; ADE %s, FDE %s", report.model,
                report.metrics["vx"]["rmse"], report.metrics["vy"]["rmse"], report.metrics["omega"]["rmse"],
                report.ade, report.fde)
    per_window = step_errors.merge(per_start, on="row", how="outer").sort_values("row").reset_index(drop=True)
    return report, per_window


def write_per_window_csv(per_window: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    per_window.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote per-window errors to %s", path)
    return path


@dataclass
class CoefficientEntry:
    name: str
    mean: Optional[float]
    lower: float
    upper: float
    ground_truth: Optional[float] = None
    estimated: bool = True

    @property
    def in_range(self) -> Optional[bool]:
        if self.mean is None:
            return None
        return bool(self.lower <= self.mean <= self.upper)

    @property
    def relative_error(self) -> Optional[float]:
        if self.mean is None or self.ground_truth is None or self.ground_truth == 0.0:
            return None
        return abs(self.mean - self.ground_truth) / abs(self.ground_truth)

    @property
    def absolute_error(self) -> Optional[float]:
        if self.mean is None or self.ground_truth is None:
            return None
        return abs(self.mean - self.ground_truth)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "bounds": [self.lower, self.upper],
            "ground_truth": self.ground_truth,
            "estimated": self.estimated,
            "in_range": self.in_range,
            "relative_error": self.relative_error,
            "absolute_error": self.absolute_error,
        }


@dataclass
class CoefficientReport:
    """Mean estimated coefficients over a dataset against bounds and ground truth."""
    model: str
    variant: ModelVariant
    entries: List[CoefficientEntry] = field(default_factory=list)
    mean_f_rx: Optional[float] = None
    windows: int = 0

    def entry(self, name: str) -> CoefficientEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def out_of_range(self) -> List[str]:
        return [e.name for e in self.entries if e.in_range is False]

    @property
    def dpm_out_of_range(self) -> Optional[str]:
        """Whether an unguarded estimate left its nominal interval on this data."""
        if not self.variant.is_dpm:
            return None
        if any(name in PACEJKA_NAMES for name in self.out_of_range):
            return "confirmed"
        return "inconclusive"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "variant": self.variant.value,
            "coefficients": {e.name: e.to_dict() for e in self.entries},
            "mean_f_rx": self.mean_f_rx,
            "out_of_range": self.out_of_range,
            "dpm_out_of_range": self.dpm_out_of_range,
            "windows": self.windows,
        }


def coefficient_report(estimator: CoefficientEstimator, dataset: Dataset, bounds: CoefficientBounds,
                       ground_truth: Optional[UnknownCoefficients] = None) -> CoefficientReport:
    """Average the per-window estimates over ``dataset`` and compare with bounds and ground truth."""
    windows = dataset.windows(estimator.tau)
    est = estimator.estimate(windows.features)
    means = est.coeffs.mean(axis=0)
    # the ground-truth pseudo-model reports every coefficient it carries
    estimated = estimator.estimated_names or COEFFICIENT_NAMES
    truth = ground_truth.to_dict() if ground_truth is not None else {}

    entries = []
    for i, name in enumerate(COEFFICIENT_NAMES):
        lower, upper = bounds.interval(name)
        is_estimated = name in estimated
        entries.append(CoefficientEntry(
            name=name,
            mean=float(means[i]) if is_estimated else None,
            lower=lower,
            upper=upper,
            ground_truth=truth.get(name),
            estimated=is_estimated,
        ))
    report = CoefficientReport(estimator.name, estimator.kind.variant, entries,
                               None if est.f_rx is None else float(est.f_rx.mean()), len(windows))
    if report.out_of_range:
        logger.warning("%s estimates outside the nominal range: %s", report.model, ", ".join(report.out_of_range))
    return report


# ========== Tables ==========

def comparison_table(reports: Sequence[OpenLoopReport]) -> pd.DataFrame:
    """One row per model: RMSE and maximum error per channel, ADE and FDE."""
    rows = []
    for r in reports:
        row: Dict[str, Any] = {"model": r.model}
        for channel in LOSS_CHANNELS:
            row[f"rmse_{channel}"] = r.metrics[channel]["rmse"]
            row[f"eps_max_{channel}"] = r.metrics[channel]["eps_max"]
        row["ade"] = r.ade
        row["fde"] = r.fde
        rows.append(row)
    return pd.DataFrame(rows).set_index("model")


def coefficient_table(reports: Sequence[CoefficientReport],
                      ground_truth: Optional[UnknownCoefficients] = None) -> pd.DataFrame:
    """
    Mean estimates side by side, with an "Actual" row when ground truth is
    known; coefficients a model does not estimate read "NA".
    """
    rows = {}
    if ground_truth is not None:
        rows["Actual"] = ground_truth.to_dict()
    for r in reports:
        rows[r.model] = {e.name: (e.mean if e.estimated else NA) for e in r.entries}
    table = pd.DataFrame.from_dict(rows, orient="index", columns=list(COEFFICIENT_NAMES))
    table.index.name = "model"
    return table


def race_table(reports: Sequence[RaceReport]) -> pd.DataFrame:
    """One row per run: lap time, average speed and track violations."""
    rows = [{
        "model": r.model,
        "track": r.track,
        "lap_time": r.lap_time if r.lap_time is not None else NA,
        "avg_speed": r.average_speed,
        "violations": r.violations,
        "completed": r.completed,
    } for r in reports]
    return pd.DataFrame(rows).set_index("model")
