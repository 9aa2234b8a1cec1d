"""
Closed-loop racing: at every control step the estimator reads the live
history, the MPC plans with those coefficients held constant, the first
control is applied and the ground-truth simulator advances.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from app.models import UnknownCoefficients
from app.services.dynamics import SingleTrackModel, advance_pose
from app.services.estimators import CoefficientEstimator
from app.services.mpc import MpcSolver, reference_points, shift_controls
from app.services.tracks import Track
from utils.errors import RaceAbortError, SimulationError
from utils.validation import MpcConfig, PidConfig, RaceConfig

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "x", "y", "theta", "vx", "vy", "omega", "throttle", "steer",
                 "dthrottle", "dsteer", "cost", "offset", "violation", "lap"]


class PidController:
    """Throttle PID toward a target speed with a feed-forward bias and a rate-limited output."""

    def __init__(self, config: PidConfig, ts: float, rate_limit: float):
        self.config = config
        self.ts = ts
        self.rate_limit = rate_limit
        self.bias = config.bias
        self.integral = 0.0
        self.prev_error: Optional[float] = None

    def update(self, vx: float, throttle: float) -> float:
        """Throttle change for this step."""
        error = self.config.target_speed - vx
        derivative = 0.0 if self.prev_error is None else (error - self.prev_error) / self.ts
        self.prev_error = error
        candidate = self.integral + error * self.ts
        target = self.bias + self.config.kp * error + self.config.ki * candidate + self.config.kd * derivative
        # anti-windup: integrate only while the output is unsaturated
        if 0.0 <= target <= 1.0:
            self.integral = candidate
        target = float(np.clip(target, 0.0, 1.0))
        return float(np.clip(target - throttle, -self.rate_limit, self.rate_limit))


@dataclass
class RaceReport:
    """Lap metrics and the timestamped trajectory of one run."""
    model: str
    track: str
    lap_times: List[float] = field(default_factory=list)
    average_speed: float = 0.0
    violations: int = 0
    completed: bool = False
    steps: int = 0
    abort_reason: Optional[str] = None
    trace: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=TRACE_COLUMNS))

    @property
    def lap_time(self) -> Optional[float]:
        return self.lap_times[0] if self.lap_times else None

    def summary(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "track": self.track,
            "lap_time": self.lap_time,
            "lap_times": list(self.lap_times),
            "avg_speed": self.average_speed,
            "violations": self.violations,
            "completed": self.completed,
            "steps": self.steps,
            "abort_reason": self.abort_reason,
        }

    def write_trace(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.trace.to_csv(path, index=False, float_format="%.17g")
        logger.info("Wrote %d trace rows to %s", len(self.trace), path)
        return path


def _wrap_progress(ds: float, length: float) -> float:
    return (ds + 0.5 * length) % length - 0.5 * length


def race(track: Track, estimator: CoefficientEstimator, laps: int, ground_truth: UnknownCoefficients,
         model: SingleTrackModel, race_config: Optional[RaceConfig] = None,
         mpc_config: Optional[MpcConfig] = None, max_steps: Optional[int] = None) -> RaceReport:
    """
    Race ``laps`` laps on ``track``.

    Args:
        track: Circuit and raceline
        estimator: Source of coefficients (network or ground truth)
        laps: Laps to complete
        ground_truth: Coefficients of the simulated vehicle
        model: Physics layer shared by planner and simulator
        max_steps: Stop early (without error) after this many steps

    Raises:
        RaceAbortError: On spin-out or when any single lap runs past
            ``max_lap_time_s``; the partial report is attached.
    """
    race_config = race_config or RaceConfig()
    mpc_config = mpc_config or MpcConfig()
    ts = model.ts
    solver = MpcSolver(mpc_config, model)
    dpm = estimator.kind.variant.is_dpm
    pid = PidController(race_config.pid, ts, model.limits.dthrottle_max) if dpm else None
    truth = ground_truth.as_array()

    pose = np.array(track.start_pose())
    state = np.array([race_config.initial_vx, 0.0, 0.0, race_config.initial_throttle, 0.0])
    history = deque([np.concatenate([state, np.zeros(2)])] * (estimator.tau + 1), maxlen=estimator.tau + 1)
    warm: Optional[np.ndarray] = None

    report = RaceReport(estimator.name, track.name)
    rows: List[List[float]] = []
    progress = 0.0
    s_prev = track.project(pose[:2]).s
    lap_start = 0
    outside = False
    lap_step_limit = int(np.ceil(race_config.max_lap_time_s / ts))

    def finish(reason: Optional[str] = None) -> RaceReport:
        report.trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
        report.steps = len(rows)
        if rows:
            speed = np.hypot(report.trace["vx"], report.trace["vy"])
            report.average_speed = float(speed.mean())
        report.abort_reason = reason
        return report

    step = 0
    while max_steps is None or step < max_steps:
        if step - lap_start >= lap_step_limit:
            raise RaceAbortError(f"Lap {len(report.lap_times) + 1} exceeded the {race_config.max_lap_time_s:g} s limit",
                                 finish("TIMEOUT"))
        t = step * ts
        cost = float("nan")
        if state[0] < race_config.launch_speed:
            control = np.array([0.0, 0.0])
            if pid is not None:
                control[0] = pid.update(state[0], state[3])
        else:
            est = estimator.estimate(np.array(history)[None])
            coeffs = est.coeffs[0]
            f_rx = None if est.f_rx is None else float(est.f_rx[0])
            preview = float(np.clip(state[0], mpc_config.preview_speed_min, mpc_config.preview_speed_max))
            refs = reference_points(track, pose, preview, mpc_config.horizon, ts)
            fixed = None
            if pid is not None:
                fixed = np.zeros(mpc_config.horizon)
                fixed[0] = pid.update(state[0], state[3])
            solution = solver.solve(pose, state, refs, coeffs, warm, f_rx, fixed)
            control = solution.first.copy()
            cost = solution.cost
            warm = shift_controls(solution.controls)

        offset = track.offset(pose[:2])
        violation = offset > track.half_width
        if violation and not outside:
            report.violations += 1
            logger.warning("Track excursion at t=%.2f s: offset %.4f m", t, offset)
        outside = violation
        rows.append([t, *pose, *state, *control, cost, offset, int(violation), len(report.lap_times)])

        try:
            next_state, _ = model.step(state, control, truth)
        except SimulationError as e:
            raise RaceAbortError(f"Spin-out at t={t:.2f} s: {e.message}", finish(e.code))
        pose, _ = advance_pose(pose, state, ts)
        state = next_state
        if not np.all(np.isfinite(state)) or state[0] < model.vx_floor:
            raise RaceAbortError(f"Spin-out at t={t + ts:.2f} s: v_x={state[0]:.4g}", finish("SPIN_OUT"))
        # the newest row repeats the applied control until the next one is chosen
        history[-1] = np.concatenate([history[-1][:5], control])
        history.append(np.concatenate([state, control]))

        s_now = track.project(pose[:2]).s
        progress += _wrap_progress(s_now - s_prev, track.length)
        s_prev = s_now
        if progress >= (len(report.lap_times) + 1) * track.length:
            lap_time = (step + 1 - lap_start) * ts
            report.lap_times.append(lap_time)
            lap_start = step + 1
            logger.info("Lap %d completed in %.3f s", len(report.lap_times), lap_time)
            if len(report.lap_times) >= laps:
                report.completed = True
                return finish()
        step += 1

    return finish()
