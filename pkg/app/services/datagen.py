"""
Ground-truth data generation: a pure-pursuit driver laps a track while the
single-track model, run with the simulator's coefficients, plays the vehicle.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.models import ActuatorLimits, KnownCoefficients, UnknownCoefficients
from app.services.dynamics import SingleTrackModel, advance_pose
from app.services.telemetry import Dataset
from app.services.tracks import Track
from utils.constants import VX_FLOOR
from utils.errors import SimulationError, TrackExitError, ValidationError
from utils.validation import DatagenConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PurePursuitDriver:
    """Geometric steering toward a lookahead point plus a proportional speed controller."""
    track: Track
    wheelbase: float
    config: DatagenConfig
    limits: ActuatorLimits

    def lookahead(self, vx: float) -> float:
        return self.config.lookahead_gain * vx + self.config.lookahead_base

    def target_speed(self, s: float, vx: float, scale: float = 1.0) -> float:
        """Curvature-limited speed over the stretch about to be driven."""
        preview = np.linspace(s, s + self.lookahead(vx) + 0.5 * vx, 12)
        kappa = float(np.max(np.abs(self.track.curvature_at(preview))))
        limit = np.sqrt(self.config.a_lat_max / kappa) if kappa > 1e-9 else np.inf
        return float(np.clip(limit, self.config.v_min, self.config.v_max) * scale)

    def control(self, pose: np.ndarray, state: np.ndarray, scale: float = 1.0) -> Tuple[np.ndarray, float]:
        """
        Rate-limited (dthrottle, dsteer) for the current sample.

        Returns:
            Tuple of (control, arc length of the pose's raceline projection)
        """
        x, y, theta = pose
        vx, _, _, throttle, steer = state
        s = self.track.project((x, y)).s
        target = self.track.point_at(s + self.lookahead(vx))[0]
        dx, dy = target[0] - x, target[1] - y
        local_x = np.cos(theta) * dx + np.sin(theta) * dy
        local_y = -np.sin(theta) * dx + np.cos(theta) * dy
        distance = max(np.hypot(local_x, local_y), 1e-6)
        alpha = np.arctan2(local_y, local_x)
        steer_target = np.arctan(2.0 * self.wheelbase * np.sin(alpha) / distance)
        steer_target = np.clip(steer_target, -self.limits.steer_max, self.limits.steer_max)

        throttle_target = np.clip(
            self.config.throttle_bias + self.config.speed_gain * (self.target_speed(s, vx, scale) - vx), 0.0, 1.0)
        control = self.limits.clamp_control(np.array([throttle_target - throttle, steer_target - steer]))
        return control, s


def _wrap_progress(ds: float, length: float) -> float:
    return (ds + 0.5 * length) % length - 0.5 * length


def pure_pursuit_drive(track: Track, known: KnownCoefficients, ground_truth: UnknownCoefficients,
                       laps: int, rate_hz: float, seed: int, config: Optional[DatagenConfig] = None,
                       limits: ActuatorLimits = ActuatorLimits(), vx_floor: float = VX_FLOOR,
                       max_steps: Optional[int] = None, session: int = 0) -> Dataset:
    """
    Drive ``laps`` laps and log every sample.

    Args:
        track: Circuit whose raceline is followed
        known: Mass and axle distances
        ground_truth: Simulator coefficients
        laps: Number of laps
        rate_hz: Simulation and logging rate
        seed: Seeds the per-lap target-speed scatter
        config: Driver settings (defaults when omitted)
        max_steps: Stop early after this many samples
        session: Session id written to every row

    Raises:
        TrackExitError: If the vehicle leaves the track.
        SlipAngleDomainError: If v_x reaches the floor.
    """
    config = config or DatagenConfig()
    if not rate_hz > 0:
        raise ValidationError("rate_hz must be positive", field="dynamics.rate_hz")
    if laps < 1:
        raise ValidationError("laps must be at least 1", field="datagen.laps")
    if not config.initial_vx > vx_floor:
        raise ValidationError("initial v_x must exceed the floor", field="datagen.initial_vx")

    ts = 1.0 / rate_hz
    model = SingleTrackModel(known, ts, limits, vx_floor)
    driver = PurePursuitDriver(track, known.l_f + known.l_r, config, limits)
    rng = np.random.default_rng(seed)
    scales = 1.0 + rng.uniform(-config.speed_jitter, config.speed_jitter, size=laps)
    coeffs = ground_truth.as_array()

    pose = np.array(track.start_pose())
    state = np.array([config.initial_vx, 0.0, 0.0, config.throttle_bias, 0.0])
    max_steps_given = max_steps
    if max_steps is None:
        max_steps = int(np.ceil(laps * track.length / (0.25 * config.v_min) * rate_hz))

    rows_pose: List[np.ndarray] = []
    rows_state: List[np.ndarray] = []
    rows_control: List[np.ndarray] = []
    progress = 0.0
    s_prev = track.project(pose[:2]).s
    step = 0
    while progress < laps * track.length and step < max_steps:
        lap = min(max(int(progress // track.length), 0), laps - 1)
        control, s_now = driver.control(pose, state, scales[lap])
        progress += _wrap_progress(s_now - s_prev, track.length)
        s_prev = s_now
        rows_pose.append(pose)
        rows_state.append(state)
        rows_control.append(control)

        next_state, _ = model.step(state, control, coeffs)
        pose, _ = advance_pose(pose, state, ts)
        state = next_state
        step += 1
        if not np.all(np.isfinite(state)):
            raise SimulationError(f"Non-finite state at step {step}", {'step': step})
        offset = track.offset(pose[:2])
        if offset > track.half_width:
            raise TrackExitError(step, offset, track.half_width)

    if not rows_state:
        raise SimulationError("Data generation produced no samples")
    if progress < laps * track.length and max_steps_given is None:
        logger.warning("Stopped after %d samples with %.2f of %d laps driven", step, progress / track.length, laps)
    logger.info("Generated %d samples (%.2f laps) on %s", step, progress / track.length, track.name)

    n = len(rows_state)
    return Dataset.from_arrays(np.arange(n) * ts, np.array(rows_pose), np.array(rows_state),
                               np.array(rows_control), np.full(n, session), rate_hz)
