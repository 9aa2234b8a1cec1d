"""
Raceline-tracking model-predictive control.

Cost over a horizon of H steps:
    sum_{h=1..H} e_h' Q e_h + sum_{h=0..H-1} u_h' R u_h
with e_h the (x, y) error of the predicted pose against the h-th reference
point. Coefficients are fixed for the whole solve. The control sequence is
optimised by projected gradient descent on controls normalised by their rate
limits, with a backtracking line search so every accepted step lowers the cost.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.services.dynamics import SingleTrackModel, advance_pose, advance_pose_vjp
from app.services.tape import Tape
from app.services.tracks import Track
from utils.errors import SimulationError, TrackError
from utils.validation import MpcConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcSolution:
    """Optimised controls with the exact rollout they produce."""
    controls: np.ndarray  # (H, 2)
    poses: np.ndarray  # (H+1, 3)
    states: np.ndarray  # (H+1, 5)
    cost: float
    iterations_used: int
    fallback: bool = False

    @property
    def first(self) -> np.ndarray:
        return self.controls[0]


def reference_points(track: Track, pose, v_x: float, horizon: int, ts: float) -> np.ndarray:
    """
    H raceline points spaced v_x * ts apart, starting one spacing ahead of
    the pose's projection onto the raceline.

    Raises:
        TrackError: If the raceline is degenerate.
    """
    if track.raceline is None or len(track.raceline) < 3 or track.length <= 0:
        raise TrackError(f"Raceline of '{track.name}' is degenerate")
    s0 = track.project(np.asarray(pose, dtype=float)[:2]).s
    return track.point_at(s0 + v_x * ts * np.arange(1, horizon + 1))


def _weights(config: MpcConfig) -> Tuple[np.ndarray, np.ndarray]:
    return np.array(config.q, dtype=float), np.array(config.r, dtype=float)


def rollout(controls, start_pose, start_state, coeffs, model: SingleTrackModel, f_rx=None,
            tape: Optional[Tape] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Roll poses and velocity states forward under ``controls`` with one fixed
    coefficient vector.

    Returns:
        Tuple of (poses (H+1, 3), states (H+1, 5))
    """
    controls = np.asarray(controls, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    horizon = controls.shape[0]
    poses = np.empty((horizon + 1, 3))
    states = np.empty((horizon + 1, 5))
    poses[0] = start_pose
    states[0] = start_state
    for h in range(horizon):
        states[h + 1], step_cache = model.step(states[h], controls[h], coeffs, f_rx)
        poses[h + 1], pose_cache = advance_pose(poses[h], states[h], model.ts)
        if tape is not None:
            tape.record(_step_entry(h, horizon, model, step_cache, pose_cache))
    return poses, states


def _step_entry(h: int, horizon: int, model: SingleTrackModel, step_cache, pose_cache):
    def backward(grad, tape: Tape):
        g_pose_next, g_state_next = grad
        g_pose, g_state_from_pose = advance_pose_vjp(pose_cache, g_pose_next, model.ts)
        g_state, g_control, _, _ = model.step_vjp(step_cache, g_state_next)
        full = np.zeros((horizon, 2))
        full[h] = g_control
        tape.accumulate("controls", full)
        pending = tape.grads.get(f"pose{h}")
        if pending is not None:
            g_pose = g_pose + pending
        return g_pose, g_state + g_state_from_pose
    return backward


def rollout_cost(controls, start_pose, start_state, refs, coeffs, config: MpcConfig,
                 model: SingleTrackModel, f_rx=None) -> float:
    """
    Tracking plus actuation cost of a control sequence; +inf when the rollout
    leaves the slip-angle domain or turns non-finite.
    """
    q, r = _weights(config)
    controls = np.asarray(controls, dtype=float)
    try:
        poses, _ = rollout(controls, start_pose, start_state, coeffs, model, f_rx)
    except SimulationError:
        return float("inf")
    err = poses[1:, :2] - np.asarray(refs, dtype=float)
    cost = float(np.einsum("hi,ij,hj->", err, q, err) + np.einsum("hi,ij,hj->", controls, r, controls))
    return cost if np.isfinite(cost) else float("inf")


def cost_and_gradient(controls, start_pose, start_state, refs, coeffs, config: MpcConfig,
                      model: SingleTrackModel, f_rx=None) -> Tuple[float, np.ndarray]:
    """Cost and its exact gradient w.r.t. the (H, 2) control sequence."""
    q, r = _weights(config)
    controls = np.asarray(controls, dtype=float)
    tape = Tape()
    poses, states = rollout(controls, start_pose, start_state, coeffs, model, f_rx, tape)
    err = poses[1:, :2] - np.asarray(refs, dtype=float)
    cost = float(np.einsum("hi,ij,hj->", err, q, err) + np.einsum("hi,ij,hj->", controls, r, controls))

    # tracking gradients enter at every intermediate pose, the last one seeds the chain
    g_err = err @ (q + q.T)
    horizon = controls.shape[0]
    for h in range(1, horizon):
        pose_grad = np.zeros(3)
        pose_grad[:2] = g_err[h - 1]
        tape.grads[f"pose{h}"] = pose_grad
    seed_pose = np.zeros(3)
    seed_pose[:2] = g_err[horizon - 1]
    tape.backward((seed_pose, np.zeros(5)))
    grad = tape.grads.get("controls", np.zeros_like(controls)) + controls @ (r + r.T)
    return cost, grad


class MpcSolver:
    """Projected-gradient solver bound to a physics model and weights."""

    def __init__(self, config: MpcConfig, model: SingleTrackModel):
        self.config = config
        self.model = model
        self.scale = np.array([model.limits.dthrottle_max, model.limits.dsteer_max])

    def project(self, controls: np.ndarray) -> np.ndarray:
        return np.clip(controls, -self.scale, self.scale)

    def solve(self, start_pose, start_state, refs, coeffs, warm_start: Optional[np.ndarray] = None,
              f_rx=None, fixed_throttle: Optional[np.ndarray] = None) -> MpcSolution:
        """
        Minimise the rollout cost from ``warm_start`` (zeros when omitted).

        Args:
            fixed_throttle: (H,) throttle changes held fixed; only steering is optimised

        The returned cost never exceeds the warm start's cost unless the
        warm start is infeasible and the solver falls back to zero controls.
        """
        cfg = self.config
        horizon = len(refs)
        coeffs = np.array(coeffs, dtype=float)
        coeffs.setflags(write=False)
        u = np.zeros((horizon, 2)) if warm_start is None else self.project(np.array(warm_start, dtype=float))
        mask = np.ones((horizon, 2))
        if fixed_throttle is not None:
            u[:, 0] = np.clip(fixed_throttle, -self.scale[0], self.scale[0])
            mask[:, 0] = 0.0

        def cost_of(x):
            return rollout_cost(x, start_pose, start_state, refs, coeffs, cfg, self.model, f_rx)

        cost = cost_of(u)
        if not np.isfinite(cost):
            logger.warning("MPC warm start infeasible; restarting from zero steering and throttle changes")
            u = u * (1.0 - mask)
            cost = cost_of(u)
            if not np.isfinite(cost):
                return self._fallback(start_pose, start_state, refs, coeffs, f_rx, u)

        step = cfg.step_size
        iterations = 0
        for _ in range(cfg.iterations):
            _, grad = cost_and_gradient(u, start_pose, start_state, refs, coeffs, cfg, self.model, f_rx)
            if not np.all(np.isfinite(grad)):
                logger.warning("Non-finite MPC gradient; falling back to zero controls")
                return self._fallback(start_pose, start_state, refs, coeffs, f_rx, u * (1.0 - mask))
            g_norm = grad * self.scale * mask
            if not np.any(g_norm):
                break
            accepted = False
            trial_step = step
            for _ in range(cfg.max_backtracks + 1):
                v = self.project(u - trial_step * g_norm * self.scale)
                trial_cost = cost_of(v)
                if trial_cost < cost:
                    accepted = True
                    break
                trial_step *= cfg.backtrack
            if not accepted:
                break
            improvement = cost - trial_cost
            u, cost = v, trial_cost
            iterations += 1
            step = min(trial_step / cfg.backtrack, cfg.step_size)
            if improvement < cfg.tolerance:
                break

        poses, states = rollout(u, start_pose, start_state, coeffs, self.model, f_rx)
        logger.debug("MPC converged in %d iterations, cost %.6g", iterations, cost)
        return MpcSolution(u, poses, states, cost, iterations)

    def _fallback(self, start_pose, start_state, refs, coeffs, f_rx, controls) -> MpcSolution:
        try:
            poses, states = rollout(controls, start_pose, start_state, coeffs, self.model, f_rx)
        except SimulationError:
            poses = np.tile(np.asarray(start_pose, dtype=float), (len(controls) + 1, 1))
            states = np.tile(np.asarray(start_state, dtype=float), (len(controls) + 1, 1))
        cost = rollout_cost(controls, start_pose, start_state, refs, coeffs, self.config, self.model, f_rx)
        return MpcSolution(controls, poses, states, cost, 0, fallback=True)


def shift_controls(controls: np.ndarray) -> np.ndarray:
    """Warm start for the next step: drop the applied control, repeat zero at the end."""
    shifted = np.zeros_like(controls)
    shifted[:-1] = controls[1:]
    return shifted


def solve(start_pose, start_state, refs, coeffs, config: MpcConfig, model: SingleTrackModel,
          warm_start: Optional[np.ndarray] = None, f_rx=None) -> MpcSolution:
    """Single solve with a throwaway solver."""
    return MpcSolver(config, model).solve(start_pose, start_state, refs, coeffs, warm_start, f_rx)
