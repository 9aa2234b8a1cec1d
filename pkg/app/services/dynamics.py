"""
Discrete-time dynamic single-track vehicle model.

The same forward-Euler state equations serve as the ground-truth simulator
and as the differentiable physics layer behind the coefficient network and
the MPC solver. Array-level methods on SingleTrackModel work on any leading
batch shape; each forward step returns a cache that its ``*_vjp`` companion
turns into input gradients. The module-level functions are the scalar,
dataclass-typed entry points.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from app.models import (
    ActuatorLimits,
    ControlInput,
    KnownCoefficients,
    PoseState,
    TireForces,
    UnknownCoefficients,
    VelocityState,
)
from utils.constants import COEFFICIENT_NAMES, VX_FLOOR
from utils.errors import SlipAngleDomainError

IDX = {name: i for i, name in enumerate(COEFFICIENT_NAMES)}


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def magic_formula(alpha, B, C, D, E, K):
    """Pacejka lateral force with additive force offset K."""
    u = B * alpha
    atan_u = np.arctan(u)
    w = u - E * (u - atan_u)
    atan_w = np.arctan(w)
    phi = C * atan_w
    force = K + D * np.sin(phi)
    cache = {"alpha": alpha, "B": B, "C": C, "D": D, "E": E,
             "u": u, "atan_u": atan_u, "w": w, "atan_w": atan_w, "phi": phi}
    return force, cache


def magic_formula_vjp(cache: Dict, g_force):
    """Gradients of the Pacejka force w.r.t. (alpha, B, C, D, E, K)."""
    u, w = cache["u"], cache["w"]
    B, C, D, E = cache["B"], cache["C"], cache["D"], cache["E"]
    g_D = g_force * np.sin(cache["phi"])
    g_phi = g_force * D * np.cos(cache["phi"])
    g_C = g_phi * cache["atan_w"]
    g_w = g_phi * C / (1.0 + w * w)
    g_E = -g_w * (u - cache["atan_u"])
    g_u = g_w * (1.0 - E + E / (1.0 + u * u))
    g_B = g_u * cache["alpha"]
    g_alpha = g_u * B
    return g_alpha, g_B, g_C, g_D, g_E, g_force


@dataclass(frozen=True)
class SingleTrackModel:
    """Vehicle geometry, actuator limits and sample time for array-level stepping."""
    known: KnownCoefficients
    ts: float
    limits: ActuatorLimits = ActuatorLimits()
    vx_floor: float = VX_FLOOR

    def __post_init__(self):
        if not self.ts > 0:
            raise ValueError("Sample time ts must be positive")

    # ------------------------------------------------------------------
    # Velocity states
    # ------------------------------------------------------------------

    def check_domain(self, vx) -> None:
        vx = np.asarray(vx)
        if vx.size and not np.all(vx >= self.vx_floor):
            raise SlipAngleDomainError(float(np.nanmin(vx)), self.vx_floor)

    def slip_angles(self, state, coeffs):
        """Front and rear slip angles for state (..., 5) and coefficients (..., 17)."""
        state = np.asarray(state, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        vx, vy, omega, steer = state[..., 0], state[..., 1], state[..., 2], state[..., 4]
        self.check_domain(vx)
        ratio_f = (omega * self.known.l_f + vy) / vx
        ratio_r = (omega * self.known.l_r - vy) / vx
        alpha_f = steer - np.arctan(ratio_f) + coeffs[..., IDX["G_f"]]
        alpha_r = np.arctan(ratio_r) + coeffs[..., IDX["G_r"]]
        return alpha_f, alpha_r, ratio_f, ratio_r

    @staticmethod
    def lateral_forces(alpha_f, alpha_r, coeffs):
        c = np.asarray(coeffs, dtype=float)
        F_fy, cache_f = magic_formula(alpha_f, c[..., IDX["B_f"]], c[..., IDX["C_f"]],
                                      c[..., IDX["D_f"]], c[..., IDX["E_f"]], c[..., IDX["K_f"]])
        F_ry, cache_r = magic_formula(alpha_r, c[..., IDX["B_r"]], c[..., IDX["C_r"]],
                                      c[..., IDX["D_r"]], c[..., IDX["E_r"]], c[..., IDX["K_r"]])
        return F_fy, F_ry, cache_f, cache_r

    @staticmethod
    def drivetrain(state, coeffs):
        state = np.asarray(state, dtype=float)
        c = np.asarray(coeffs, dtype=float)
        vx, throttle = state[..., 0], state[..., 3]
        return ((c[..., IDX["C_m1"]] - c[..., IDX["C_m2"]] * vx) * throttle
                - c[..., IDX["C_r0"]] - c[..., IDX["C_d"]] * vx * vx)

    def step(self, state, control, coeffs, f_rx=None) -> Tuple[np.ndarray, Dict]:
        """
        Advance velocity states one sample.

        Args:
            state: (..., 5) [vx, vy, omega, throttle, steer]
            control: (..., 2) [dthrottle, dsteer]
            coeffs: (..., 17) unknown coefficients in COEFFICIENT_NAMES order
            f_rx: optional (...,) longitudinal force replacing the drivetrain model

        Returns:
            Tuple of (next state (..., 5), cache for step_vjp)
        """
        state = np.asarray(state, dtype=float)
        control = np.asarray(control, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        m, l_f, l_r, ts = self.known.m, self.known.l_f, self.known.l_r, self.ts
        vx, vy, omega = state[..., 0], state[..., 1], state[..., 2]
        throttle, steer = state[..., 3], state[..., 4]

        alpha_f, alpha_r, ratio_f, ratio_r = self.slip_angles(state, coeffs)
        F_fy, F_ry, tire_f, tire_r = self.lateral_forces(alpha_f, alpha_r, coeffs)
        if f_rx is None:
            F_rx = self.drivetrain(state, coeffs)
        else:
            F_rx = np.asarray(f_rx, dtype=float)
        I_z = coeffs[..., IDX["I_z"]]
        sin_d, cos_d = np.sin(steer), np.cos(steer)

        yaw_moment = F_fy * l_f * cos_d - F_ry * l_r
        vx_next = vx + (F_rx - F_fy * sin_d + m * vy * omega) * ts / m
        vy_next = vy + (F_ry + F_fy * cos_d - m * vx * omega) * ts / m
        omega_next = omega + yaw_moment * ts / I_z
        throttle_raw = throttle + control[..., 0]
        steer_raw = steer + control[..., 1]
        throttle_next = np.clip(throttle_raw, 0.0, 1.0)
        steer_next = np.clip(steer_raw, -self.limits.steer_max, self.limits.steer_max)

        next_state = np.stack([vx_next, vy_next, omega_next, throttle_next, steer_next], axis=-1)
        cache = {
            "state": state, "coeffs": coeffs, "external_f_rx": f_rx is not None,
            "ratio_f": ratio_f, "ratio_r": ratio_r, "tire_f": tire_f, "tire_r": tire_r,
            "F_fy": F_fy, "F_ry": F_ry, "F_rx": F_rx, "sin_d": sin_d, "cos_d": cos_d,
            "yaw_moment": yaw_moment, "throttle_raw": throttle_raw, "steer_raw": steer_raw,
        }
        return next_state, cache

    def step_vjp(self, cache: Dict, g_next) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[np.ndarray]]:
        """
        Reverse pass of step.

        Returns:
            Tuple of (grad state (..., 5), grad control (..., 2),
            grad coeffs (..., 17), grad f_rx or None)
        """
        m, l_f, l_r, ts = self.known.m, self.known.l_f, self.known.l_r, self.ts
        state, coeffs = cache["state"], cache["coeffs"]
        vx, vy, omega, throttle = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
        sin_d, cos_d = cache["sin_d"], cache["cos_d"]
        F_fy = cache["F_fy"]
        I_z = coeffs[..., IDX["I_z"]]
        g_next = np.asarray(g_next, dtype=float)
        g_vx, g_vy, g_om = g_next[..., 0], g_next[..., 1], g_next[..., 2]
        g_T, g_d = g_next[..., 3], g_next[..., 4]

        k_m = ts / m
        k_i = ts / I_z
        g_coeffs = np.zeros(np.broadcast(vx, I_z).shape + (coeffs.shape[-1],))

        g_vx_in = g_vx - g_vy * omega * ts
        g_vy_in = g_vy + g_vx * omega * ts
        g_om_in = g_om + g_vx * vy * ts - g_vy * vx * ts
        g_F_rx = g_vx * k_m
        g_F_fy = (g_vy * cos_d - g_vx * sin_d) * k_m + g_om * l_f * cos_d * k_i
        g_F_ry = g_vy * k_m - g_om * l_r * k_i
        g_steer_in = -(g_vx * cos_d + g_vy * sin_d) * F_fy * k_m - g_om * F_fy * l_f * sin_d * k_i
        g_coeffs[..., IDX["I_z"]] = -g_om * cache["yaw_moment"] * ts / (I_z * I_z)

        throttle_raw, steer_raw = cache["throttle_raw"], cache["steer_raw"]
        throttle_pass = (throttle_raw >= 0.0) & (throttle_raw <= 1.0)
        steer_pass = (steer_raw >= -self.limits.steer_max) & (steer_raw <= self.limits.steer_max)
        g_throttle_in = np.where(throttle_pass, g_T, 0.0)
        g_steer_in = g_steer_in + np.where(steer_pass, g_d, 0.0)
        g_control = np.stack([np.where(throttle_pass, g_T, 0.0), np.where(steer_pass, g_d, 0.0)], axis=-1)

        g_f_rx = None
        if cache["external_f_rx"]:
            g_f_rx = g_F_rx
        else:
            C_m1, C_m2, C_d = coeffs[..., IDX["C_m1"]], coeffs[..., IDX["C_m2"]], coeffs[..., IDX["C_d"]]
            g_throttle_in = g_throttle_in + g_F_rx * (C_m1 - C_m2 * vx)
            g_vx_in = g_vx_in - g_F_rx * (C_m2 * throttle + 2.0 * C_d * vx)
            g_coeffs[..., IDX["C_m1"]] = g_F_rx * throttle
            g_coeffs[..., IDX["C_m2"]] = -g_F_rx * vx * throttle
            g_coeffs[..., IDX["C_r0"]] = -g_F_rx
            g_coeffs[..., IDX["C_d"]] = -g_F_rx * vx * vx

        g_alpha_f, g_B, g_C, g_D, g_E, g_K = magic_formula_vjp(cache["tire_f"], g_F_fy)
        for name, grad in zip(("B_f", "C_f", "D_f", "E_f", "K_f"), (g_B, g_C, g_D, g_E, g_K)):
            g_coeffs[..., IDX[name]] = grad
        g_alpha_r, g_B, g_C, g_D, g_E, g_K = magic_formula_vjp(cache["tire_r"], g_F_ry)
        for name, grad in zip(("B_r", "C_r", "D_r", "E_r", "K_r"), (g_B, g_C, g_D, g_E, g_K)):
            g_coeffs[..., IDX[name]] = grad
        g_coeffs[..., IDX["G_f"]] = g_alpha_f
        g_coeffs[..., IDX["G_r"]] = g_alpha_r

        ratio_f, ratio_r = cache["ratio_f"], cache["ratio_r"]
        g_ratio_f = -g_alpha_f / (1.0 + ratio_f * ratio_f)
        g_ratio_r = g_alpha_r / (1.0 + ratio_r * ratio_r)
        g_steer_in = g_steer_in + g_alpha_f
        g_om_in = g_om_in + (g_ratio_f * l_f + g_ratio_r * l_r) / vx
        g_vy_in = g_vy_in + (g_ratio_f - g_ratio_r) / vx
        g_vx_in = g_vx_in - (g_ratio_f * ratio_f + g_ratio_r * ratio_r) / vx

        g_state = np.stack([g_vx_in, g_vy_in, g_om_in, g_throttle_in, g_steer_in], axis=-1)
        return g_state, g_control, g_coeffs, g_f_rx


def advance_pose(pose, state, ts: float) -> Tuple[np.ndarray, Dict]:
    """Advance (..., 3) poses with the velocities of (..., 5) states."""
    pose = np.asarray(pose, dtype=float)
    state = np.asarray(state, dtype=float)
    x, y, theta = pose[..., 0], pose[..., 1], pose[..., 2]
    vx, vy, omega = state[..., 0], state[..., 1], state[..., 2]
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    x_next = x + (vx * cos_t - vy * sin_t) * ts
    y_next = y + (vx * sin_t + vy * cos_t) * ts
    theta_next = wrap_angle(theta + omega * ts)
    cache = {"vx": vx, "vy": vy, "cos_t": cos_t, "sin_t": sin_t}
    return np.stack([x_next, y_next, theta_next], axis=-1), cache


def advance_pose_vjp(cache: Dict, g_pose, ts: float) -> Tuple[np.ndarray, np.ndarray]:
    """Reverse pass of advance_pose: grads w.r.t. (pose, state)."""
    g_pose = np.asarray(g_pose, dtype=float)
    g_x, g_y, g_t = g_pose[..., 0], g_pose[..., 1], g_pose[..., 2]
    vx, vy, cos_t, sin_t = cache["vx"], cache["vy"], cache["cos_t"], cache["sin_t"]
    g_theta_in = g_t + (-g_x * (vx * sin_t + vy * cos_t) + g_y * (vx * cos_t - vy * sin_t)) * ts
    g_pose_in = np.stack([g_x, g_y, g_theta_in], axis=-1)
    zeros = np.zeros_like(g_x)
    g_state = np.stack([
        (g_x * cos_t + g_y * sin_t) * ts,
        (g_y * cos_t - g_x * sin_t) * ts,
        g_t * ts,
        zeros,
        zeros,
    ], axis=-1)
    return g_pose_in, g_state


# ----------------------------------------------------------------------
# Scalar entry points
# ----------------------------------------------------------------------


def slip_angles(state: VelocityState, known: KnownCoefficients,
                coeffs: UnknownCoefficients, vx_floor: float = VX_FLOOR) -> Tuple[float, float]:
    """
    Front and rear slip angles.

    Raises:
        SlipAngleDomainError: If v_x is below the floor.
    """
    model = SingleTrackModel(known, 1.0, vx_floor=vx_floor)
    alpha_f, alpha_r, _, _ = model.slip_angles(state.as_array(), coeffs.as_array())
    return float(alpha_f), float(alpha_r)


def lateral_tire_forces(alpha_f: float, alpha_r: float, coeffs: UnknownCoefficients) -> Tuple[float, float]:
    """Front and rear lateral forces from the Magic Formula with offsets."""
    F_fy, F_ry, _, _ = SingleTrackModel.lateral_forces(alpha_f, alpha_r, coeffs.as_array())
    return float(F_fy), float(F_ry)


def drivetrain_force(state: VelocityState, coeffs: UnknownCoefficients) -> float:
    """Rear longitudinal force (C_m1 - C_m2 v_x) T - C_r0 - C_d v_x^2."""
    return float(SingleTrackModel.drivetrain(state.as_array(), coeffs.as_array()))


def tire_forces(state: VelocityState, known: KnownCoefficients, coeffs: UnknownCoefficients) -> TireForces:
    alpha_f, alpha_r = slip_angles(state, known, coeffs)
    F_fy, F_ry = lateral_tire_forces(alpha_f, alpha_r, coeffs)
    return TireForces(F_fy, F_ry, drivetrain_force(state, coeffs), alpha_f, alpha_r)


def step_velocity(state: VelocityState, control: ControlInput, known: KnownCoefficients,
                  coeffs: UnknownCoefficients, ts: float,
                  limits: ActuatorLimits = ActuatorLimits(), vx_floor: float = VX_FLOOR) -> VelocityState:
    """Forward-Euler velocity-state update; throttle and steer are clamped to actuator limits."""
    model = SingleTrackModel(known, ts, limits, vx_floor)
    next_state, _ = model.step(state.as_array(), control.as_array(), coeffs.as_array())
    return VelocityState.from_array(next_state)


def step_pose(pose: PoseState, state: VelocityState, ts: float) -> PoseState:
    """Forward-Euler pose update with the heading wrapped into (-pi, pi]."""
    if not ts > 0:
        raise ValueError("Sample time ts must be positive")
    next_pose, _ = advance_pose(pose.as_array(), state.as_array(), ts)
    return PoseState.from_array(next_pose)
