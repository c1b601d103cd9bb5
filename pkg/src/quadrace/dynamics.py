"""Rigid-body quadcopter dynamics and fixed-step RK4 integration.

Conventions: NED world axes (z down, gravity +9.81 along z), ZYX Euler
angles, thrust along the body -z axis.  The batched code paths operate
on (N, 16) state arrays; the scalar API wraps them for single drones.

State vector layout: [p(3), v(3), lambda(3), Omega(3), omega(4)].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NearGimbalLock, NonFiniteState
from .params import ModelParams, denormalize_params

__all__ = [
    "STATE_DIM",
    "GRAVITY",
    "PITCH_CLAMP",
    "QuadState",
    "ParamArrays",
    "steady_state_motor_speed",
    "rotation_matrix",
    "euler_rate_matrix",
    "specific_force",
    "moment",
    "state_derivative",
    "integrate_step",
    "hover_rotor_speed",
    "hover_command",
    "wrap_angle",
]

STATE_DIM = 16
GRAVITY = 9.81
PITCH_CLAMP = np.pi / 2 - 1e-3

# state-vector slices
_P = slice(0, 3)
_V = slice(3, 6)
_LAM = slice(6, 9)
_OM = slice(9, 12)
_W = slice(12, 16)

# moment sign patterns per rotor (roll, pitch, yaw-speed, yaw-accel)
_SIGN_P = np.array([-1.0, -1.0, 1.0, 1.0])
_SIGN_Q = np.array([-1.0, 1.0, -1.0, 1.0])
_SIGN_R = np.array([-1.0, 1.0, 1.0, -1.0])


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


@dataclass
class QuadState:
    """Full continuous state of one quadcopter."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(3))
    Omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.lam = np.asarray(self.lam, dtype=float).reshape(3)
        self.Omega = np.asarray(self.Omega, dtype=float).reshape(3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(4)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.lam, self.Omega, self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "QuadState":
        x = np.asarray(x, dtype=float).reshape(STATE_DIM)
        return cls(x[_P].copy(), x[_V].copy(), x[_LAM].copy(), x[_OM].copy(), x[_W].copy())


class ParamArrays:
    """Physical (denormalized) coefficient arrays for a batch of drones.

    Rows may be rewritten independently, which is how per-episode domain
    randomization updates a single environment slot.
    """

    def __init__(self, params: ModelParams | Sequence[ModelParams], n: int | None = None):
        if isinstance(params, ModelParams):
            params = [params] * (n if n is not None else 1)
        params = list(params)
        m = len(params)
        self.k_omega = np.empty(m)
        self.k_x = np.empty(m)
        self.k_y = np.empty(m)
        self.k_p = np.empty((m, 4))
        self.k_q = np.empty((m, 4))
        self.k_r = np.empty((m, 4))
        self.k_rd = np.empty((m, 4))
        self.omega_min = np.empty(m)
        self.omega_max = np.empty(m)
        self.k_l = np.empty(m)
        self.tau = np.empty(m)
        for i, p in enumerate(params):
            self.set_row(i, p)

    def __len__(self):
        return self.k_omega.shape[0]

    def set_row(self, i: int, params: ModelParams):
        phys = denormalize_params(params)
        self.k_omega[i] = phys.k_omega
        self.k_x[i] = phys.k_x
        self.k_y[i] = phys.k_y
        self.k_p[i] = phys.k_p
        self.k_q[i] = phys.k_q
        self.k_r[i] = phys.k_r
        self.k_rd[i] = phys.k_rd
        self.omega_min[i] = params.omega_min
        self.omega_max[i] = params.omega_max
        self.k_l[i] = params.k_l
        self.tau[i] = params.tau


def _motor_speed_batch(u: np.ndarray, pa: ParamArrays) -> np.ndarray:
    """Commanded steady-state rotor speeds, (N, 4)."""
    kl = pa.k_l[:, None]
    span = (pa.omega_max - pa.omega_min)[:, None]
    blend = kl * u * u + (1.0 - kl) * u
    return span * np.sqrt(np.maximum(blend, 0.0)) + pa.omega_min[:, None]


def _rotation_batch(lam: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrices for ZYX Euler angles, (N, 3, 3)."""
    phi, th, psi = lam[:, 0], lam[:, 1], lam[:, 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(lam.shape[:1] + (3, 3))
    R[:, 0, 0] = cp * ct
    R[:, 0, 1] = cp * st * sf - sp * cf
    R[:, 0, 2] = cp * st * cf + sp * sf
    R[:, 1, 0] = sp * ct
    R[:, 1, 1] = sp * st * sf + cp * cf
    R[:, 1, 2] = sp * st * cf - cp * sf
    R[:, 2, 0] = -st
    R[:, 2, 1] = ct * sf
    R[:, 2, 2] = ct * cf
    return R


def _euler_rate_batch(lam: np.ndarray) -> np.ndarray:
    """Body-rate to Euler-rate matrices with the pitch singularity clamped."""
    phi = lam[:, 0]
    th = np.clip(lam[:, 1], -PITCH_CLAMP, PITCH_CLAMP)
    cf, sf = np.cos(phi), np.sin(phi)
    ct = np.cos(th)
    tt = np.tan(th)
    Q = np.zeros(lam.shape[:1] + (3, 3))
    Q[:, 0, 0] = 1.0
    Q[:, 0, 1] = sf * tt
    Q[:, 0, 2] = cf * tt
    Q[:, 1, 1] = cf
    Q[:, 1, 2] = -sf
    Q[:, 2, 1] = sf / ct
    Q[:, 2, 2] = cf / ct
    return Q


def derivative_batch(x: np.ndarray, u: np.ndarray, pa: ParamArrays) -> np.ndarray:
    """Time derivative of a batch of state vectors, (N, 16)."""
    v = x[:, _V]
    lam = x[:, _LAM]
    Om = x[:, _OM]
    w = x[:, _W]

    R = _rotation_batch(lam)
    vB = np.einsum("nji,nj->ni", R, v)
    sum_w = w.sum(axis=1)

    F = np.empty_like(v)
    F[:, 0] = -pa.k_x * vB[:, 0] * sum_w
    F[:, 1] = -pa.k_y * vB[:, 1] * sum_w
    F[:, 2] = -pa.k_omega * (w * w).sum(axis=1)

    wc = _motor_speed_batch(u, pa)
    wdot = (wc - w) / pa.tau[:, None]

    dx = np.empty_like(x)
    dx[:, _P] = v
    dx[:, _V] = np.einsum("nij,nj->ni", R, F)
    dx[:, 5] += GRAVITY
    dx[:, _LAM] = np.einsum("nij,nj->ni", _euler_rate_batch(lam), Om)
    w2 = w * w
    dx[:, 9] = (_SIGN_P * pa.k_p * w2).sum(axis=1)
    dx[:, 10] = (_SIGN_Q * pa.k_q * w2).sum(axis=1)
    dx[:, 11] = (_SIGN_R * (pa.k_r * w + pa.k_rd * wdot)).sum(axis=1)
    dx[:, _W] = wdot
    return dx


def rk4_step_batch(x: np.ndarray, u: np.ndarray, pa: ParamArrays, dt: float):
    """One classic RK4 step for a batch.

    Returns (x_next, nonfinite_mask, pitch_clamped_mask).  Yaw is wrapped
    and rotor speeds are clamped to [omega_min, omega_max] after the step;
    the pitch clamp inside the Euler-rate matrix is reported so callers
    can apply a near-gimbal-lock policy.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = derivative_batch(x, u, pa)
        k2 = derivative_batch(x + 0.5 * dt * k1, u, pa)
        k3 = derivative_batch(x + 0.5 * dt * k2, u, pa)
        k4 = derivative_batch(x + dt * k3, u, pa)
        xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    with np.errstate(invalid="ignore"):
        xn[:, 8] = wrap_angle(xn[:, 8])
        xn[:, _W] = np.clip(xn[:, _W], pa.omega_min[:, None], pa.omega_max[:, None])
    nonfinite = ~np.isfinite(xn).all(axis=1)
    with np.errstate(invalid="ignore"):
        clamped = np.abs(xn[:, 7]) >= PITCH_CLAMP
    clamped &= ~nonfinite
    return xn, nonfinite, clamped


# ---------------------------------------------------------------------------
# scalar API


def steady_state_motor_speed(u: np.ndarray, params: ModelParams) -> np.ndarray:
    """Steady-state rotor speeds (rad/s) for normalized commands in [0, 1]."""
    u = np.asarray(u, dtype=float).reshape(4)
    pa = ParamArrays(params)
    return _motor_speed_batch(u[None, :], pa)[0]


def rotation_matrix(lam: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrix for ZYX Euler angles."""
    lam = np.asarray(lam, dtype=float).reshape(3)
    return _rotation_batch(lam[None, :])[0]


def euler_rate_matrix(lam: np.ndarray) -> np.ndarray:
    """Matrix mapping body rates to Euler-angle rates.

    Raises NearGimbalLock when |pitch| reaches the clamp threshold.
    """
    lam = np.asarray(lam, dtype=float).reshape(3)
    if abs(lam[1]) >= PITCH_CLAMP:
        raise NearGimbalLock(f"pitch {lam[1]:.4f} rad too close to +-pi/2")
    return _euler_rate_batch(lam[None, :])[0]


def specific_force(state: QuadState, params: ModelParams) -> np.ndarray:
    """Body-frame specific force (m/s^2): linear drag plus -z thrust."""
    pa = ParamArrays(params)
    R = rotation_matrix(state.lam)
    vB = R.T @ state.v
    sum_w = state.omega.sum()
    return np.array(
        [
            -pa.k_x[0] * vB[0] * sum_w,
            -pa.k_y[0] * vB[1] * sum_w,
            -pa.k_omega[0] * (state.omega ** 2).sum(),
        ]
    )


def moment(state: QuadState, omega_dot: np.ndarray, params: ModelParams) -> np.ndarray:
    """Angular acceleration (rad/s^2) from rotor speeds and accelerations."""
    pa = ParamArrays(params)
    omega_dot = np.asarray(omega_dot, dtype=float).reshape(4)
    w2 = state.omega ** 2
    return np.array(
        [
            (_SIGN_P * pa.k_p[0] * w2).sum(),
            (_SIGN_Q * pa.k_q[0] * w2).sum(),
            (_SIGN_R * (pa.k_r[0] * state.omega + pa.k_rd[0] * omega_dot)).sum(),
        ]
    )


def state_derivative(state: QuadState, u: np.ndarray, params: ModelParams) -> QuadState:
    """Assembled equations of motion; raises NearGimbalLock near |pitch|=pi/2."""
    euler_rate_matrix(state.lam)  # singularity check
    pa = ParamArrays(params)
    u = np.asarray(u, dtype=float).reshape(4)
    dx = derivative_batch(state.as_vector()[None, :], u[None, :], pa)[0]
    return QuadState.from_vector(dx)


def integrate_step(state: QuadState, u: np.ndarray, params: ModelParams, dt: float) -> QuadState:
    """One RK4 step; raises NonFiniteState on numerical blow-up."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    pa = ParamArrays(params)
    u = np.asarray(u, dtype=float).reshape(4)
    xn, nonfinite, _ = rk4_step_batch(state.as_vector()[None, :], u[None, :], pa, dt)
    if nonfinite[0]:
        raise NonFiniteState("integration produced NaN/Inf")
    return QuadState.from_vector(xn[0])


def hover_rotor_speed(params: ModelParams) -> float:
    """Rotor speed at which four equal rotors cancel gravity."""
    k_omega = params.k_omega_hat / params.omega_max ** 2
    return float(np.sqrt(GRAVITY / (4.0 * k_omega)))


def hover_command(params: ModelParams) -> float:
    """Motor command whose steady-state speed is the hover rotor speed."""
    w = hover_rotor_speed(params)
    s = (w - params.omega_min) / (params.omega_max - params.omega_min)
    kl = params.k_l
    if kl == 0.0:
        return float(s * s)
    # solve kl*u^2 + (1-kl)*u = s^2 for u in [0, 1]
    disc = (1.0 - kl) ** 2 + 4.0 * kl * s * s
    return float((-(1.0 - kl) + np.sqrt(disc)) / (2.0 * kl))
