"""Least-squares identification of model parameters from flight logs.

Each force/moment axis is linear in its coefficients given measured
body-frame velocity, rotor speeds and accelerations, so the fits are
independent ordinary-least-squares problems.  The motor constants come
from a step-excitation log: speed limits from steady-state extremes,
the thrust-curve blend from the normalized steady-state curve, and the
time constant from the first-order lag ODE.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import (
    GRAVITY,
    ParamArrays,
    _motor_speed_batch,
    derivative_batch,
    rk4_step_batch,
    hover_command,
)
from .errors import InsufficientExcitation, RankDeficient
from .params import ModelParams, PhysicalParams, normalize_params

__all__ = [
    "FlightLog",
    "ForceFit",
    "MomentFit",
    "MotorFit",
    "fit_force_params",
    "fit_moment_params",
    "fit_motor_params",
    "simulate_chirp_log",
    "simulate_motor_step_log",
    "identify",
    "read_flight_log",
    "write_flight_log",
]

COND_LIMIT = 1e10

_SIGN_P = np.array([-1.0, -1.0, 1.0, 1.0])
_SIGN_Q = np.array([-1.0, 1.0, -1.0, 1.0])
_SIGN_R = np.array([-1.0, 1.0, 1.0, -1.0])


@dataclass
class FlightLog:
    """Uniformly sampled flight data.

    ``Omega_dot``/``omega_dot`` may be None, in which case fits fall
    back to central finite differences of the logged signals.
    """

    t: np.ndarray
    v_body: np.ndarray          # (M, 3) body-frame velocity
    Omega: np.ndarray           # (M, 3)
    force: np.ndarray           # (M, 3) measured specific force, body frame
    omega: np.ndarray           # (M, 4) rotor speeds
    Omega_dot: np.ndarray | None = None
    omega_dot: np.ndarray | None = None
    u: np.ndarray | None = None  # (M, 4) motor commands, for motor fits

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if not np.all(np.diff(self.t) > 0.0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def _central_diff(y: np.ndarray, dt: float) -> np.ndarray:
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    d[0] = (y[1] - y[0]) / dt
    d[-1] = (y[-1] - y[-2]) / dt
    return d


def _lstsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """OLS with an explicit conditioning check; returns (coeffs, rms)."""
    X = np.atleast_2d(X)
    if X.shape[0] < X.shape[1]:
        raise RankDeficient("fewer rows than unknowns")
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] < 1e-9 or s[-1] <= s[0] / COND_LIMIT:
        raise RankDeficient(f"regressor condition {s[0] / max(s[-1], 1e-300):.2e}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    rms = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    return coef, rms


@dataclass
class ForceFit:
    k_omega: float
    k_x: float
    k_y: float
    rms: tuple[float, float, float]


def fit_force_params(log: FlightLog) -> ForceFit:
    """Per-axis OLS of the drag and thrust coefficients."""
    sum_w = log.omega.sum(axis=1)
    kx, rx = _lstsq((-log.v_body[:, 0] * sum_w)[:, None], log.force[:, 0])
    ky, ry = _lstsq((-log.v_body[:, 1] * sum_w)[:, None], log.force[:, 1])
    kw, rz = _lstsq((-(log.omega ** 2).sum(axis=1))[:, None], log.force[:, 2])
    return ForceFit(float(kw[0]), float(kx[0]), float(ky[0]), (rx, ry, rz))


@dataclass
class MomentFit:
    k_p: np.ndarray
    k_q: np.ndarray
    k_r: np.ndarray
    k_rd: np.ndarray
    rms: tuple[float, float, float]


def fit_moment_params(log: FlightLog) -> MomentFit:
    """Roll/pitch over signed rotor-speed-squared regressors; yaw over
    signed speed and acceleration regressors (8 unknowns)."""
    Om_dot = log.Omega_dot
    if Om_dot is None:
        Om_dot = _central_diff(log.Omega, log.dt)
    w_dot = log.omega_dot
    if w_dot is None:
        w_dot = _central_diff(log.omega, log.dt)
    w2 = log.omega ** 2
    kp, rp = _lstsq(_SIGN_P * w2, Om_dot[:, 0])
    kq, rq = _lstsq(_SIGN_Q * w2, Om_dot[:, 1])
    Xr = np.hstack([_SIGN_R * log.omega, _SIGN_R * w_dot])
    kr, rr = _lstsq(Xr, Om_dot[:, 2])
    return MomentFit(kp, kq, kr[:4], kr[4:], (rp, rq, rr))


@dataclass
class MotorFit:
    omega_min: float
    omega_max: float
    k_l: float
    tau: float


def fit_motor_params(log: FlightLog, settle_time: float = 0.5) -> MotorFit:
    """Fit the motor constants from a step-excitation (u, omega) log.

    Steady-state samples are taken at the end of each constant-command
    segment held longer than ``settle_time``.
    """
    if log.u is None:
        raise InsufficientExcitation("log has no motor commands")
    u = log.u
    if float(u.max() - u.min()) < 0.5:
        raise InsufficientExcitation("command range below 0.5")

    # find constant-u segments (identical command rows)
    change = np.any(np.abs(np.diff(u, axis=0)) > 0.0, axis=1)
    seg_starts = np.concatenate([[0], np.flatnonzero(change) + 1])
    seg_ends = np.concatenate([np.flatnonzero(change) + 1, [len(log.t)]])
    ss_u, ss_w = [], []
    for a, b in zip(seg_starts, seg_ends):
        if log.t[b - 1] - log.t[a] >= settle_time:
            ss_u.append(u[a])
            ss_w.append(log.omega[b - 1])
    ss_u = np.concatenate(ss_u) if ss_u else np.empty(0)
    ss_w = np.concatenate(ss_w) if ss_w else np.empty(0)
    if ss_u.size == 0 or ss_u.min() > 1e-9 or ss_u.max() < 1.0 - 1e-9:
        raise InsufficientExcitation("need settled segments at u=0 and u=1")

    omega_min = float(ss_w[ss_u <= 1e-9].mean())
    omega_max = float(ss_w[ss_u >= 1.0 - 1e-9].mean())

    # k_l from the normalized steady-state curve: s^2 - u = k_l (u^2 - u)
    mid = (ss_u > 1e-9) & (ss_u < 1.0 - 1e-9)
    s = (ss_w[mid] - omega_min) / (omega_max - omega_min)
    X = (ss_u[mid] ** 2 - ss_u[mid])[:, None]
    y = s * s - ss_u[mid]
    kl, _ = _lstsq(X, y)
    k_l = float(np.clip(kl[0], 0.0, 1.0 - 1e-6))

    # tau from the lag ODE: omega_dot = (omega_c - omega)/tau
    w_dot = log.omega_dot
    keep = np.ones(len(log.t), dtype=bool)
    if w_dot is None:
        w_dot = _central_diff(log.omega, log.dt)
        # central differences straddling a command step are wrong; drop
        # the samples next to each discontinuity (and the endpoints)
        step = np.any(np.abs(np.diff(u, axis=0)) > 0.0, axis=1)
        keep[:-1] &= ~step
        keep[1:] &= ~step
        keep[[0, -1]] = False
    span = omega_max - omega_min
    blend = k_l * u * u + (1.0 - k_l) * u
    wc = span * np.sqrt(np.maximum(blend, 0.0)) + omega_min
    gap = (wc - log.omega)[keep].reshape(-1)
    slope, _ = _lstsq(gap[:, None], w_dot[keep].reshape(-1))
    if slope[0] <= 0.0:
        raise InsufficientExcitation("no usable motor transients")
    return MotorFit(omega_min, omega_max, k_l, float(1.0 / slope[0]))


# ---------------------------------------------------------------------------
# simulated excitation logs (the self-test oracle for the estimators)


def simulate_chirp_log(params: ModelParams, duration: float = 10.0, dt: float = 0.002,
                       sample_every: int = 5) -> FlightLog:
    """Fly a chirped per-motor command sequence and log exact regressors.

    The commands sweep 0.3..3 Hz around the hover command with distinct
    per-motor phases so every coefficient is excited.
    """
    pa = ParamArrays(params)
    u_h = hover_command(params)
    n_steps = int(round(duration / dt))
    x = np.zeros((1, 16))
    x[0, 2] = -2.0
    x[0, 12:16] = _motor_speed_batch(np.full((1, 4), u_h), pa)[0]

    phases = np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2])
    rows = {k: [] for k in ("t", "vB", "Om", "F", "w", "Omd", "wd", "u")}
    for k in range(n_steps):
        t = k * dt
        f = 0.3 + 2.7 * t / duration
        u = u_h + 0.22 * np.sin(2.0 * np.pi * f * t + phases) \
            + 0.08 * np.sin(2.0 * np.pi * 3.1 * f * t + 2.0 * phases)
        u = np.clip(u, 0.0, 1.0)[None, :]
        if k % sample_every == 0:
            dx = derivative_batch(x, u, pa)[0]
            from .dynamics import _rotation_batch

            R = _rotation_batch(x[:, 6:9])[0]
            vB = R.T @ x[0, 3:6]
            w = x[0, 12:16]
            wd = dx[12:16]
            sum_w = w.sum()
            F = np.array([
                -pa.k_x[0] * vB[0] * sum_w,
                -pa.k_y[0] * vB[1] * sum_w,
                -pa.k_omega[0] * (w ** 2).sum(),
            ])
            rows["t"].append(t)
            rows["vB"].append(vB)
            rows["Om"].append(x[0, 9:12].copy())
            rows["F"].append(F)
            rows["w"].append(w.copy())
            rows["Omd"].append(dx[9:12])
            rows["wd"].append(wd)
            rows["u"].append(u[0])
        x, nonfinite, _ = rk4_step_batch(x, u, pa, dt)
        if nonfinite[0]:
            raise RuntimeError("chirp excitation blew up; reduce amplitude")
        x[0, 0:3] = 0.0  # position is irrelevant to the fits; keep it bounded
        x[0, 2] = -2.0
    return FlightLog(
        t=np.array(rows["t"]),
        v_body=np.stack(rows["vB"]),
        Omega=np.stack(rows["Om"]),
        force=np.stack(rows["F"]),
        omega=np.stack(rows["w"]),
        Omega_dot=np.stack(rows["Omd"]),
        omega_dot=np.stack(rows["wd"]),
        u=np.stack(rows["u"]),
    )


def simulate_motor_step_log(params: ModelParams, dt: float = 0.002,
                            hold: float = 0.8) -> FlightLog:
    """Step the motors through command levels spanning [0, 1].

    Only the rotor-speed ODE matters here, so the rigid body is left at
    rest and the rotor states are integrated exactly like the simulator
    does.
    """
    pa = ParamArrays(params)
    levels = [0.0, 1.0, 0.25, 0.75, 0.1, 0.9, 0.5, 0.0, 1.0]
    n_hold = int(round(hold / dt))
    x = np.zeros((1, 16))
    x[0, 2] = -2.0
    x[0, 12:16] = params.omega_min
    rows = {k: [] for k in ("t", "vB", "Om", "F", "w", "wd", "u")}
    t = 0.0
    for level in levels:
        u = np.full((1, 4), level)
        for _ in range(n_hold):
            w = x[0, 12:16].copy()
            wc = _motor_speed_batch(u, pa)[0]
            wd = (wc - w) / params.tau
            rows["t"].append(t)
            rows["w"].append(w)
            rows["wd"].append(wd)
            rows["u"].append(u[0].copy())
            rows["vB"].append(np.zeros(3))
            rows["Om"].append(np.zeros(3))
            rows["F"].append(np.zeros(3))
            # exact first-order-lag update keeps the log self-consistent
            decay = np.exp(-dt / params.tau)
            x[0, 12:16] = wc + (w - wc) * decay
            t += dt
    return FlightLog(
        t=np.array(rows["t"]),
        v_body=np.stack(rows["vB"]),
        Omega=np.stack(rows["Om"]),
        force=np.stack(rows["F"]),
        omega=np.stack(rows["w"]),
        omega_dot=np.stack(rows["wd"]),
        u=np.stack(rows["u"]),
    )


def identify(chirp_log: FlightLog, step_log: FlightLog) -> ModelParams:
    """Combine the three fits into a normalized parameter set."""
    motor = fit_motor_params(step_log)
    force = fit_force_params(chirp_log)
    mom = fit_moment_params(chirp_log)
    raw = PhysicalParams(
        k_omega=force.k_omega,
        k_x=force.k_x,
        k_y=force.k_y,
        k_p=tuple(mom.k_p),
        k_q=tuple(mom.k_q),
        k_r=tuple(mom.k_r),
        k_rd=tuple(mom.k_rd),
        omega_min=motor.omega_min,
        omega_max=motor.omega_max,
        k_l=motor.k_l,
        tau=motor.tau,
    )
    return normalize_params(raw)


# ---------------------------------------------------------------------------
# CSV interface

_LOG_COLUMNS = [
    "t", "vbx", "vby", "vbz", "p_rate", "q_rate", "r_rate",
    "fx", "fy", "fz", "w1", "w2", "w3", "w4",
    "u1", "u2", "u3", "u4",
]


def write_flight_log(log: FlightLog, path: str | Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_LOG_COLUMNS)
        u = log.u if log.u is not None else np.zeros((len(log.t), 4))
        for i in range(len(log.t)):
            w.writerow([f"{v:.12g}" for v in (
                log.t[i], *log.v_body[i], *log.Omega[i], *log.force[i],
                *log.omega[i], *u[i])])


def read_flight_log(path: str | Path) -> FlightLog:
    data = np.genfromtxt(path, delimiter=",", names=True)
    cols = {name: np.atleast_1d(data[name]) for name in data.dtype.names}
    return FlightLog(
        t=cols["t"],
        v_body=np.stack([cols["vbx"], cols["vby"], cols["vbz"]], axis=1),
        Omega=np.stack([cols["p_rate"], cols["q_rate"], cols["r_rate"]], axis=1),
        force=np.stack([cols["fx"], cols["fy"], cols["fz"]], axis=1),
        omega=np.stack([cols[f"w{i}"] for i in range(1, 5)], axis=1),
        u=np.stack([cols[f"u{i}"] for i in range(1, 5)], axis=1)
        if "u1" in cols else None,
    )
