"""The drone-racing Markov decision process.

Vectorized over N drones: reset distribution, 20-dimensional gate-frame
observation, progress/rate/collision reward, termination rules and
auto-reset.  ``RaceEnv`` wraps a single episode for callers that want
explicit done semantics.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .dynamics import ParamArrays, rk4_step_batch, wrap_angle, _motor_speed_batch
from .errors import AlreadyDone
from .track import Track

__all__ = [
    "DoneReason",
    "OBS_DIM",
    "DT",
    "MAX_STEPS",
    "OMEGA_OBS_SCALE",
    "RATE_PENALTY",
    "COLLISION_REWARD",
    "VecRaceEnv",
    "RaceEnv",
    "StepResult",
    "build_observation",
    "progress_reward",
    "TRAJECTORY_HEADER",
    "TrajectoryLogger",
]

OBS_DIM = 20
DT = 0.01
MAX_STEPS = 1200
OMEGA_OBS_SCALE = 5000.0  # fixed scale; per-drone omega_max is hidden from the policy
RATE_PENALTY = 0.001
COLLISION_REWARD = -10.0

# initial-state ranges
RESET_V = 0.5
RESET_TILT = np.pi / 9
RESET_RATE = 0.1
RESET_GATE_DISTANCE = 1.0


class DoneReason(IntEnum):
    RUNNING = 0
    COLLISION = 1
    GATE_MISS = 2
    TIMEOUT = 3
    NUMERIC_BLOWUP = 4


def build_observation(
    p: np.ndarray,
    v: np.ndarray,
    lam: np.ndarray,
    Omega: np.ndarray,
    omega: np.ndarray,
    target_idx: np.ndarray,
    track: Track,
) -> np.ndarray:
    """Gate-frame observation, (N, 20).

    Position/velocity/yaw are expressed relative to the current target
    gate (yaw-only frame at the gate center); body rates pass through
    raw; rotor speeds are divided by a fixed 5000 rad/s; the next gate's
    pose is given in the current gate frame.
    """
    centers = track.centers()
    yaws = track.yaws()
    c = centers[target_idx]
    psi_g = yaws[target_idx]
    cg, sg = np.cos(psi_g), np.sin(psi_g)

    def to_gate(vec):
        out = np.empty_like(vec)
        out[:, 0] = cg * vec[:, 0] + sg * vec[:, 1]
        out[:, 1] = -sg * vec[:, 0] + cg * vec[:, 1]
        out[:, 2] = vec[:, 2]
        return out

    nxt = (target_idx + 1) % track.n_gates
    obs = np.empty((p.shape[0], OBS_DIM))
    obs[:, 0:3] = to_gate(p - c)
    obs[:, 3:6] = to_gate(v)
    obs[:, 6] = lam[:, 0]
    obs[:, 7] = lam[:, 1]
    obs[:, 8] = wrap_angle(lam[:, 2] - psi_g)
    obs[:, 9:12] = Omega
    obs[:, 12:16] = omega / OMEGA_OBS_SCALE
    obs[:, 16:19] = to_gate(centers[nxt] - c)
    obs[:, 19] = wrap_angle(yaws[nxt] - psi_g)
    return obs


def progress_reward(
    p_prev: np.ndarray,
    p_curr: np.ndarray,
    gate_center: np.ndarray,
    Omega: np.ndarray,
    collided: np.ndarray,
) -> np.ndarray:
    """Per-step reward: distance progress toward the target gate minus a
    body-rate penalty, replaced by the collision penalty where collided."""
    d_prev = np.linalg.norm(p_prev - gate_center, axis=-1)
    d_curr = np.linalg.norm(p_curr - gate_center, axis=-1)
    r = d_prev - d_curr - RATE_PENALTY * np.linalg.norm(Omega, axis=-1)
    return np.where(collided, COLLISION_REWARD, r)


class VecRaceEnv:
    """N independent racing episodes stepped in lock-step.

    Per-env RNG streams are spawned from the master seed, so results are
    independent of how many envs run together or how stepping work is
    chunked.  With ``auto_reset`` a finished episode is immediately
    replaced; without it, finished slots freeze until ``reset_done()``.
    """

    def __init__(
        self,
        track: Track,
        scheme,
        n_envs: int,
        seed: int,
        dt: float = DT,
        max_steps: int = MAX_STEPS,
        auto_reset: bool = True,
    ):
        self.track = track
        self.scheme = scheme
        self.n_envs = n_envs
        self.dt = dt
        self.max_steps = max_steps
        self.auto_reset = auto_reset
        self._rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_envs)]
        self.params = ParamArrays([scheme.sample(self._rngs[i]) for i in range(n_envs)])
        # those first samples were only used to size the batch; resample on reset
        self._rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_envs)]

        self.x = np.zeros((n_envs, 16))
        self.prev_p = np.zeros((n_envs, 3))
        self.target_gate = np.zeros(n_envs, dtype=int)
        self.gates_passed = np.zeros(n_envs, dtype=int)
        self.step_count = np.zeros(n_envs, dtype=int)
        self.clamp_streak = np.zeros(n_envs, dtype=int)
        self.done = np.zeros(n_envs, dtype=bool)
        self.done_reason = np.full(n_envs, DoneReason.RUNNING, dtype=int)
        self.episode_return = np.zeros(n_envs)
        for i in range(n_envs):
            self._reset_env(i)

    # -- reset ----------------------------------------------------------

    def _reset_env(self, i: int):
        rng = self._rngs[i]
        params = self.scheme.sample(rng)
        self.params.set_row(i, params)
        gate_idx = int(rng.integers(self.track.n_gates))
        gate = self.track.gates[gate_idx]
        v = rng.uniform(-RESET_V, RESET_V, size=3)
        phi = rng.uniform(-RESET_TILT, RESET_TILT)
        theta = rng.uniform(-RESET_TILT, RESET_TILT)
        psi = rng.uniform(-np.pi, np.pi)
        Om = rng.uniform(-RESET_RATE, RESET_RATE, size=3)
        omega = rng.uniform(params.omega_min, params.omega_max, size=4)
        p = gate.center - RESET_GATE_DISTANCE * gate.normal
        self.x[i, 0:3] = p
        self.x[i, 3:6] = v
        self.x[i, 6:9] = (phi, theta, psi)
        self.x[i, 9:12] = Om
        self.x[i, 12:16] = omega
        self.prev_p[i] = p
        self.target_gate[i] = gate_idx
        self.gates_passed[i] = 0
        self.step_count[i] = 0
        self.clamp_streak[i] = 0
        self.done[i] = False
        self.done_reason[i] = DoneReason.RUNNING
        self.episode_return[i] = 0.0

    def reset_done(self):
        for i in np.flatnonzero(self.done):
            self._reset_env(i)

    def reset_all(self) -> np.ndarray:
        for i in range(self.n_envs):
            self._reset_env(i)
        return self.observe()

    # -- observation ----------------------------------------------------

    def observe(self) -> np.ndarray:
        obs = build_observation(
            self.x[:, 0:3],
            self.x[:, 3:6],
            self.x[:, 6:9],
            self.x[:, 9:12],
            self.x[:, 12:16],
            self.target_gate,
            self.track,
        )
        return np.nan_to_num(obs, nan=0.0, posinf=0.0, neginf=0.0)

    # -- stepping -------------------------------------------------------

    def step(self, actions: np.ndarray, chunk_size: int | None = None):
        """Advance all running envs one dt.

        Returns (obs, rewards, dones, info); info carries gates_passed,
        speed, done_reason, timeout flags and the terminal observation of
        envs that finished this step.  ``chunk_size`` splits the dynamics
        integration into blocks (results are identical for any value).
        """
        actions = np.clip(np.asarray(actions, dtype=float).reshape(self.n_envs, 4), 0.0, 1.0)
        active = ~self.done

        x_new = self.x.copy()
        nonfinite = np.zeros(self.n_envs, dtype=bool)
        clamped = np.zeros(self.n_envs, dtype=bool)
        idx = np.flatnonzero(active)
        step_block = len(idx) if chunk_size is None else chunk_size
        for s in range(0, len(idx), max(step_block, 1)):
            blk = idx[s : s + step_block]
            sub = ParamArrays.__new__(ParamArrays)
            for name in ("k_omega", "k_x", "k_y", "k_p", "k_q", "k_r", "k_rd",
                         "omega_min", "omega_max", "k_l", "tau"):
                setattr(sub, name, getattr(self.params, name)[blk])
            xb, nf, cl = rk4_step_batch(self.x[blk], actions[blk], sub, self.dt)
            x_new[blk] = xb
            nonfinite[blk] = nf
            clamped[blk] = cl

        p_prev = self.x[:, 0:3]
        p_new = x_new[:, 0:3]

        centers = self.track.centers()
        yaws = self.track.yaws()
        half = self.track.half_sizes()
        c = centers[self.target_gate]
        psi_g = yaws[self.target_gate]
        nvec = np.stack([np.cos(psi_g), np.sin(psi_g), np.zeros_like(psi_g)], axis=1)

        with np.errstate(invalid="ignore"):
            d0 = ((p_prev - c) * nvec).sum(axis=1)
            d1 = ((p_new - c) * nvec).sum(axis=1)
            forward = (d0 < 0.0) & (d1 >= 0.0)
            reverse = (d0 >= 0.0) & (d1 < 0.0)
            crossing = (forward | reverse) & active & ~nonfinite
            alpha = np.zeros(self.n_envs)
            denom = d0 - d1
            np.divide(d0, denom, out=alpha, where=crossing & (denom != 0.0))
            point = p_prev + alpha[:, None] * (p_new - p_prev)
            rel = point - c
            lat = np.stack([-np.sin(psi_g), np.cos(psi_g), np.zeros_like(psi_g)], axis=1)
            in_aperture = (np.abs((rel * lat).sum(axis=1)) <= half[self.target_gate]) & (
                np.abs(rel[:, 2]) <= half[self.target_gate]
            )
            passed = crossing & forward & in_aperture
            missed = crossing & ~passed

            # progress is measured against the gate targeted at step start
            hx, hy, sz = self.track.bounds[0] / 2, self.track.bounds[1] / 2, self.track.bounds[2]
            oob = (
                (np.abs(p_new[:, 0]) > hx)
                | (np.abs(p_new[:, 1]) > hy)
                | (p_new[:, 2] < -sz)
                | (p_new[:, 2] >= 0.0)
            )
        self.clamp_streak = np.where(clamped, self.clamp_streak + 1, 0)
        gimbal_crash = self.clamp_streak >= 2
        collided = (oob | gimbal_crash | nonfinite) & active

        rewards = np.zeros(self.n_envs)
        rewards[active] = progress_reward(
            p_prev[active], p_new[active], c[active], x_new[active, 9:12], collided[active]
        )
        rewards[nonfinite] = COLLISION_REWARD

        self.x[active] = x_new[active]
        self.prev_p[active] = p_prev[active]
        self.step_count[active] += 1
        self.gates_passed[passed] += 1
        self.target_gate[passed] = (self.target_gate[passed] + 1) % self.track.n_gates
        self.episode_return[active] += rewards[active]

        timeout = active & (self.step_count >= self.max_steps)
        new_done = collided | missed | timeout
        reason = np.full(self.n_envs, DoneReason.RUNNING, dtype=int)
        reason[timeout] = DoneReason.TIMEOUT
        reason[missed] = DoneReason.GATE_MISS
        reason[collided] = DoneReason.COLLISION
        reason[nonfinite & active] = DoneReason.NUMERIC_BLOWUP

        self.done |= new_done
        self.done_reason[new_done] = reason[new_done]

        with np.errstate(invalid="ignore"):
            speed = np.linalg.norm(np.nan_to_num(self.x[:, 3:6]), axis=1)
        info = {
            "gates_passed": self.gates_passed.copy(),
            "speed": speed,
            "done_reason": self.done_reason.copy(),
            "timeout": timeout & ~(collided | missed),
            "new_done": new_done,
            "episode_return": self.episode_return.copy(),
            "episode_length": self.step_count.copy(),
            "terminal_observation": None,
        }
        if new_done.any():
            info["terminal_observation"] = self.observe()
        if self.auto_reset:
            for i in np.flatnonzero(new_done):
                self._reset_env(i)
        return self.observe(), rewards, new_done, info


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class RaceEnv:
    """Single-episode wrapper with explicit done semantics."""

    def __init__(self, track: Track, scheme, seed: int, dt: float = DT, max_steps: int = MAX_STEPS):
        self._vec = VecRaceEnv(track, scheme, 1, seed, dt=dt, max_steps=max_steps, auto_reset=False)

    @property
    def state(self) -> np.ndarray:
        return self._vec.x[0]

    @property
    def target_gate(self) -> int:
        return int(self._vec.target_gate[0])

    @property
    def gates_passed(self) -> int:
        return int(self._vec.gates_passed[0])

    @property
    def done(self) -> bool:
        return bool(self._vec.done[0])

    @property
    def done_reason(self) -> DoneReason:
        return DoneReason(int(self._vec.done_reason[0]))

    def reset(self) -> np.ndarray:
        return self._vec.reset_all()[0]

    def observe(self) -> np.ndarray:
        return self._vec.observe()[0]

    def step(self, u: np.ndarray) -> StepResult:
        if self.done:
            raise AlreadyDone("episode already terminated; call reset()")
        obs, rew, done, info = self._vec.step(np.asarray(u).reshape(1, 4))
        return StepResult(
            observation=obs[0],
            reward=float(rew[0]),
            done=bool(done[0]),
            info={
                "gates_passed": int(info["gates_passed"][0]),
                "speed": float(info["speed"][0]),
                "done_reason": DoneReason(int(info["done_reason"][0])),
            },
        )


TRAJECTORY_HEADER = (
    "t,px,py,pz,vx,vy,vz,phi,theta,psi,p_rate,q_rate,r_rate,"
    "w1,w2,w3,w4,u1,u2,u3,u4,reward,target_gate,gates_passed"
)


class TrajectoryLogger:
    """Accumulates per-step rows of one episode and writes the CSV log."""

    def __init__(self):
        self.rows = []

    def append(self, t: float, x: np.ndarray, u: np.ndarray, reward: float,
               target_gate: int, gates_passed: int):
        self.rows.append(
            [t, *x[0:3], *x[3:6], *x[6:9], *x[9:12], *x[12:16], *u,
             reward, target_gate, gates_passed]
        )

    def write(self, path: str | Path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(TRAJECTORY_HEADER.split(","))
            for row in self.rows:
                w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])
