"""Actor-critic network: shared 3x64 ReLU trunk, Gaussian action head,
scalar value head.  Pure numpy, with hand-derived gradients of the PPO
loss so training needs no autodiff framework.

Parameters live in one flat float32 vector; ``unpack`` exposes named
views.  Checkpoints are a JSON manifest plus a little-endian float32
binary blob in the documented layer order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint

__all__ = [
    "LAYOUT",
    "N_PARAMS",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "Policy",
    "unpack",
    "init_params",
    "ppo_loss_and_grad",
]

OBS_DIM = 20
ACT_DIM = 4
HIDDEN = 64

LAYOUT = (
    ("w1", (OBS_DIM, HIDDEN)),
    ("b1", (HIDDEN,)),
    ("w2", (HIDDEN, HIDDEN)),
    ("b2", (HIDDEN,)),
    ("w3", (HIDDEN, HIDDEN)),
    ("b3", (HIDDEN,)),
    ("wa", (HIDDEN, ACT_DIM)),
    ("ba", (ACT_DIM,)),
    ("log_std", (ACT_DIM,)),
    ("wc", (HIDDEN, 1)),
    ("bc", (1,)),
)
N_PARAMS = sum(int(np.prod(s)) for _, s in LAYOUT)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


def unpack(theta: np.ndarray) -> dict[str, np.ndarray]:
    """Named views into the flat parameter vector (no copies)."""
    out = {}
    i = 0
    for name, shape in LAYOUT:
        n = int(np.prod(shape))
        out[name] = theta[i : i + n].reshape(shape)
        i += n
    return out


def _orthogonal(rng: np.random.Generator, shape, gain: float) -> np.ndarray:
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def init_params(rng: np.random.Generator) -> np.ndarray:
    """Orthogonal init: gain sqrt(2) hidden, 0.01 actor head, 1 critic head."""
    theta = np.zeros(N_PARAMS, dtype=np.float32)
    p = unpack(theta)
    p["w1"][:] = _orthogonal(rng, (OBS_DIM, HIDDEN), np.sqrt(2.0))
    p["w2"][:] = _orthogonal(rng, (HIDDEN, HIDDEN), np.sqrt(2.0))
    p["w3"][:] = _orthogonal(rng, (HIDDEN, HIDDEN), np.sqrt(2.0))
    p["wa"][:] = _orthogonal(rng, (HIDDEN, ACT_DIM), 0.01)
    p["wc"][:] = _orthogonal(rng, (HIDDEN, 1), 1.0)
    return theta


def _forward(p: dict[str, np.ndarray], obs: np.ndarray):
    h1 = np.maximum(obs @ p["w1"] + p["b1"], 0.0)
    h2 = np.maximum(h1 @ p["w2"] + p["b2"], 0.0)
    h3 = np.maximum(h2 @ p["w3"] + p["b3"], 0.0)
    mean = h3 @ p["wa"] + p["ba"]
    value = (h3 @ p["wc"])[:, 0] + p["bc"][0]
    return h1, h2, h3, mean, value


class Policy:
    """Flat-parameter actor-critic with float32 canonical storage."""

    def __init__(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float32).reshape(N_PARAMS)
        self.theta = theta.copy()

    @classmethod
    def init(cls, rng: np.random.Generator) -> "Policy":
        return cls(init_params(rng))

    def _params64(self) -> dict[str, np.ndarray]:
        return unpack(self.theta.astype(np.float64))

    def forward(self, obs: np.ndarray):
        """Deterministic pass: (action_mean, value) for a batch or single obs."""
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        if single:
            obs = obs[None, :]
        _, _, _, mean, value = _forward(self._params64(), obs)
        if single:
            return mean[0], float(value[0])
        return mean, value

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self.forward(obs)
        return np.clip(mean, 0.0, 1.0)

    def sample_action(self, obs: np.ndarray, rng: np.random.Generator):
        """Stochastic head: returns (clipped commands, raw sample, log_prob).

        The Gaussian sample is clipped to [0, 1] for the environment; the
        log-probability is that of the unclipped sample, which is what the
        PPO ratio uses.
        """
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        if single:
            obs = obs[None, :]
        p = self._params64()
        _, _, _, mean, _ = _forward(p, obs)
        log_std = p["log_std"]
        std = np.exp(log_std)
        raw = mean + std * rng.standard_normal(mean.shape)
        logp = (
            -0.5 * (((raw - mean) / std) ** 2).sum(axis=1)
            - log_std.sum()
            - 0.5 * ACT_DIM * _LOG_2PI
        )
        u = np.clip(raw, 0.0, 1.0)
        if single:
            return u[0], raw[0], float(logp[0])
        return u, raw, logp

    def log_prob_and_entropy(self, obs: np.ndarray, actions_raw: np.ndarray):
        """Diagonal-Gaussian log-density of stored raw actions and the
        (state-independent) entropy."""
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        if single:
            obs = obs[None, :]
            actions_raw = np.asarray(actions_raw)[None, :]
        p = self._params64()
        _, _, _, mean, _ = _forward(p, obs)
        log_std = p["log_std"]
        std = np.exp(log_std)
        logp = (
            -0.5 * (((actions_raw - mean) / std) ** 2).sum(axis=1)
            - log_std.sum()
            - 0.5 * ACT_DIM * _LOG_2PI
        )
        entropy = float(log_std.sum() + 0.5 * ACT_DIM * (1.0 + _LOG_2PI))
        if single:
            return float(logp[0]), entropy
        return logp, entropy

    def value(self, obs: np.ndarray):
        _, v = self.forward(obs)
        return v

    # -- checkpointing --------------------------------------------------

    def save(self, prefix: str | Path, extra: dict | None = None):
        """Write <prefix>.json (manifest) and <prefix>.bin (float32 blob)."""
        prefix = Path(prefix)
        manifest = {
            "format": "quadrace-policy-v1",
            "dtype": "<f4",
            "n_params": N_PARAMS,
            "layout": [[name, list(shape)] for name, shape in LAYOUT],
        }
        if extra:
            manifest.update(extra)
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
        self.theta.astype("<f4").tofile(prefix.with_suffix(".bin"))

    @classmethod
    def load(cls, prefix: str | Path) -> "Policy":
        prefix = Path(prefix)
        try:
            manifest = json.loads(prefix.with_suffix(".json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptCheckpoint(str(e)) from e
        if manifest.get("n_params") != N_PARAMS or [
            [n, list(s)] for n, s in LAYOUT
        ] != manifest.get("layout"):
            raise CorruptCheckpoint("checkpoint layout does not match this network")
        blob = np.fromfile(prefix.with_suffix(".bin"), dtype="<f4")
        if blob.size != N_PARAMS:
            raise CorruptCheckpoint(f"expected {N_PARAMS} values, got {blob.size}")
        return cls(blob)


def ppo_loss_and_grad(
    theta: np.ndarray,
    obs: np.ndarray,
    actions_raw: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    clip_range: float,
    value_coef: float,
    entropy_coef: float,
    compute_grad: bool = True,
):
    """Clipped-surrogate PPO loss, its gradient and diagnostics.

    Pure function of the float64 parameter vector, so the gradient can be
    validated against central finite differences.  Loss:
    -E[min(rho*A, clip(rho)*A)] + c_v*E[(V-R)^2] - c_e*entropy.
    """
    theta = np.asarray(theta, dtype=np.float64)
    p = unpack(theta)
    obs = np.asarray(obs, dtype=np.float64)
    B = obs.shape[0]

    h1, h2, h3, mean, value = _forward(p, obs)
    log_std = p["log_std"]
    std = np.exp(log_std)
    z = (actions_raw - mean) / std
    logp = -0.5 * (z * z).sum(axis=1) - log_std.sum() - 0.5 * ACT_DIM * _LOG_2PI
    entropy = log_std.sum() + 0.5 * ACT_DIM * (1.0 + _LOG_2PI)

    ratio = np.exp(logp - old_logp)
    s1 = ratio * advantages
    s2 = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages
    loss_pi = -np.minimum(s1, s2).mean()
    verr = value - returns
    loss_v = (verr * verr).mean()
    loss = loss_pi + value_coef * loss_v - entropy_coef * entropy

    stats = {
        "loss": float(loss),
        "loss_pi": float(loss_pi),
        "loss_v": float(loss_v),
        "entropy": float(entropy),
        "clip_frac": float((np.abs(ratio - 1.0) > clip_range).mean()),
        "approx_kl": float((old_logp - logp).mean()),
    }
    if not compute_grad:
        return loss, None, stats

    grad = np.zeros_like(theta)
    g = unpack(grad)

    use_unclipped = s1 <= s2
    g_logp = -(advantages * ratio * use_unclipped) / B
    # d logp / d mean = z / std ; d logp / d log_std_j = z_j^2 - 1
    dmean = g_logp[:, None] * (z / std)
    g["log_std"][:] = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0)
    g["log_std"] -= entropy_coef  # d entropy / d log_std_j = 1
    dvalue = value_coef * 2.0 * verr / B

    g["wa"][:] = h3.T @ dmean
    g["ba"][:] = dmean.sum(axis=0)
    g["wc"][:, 0] = h3.T @ dvalue
    g["bc"][0] = dvalue.sum()

    dh3 = dmean @ p["wa"].T + dvalue[:, None] * p["wc"][:, 0]
    dh3 *= h3 > 0.0
    g["w3"][:] = h2.T @ dh3
    g["b3"][:] = dh3.sum(axis=0)
    dh2 = dh3 @ p["w3"].T
    dh2 *= h2 > 0.0
    g["w2"][:] = h1.T @ dh2
    g["b2"][:] = dh2.sum(axis=0)
    dh1 = dh2 @ p["w2"].T
    dh1 *= h1 > 0.0
    g["w1"][:] = obs.T @ dh1
    g["b1"][:] = dh1.sum(axis=0)
    return loss, grad, stats
