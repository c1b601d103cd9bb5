"""PPO training loop: vectorized rollout collection, GAE, clipped
surrogate updates with Adam, curve logging and checkpointing.

Everything is serial numpy, so a fixed seed reproduces training
bit-for-bit.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import VecRaceEnv, DoneReason
from .errors import NonFiniteLoss
from .policy import Policy, ppo_loss_and_grad
from .track import Track

__all__ = ["PpoConfig", "RolloutBatch", "Adam", "collect_rollouts",
           "compute_gae", "ppo_update", "train", "CURVE_HEADER"]

CURVE_HEADER = ["update", "steps", "mean_ep_reward", "mean_ep_len",
                "clip_frac", "approx_kl", "loss_pi", "loss_v"]


@dataclass
class PpoConfig:
    n_envs: int = 100
    gamma: float = 0.999
    total_steps: int = 100_000_000
    rollout_length: int = 512
    minibatch_size: int = 6400
    epochs_per_update: int = 10
    clip_range: float = 0.2
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_range <= 0.0:
            raise ValueError("clip_range must be > 0")
        if (self.rollout_length * self.n_envs) % self.minibatch_size != 0:
            raise ValueError("rollout_length * n_envs must divide by minibatch_size")


@dataclass
class RolloutBatch:
    """On-policy segment of shape (T, N, ...) plus bootstrap values."""

    obs: np.ndarray
    actions_raw: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    timeout_values: np.ndarray  # V(terminal obs) where the episode hit the step cap
    last_values: np.ndarray
    episode_stats: list = field(default_factory=list)  # (return, length) of finished episodes


class Adam:
    """Adaptive-moment optimizer over a flat parameter vector."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        """Returns the parameter delta for this gradient."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1 ** self.t)
        vh = self.v / (1.0 - self.beta2 ** self.t)
        return -lr * mh / (np.sqrt(vh) + self.eps)


def collect_rollouts(policy: Policy, env: VecRaceEnv, rollout_length: int,
                     rng: np.random.Generator) -> RolloutBatch:
    """Run the policy for a fixed-length on-policy segment.

    Episodes that hit the step cap are recorded with the value of their
    terminal observation so GAE can bootstrap across the truncation.
    """
    n = env.n_envs
    obs = env.observe()
    b_obs = np.empty((rollout_length, n, obs.shape[1]))
    b_actions = np.empty((rollout_length, n, 4))
    b_rewards = np.empty((rollout_length, n))
    b_values = np.empty((rollout_length, n))
    b_logp = np.empty((rollout_length, n))
    b_dones = np.empty((rollout_length, n), dtype=bool)
    b_tv = np.zeros((rollout_length, n))
    stats = []

    for t in range(rollout_length):
        u, raw, logp = policy.sample_action(obs, rng)
        values = policy.value(obs)
        next_obs, rewards, dones, info = env.step(u)
        b_obs[t] = obs
        b_actions[t] = raw
        b_rewards[t] = rewards
        b_values[t] = values
        b_logp[t] = logp
        b_dones[t] = dones
        timeout = info["timeout"]
        if timeout.any():
            term = info["terminal_observation"]
            b_tv[t, timeout] = policy.value(term[timeout])
        for i in np.flatnonzero(info["new_done"]):
            stats.append((float(info["episode_return"][i]), int(info["episode_length"][i])))
        obs = next_obs

    last_values = policy.value(obs)
    return RolloutBatch(b_obs, b_actions, b_rewards, b_values, b_logp, b_dones,
                        b_tv, last_values, stats)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_values: np.ndarray, gamma: float, lam: float,
                timeout_values: np.ndarray | None = None):
    """Generalized advantage estimation over a (T, N) batch.

    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t and
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}.  ``timeout_values``
    adds gamma*V(terminal) to the reward of truncated steps before the
    recursion.  Returns (advantages, returns) with returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=float)
    if timeout_values is not None:
        rewards = rewards + gamma * timeout_values
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_adv = np.zeros_like(last_values, dtype=float)
    next_values = np.asarray(last_values, dtype=float)
    for t in range(T - 1, -1, -1):
        notdone = 1.0 - dones[t].astype(float)
        delta = rewards[t] + gamma * next_values * notdone - values[t]
        next_adv = delta + gamma * lam * notdone * next_adv
        adv[t] = next_adv
        next_values = values[t]
    return adv, adv + values


def ppo_update(policy: Policy, batch: RolloutBatch, config: PpoConfig,
               optimizer: Adam, rng: np.random.Generator) -> dict:
    """Run epochs of shuffled-minibatch clipped-surrogate updates.

    Raises NonFiniteLoss (parameters unchanged for the offending step)
    if the loss stops being finite.
    """
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones,
                           batch.last_values, config.gamma, config.gae_lambda,
                           batch.timeout_values)
    obs = batch.obs.reshape(-1, batch.obs.shape[-1])
    actions = batch.actions_raw.reshape(-1, 4)
    old_logp = batch.log_probs.reshape(-1)
    adv = adv.reshape(-1)
    ret = ret.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = obs.shape[0]
    agg = {k: [] for k in ("loss_pi", "loss_v", "clip_frac", "approx_kl", "entropy")}
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for s in range(0, n, config.minibatch_size):
            mb = order[s : s + config.minibatch_size]
            theta = policy.theta.astype(np.float64)
            loss, grad, stats = ppo_loss_and_grad(
                theta, obs[mb], actions[mb], old_logp[mb], adv[mb], ret[mb],
                config.clip_range, config.value_coef, config.entropy_coef,
            )
            if not np.isfinite(loss) or not np.isfinite(grad).all():
                raise NonFiniteLoss(f"loss={loss}")
            gnorm = float(np.linalg.norm(grad))
            if gnorm > config.max_grad_norm:
                grad = grad * (config.max_grad_norm / gnorm)
            theta = theta + optimizer.step(grad, config.learning_rate)
            p64 = theta
            # clamp log-std after every update
            ls = slice_log_std(p64)
            np.clip(ls, -20.0, 2.0, out=ls)
            policy.theta = p64.astype(np.float32)
            for k in agg:
                agg[k].append(stats[k])
    return {k: float(np.mean(v)) for k, v in agg.items()}


def slice_log_std(theta: np.ndarray) -> np.ndarray:
    from .policy import unpack

    return unpack(theta)["log_std"]


def train(track: Track, scheme, config: PpoConfig, out_dir: str | Path,
          checkpoint_every: int | None = None, log=print) -> Path:
    """Full training run; writes curve.csv and checkpoints, returns the
    final checkpoint prefix."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.SeedSequence(config.seed)
    init_seq, act_seq, shuffle_seq, env_seed = master.spawn(4)
    policy = Policy.init(np.random.default_rng(init_seq))
    act_rng = np.random.default_rng(act_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    env = VecRaceEnv(track, scheme, config.n_envs, seed=config.seed)
    optimizer = Adam(policy.theta.size)

    steps_per_update = config.rollout_length * config.n_envs
    n_updates = int(config.total_steps) // steps_per_update
    recent = deque(maxlen=100)
    curve_path = out_dir / "curve.csv"
    final_prefix = out_dir / "checkpoint_final"
    with open(curve_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_HEADER)
        for update in range(1, n_updates + 1):
            batch = collect_rollouts(policy, env, config.rollout_length, act_rng)
            recent.extend(batch.episode_stats)
            try:
                stats = ppo_update(policy, batch, config, optimizer, shuffle_rng)
            except NonFiniteLoss:
                policy.save(out_dir / f"checkpoint_{update * steps_per_update:09d}",
                            extra={"training_step": update * steps_per_update})
                raise
            mean_rew = float(np.mean([r for r, _ in recent])) if recent else float("nan")
            mean_len = float(np.mean([l for _, l in recent])) if recent else float("nan")
            writer.writerow([
                update, update * steps_per_update,
                f"{mean_rew:.6f}", f"{mean_len:.2f}",
                f"{stats['clip_frac']:.6f}", f"{stats['approx_kl']:.6f}",
                f"{stats['loss_pi']:.6f}", f"{stats['loss_v']:.6f}",
            ])
            f.flush()
            if log:
                log(f"update {update}/{n_updates} steps={update * steps_per_update} "
                    f"ep_rew={mean_rew:.2f} ep_len={mean_len:.0f} "
                    f"kl={stats['approx_kl']:.4f}")
            if checkpoint_every and update % checkpoint_every == 0:
                policy.save(out_dir / f"checkpoint_{update * steps_per_update:09d}",
                            extra={"training_step": update * steps_per_update})
    policy.save(final_prefix, extra={"training_step": n_updates * steps_per_update})
    return final_prefix
