"""Policy evaluation: batched deterministic rollouts, per-rollout records,
aggregate metrics, cross-platform evaluation matrices, and CSV/figure
export (figures are written as SVG next to the delimited output).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .env import VecRaceEnv, DoneReason, MAX_STEPS
from .policy import Policy
from .track import Track

__all__ = [
    "RolloutRecord",
    "EvalReport",
    "evaluate",
    "cross_eval",
    "export_report",
    "export_cross_eval",
    "AGGREGATE_COLUMNS",
]

AGGREGATE_COLUMNS = ["net", "env", "ep_rew", "ep_len", "gates", "crash_pct", "v_mean", "v_max"]


@dataclass(frozen=True)
class RolloutRecord:
    episode_reward: float
    episode_length: int
    gates_passed: int
    crashed: bool
    v_mean: float
    v_max: float
    done_reason: str


@dataclass
class EvalReport:
    net: str
    env: str
    records: list[RolloutRecord]
    trajectories: list[np.ndarray]

    def aggregates(self) -> dict:
        n = len(self.records)
        return {
            "net": self.net,
            "env": self.env,
            "ep_rew": float(np.mean([r.episode_reward for r in self.records])),
            "ep_len": float(np.mean([r.episode_length for r in self.records])),
            "gates": float(np.mean([r.gates_passed for r in self.records])),
            "crash_pct": 100.0 * sum(r.crashed for r in self.records) / n,
            "v_mean": float(np.mean([r.v_mean for r in self.records])),
            "v_max": float(np.mean([r.v_max for r in self.records])),
        }

    def blowup_fraction(self) -> float:
        n = len(self.records)
        return sum(r.done_reason == "NUMERIC_BLOWUP" for r in self.records) / n


def evaluate(
    policy: Policy,
    track: Track,
    scheme,
    n_rollouts: int,
    seed: int,
    crash_includes_miss: bool = False,
    record_trajectories: int = 0,
    net_name: str = "policy",
    env_name: str = "env",
    batch_size: int | None = None,
) -> EvalReport:
    """Run full episodes with the deterministic action mean.

    Rollout i draws its initial conditions from the i-th spawned stream
    of ``seed``, so different policies evaluated with the same seed see
    identical initial states.  ``batch_size`` only limits how many envs
    run simultaneously; results are independent of it.
    """
    batch = n_rollouts if batch_size is None else min(batch_size, n_rollouts)
    records: list[RolloutRecord | None] = [None] * n_rollouts
    trajectories = []
    for start in range(0, n_rollouts, batch):
        count = min(batch, n_rollouts - start)
        env = VecRaceEnv(track, scheme, count, seed=seed, auto_reset=False)
        # shift each env onto the stream of its global rollout index
        seqs = np.random.SeedSequence(seed).spawn(n_rollouts)
        env._rngs = [np.random.default_rng(seqs[start + i]) for i in range(count)]
        obs = env.reset_all()

        rewards = np.zeros(count)
        speed_sum = np.zeros(count)
        speed_max = np.zeros(count)
        steps = np.zeros(count, dtype=int)
        n_track = min(record_trajectories - start, count) if record_trajectories > start else 0
        traj = [[env.x[i, 0:3].copy()] for i in range(n_track)]

        while not env.done.all():
            u = policy.act_deterministic(obs)
            obs, r, _, info = env.step(u)
            live = ~env.done | info["new_done"]
            rewards[live] += r[live]
            speed_sum[live] += info["speed"][live]
            speed_max[live] = np.maximum(speed_max[live], info["speed"][live])
            steps[live] += 1
            for i in range(n_track):
                if live[i]:
                    traj[i].append(env.x[i, 0:3].copy())

        for i in range(count):
            reason = DoneReason(int(env.done_reason[i]))
            crashed = reason in (DoneReason.COLLISION, DoneReason.NUMERIC_BLOWUP)
            if crash_includes_miss and reason == DoneReason.GATE_MISS:
                crashed = True
            records[start + i] = RolloutRecord(
                episode_reward=float(rewards[i]),
                episode_length=int(steps[i]),
                gates_passed=int(env.gates_passed[i]),
                crashed=bool(crashed),
                v_mean=float(speed_sum[i] / max(steps[i], 1)),
                v_max=float(speed_max[i]),
                done_reason=reason.name,
            )
        trajectories.extend(np.asarray(t) for t in traj)
    return EvalReport(net=net_name, env=env_name, records=records, trajectories=trajectories)


def cross_eval(policies: dict[str, Policy], env_specs: dict[str, tuple[Track, object]],
               n_rollouts: int, seed: int, **kwargs) -> dict[tuple[str, str], EvalReport]:
    """Cartesian evaluation; every cell of one env column shares seeds."""
    out = {}
    for env_name, (track, scheme) in env_specs.items():
        for net_name, policy in policies.items():
            out[(net_name, env_name)] = evaluate(
                policy, track, scheme, n_rollouts, seed,
                net_name=net_name, env_name=env_name, **kwargs,
            )
    return out


# ---------------------------------------------------------------------------
# export


def _write_records_csv(report: EvalReport, path: Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode_reward", "episode_length", "gates_passed",
                    "crashed", "v_mean", "v_max", "done_reason"])
        for r in report.records:
            w.writerow([f"{r.episode_reward:.6f}", r.episode_length, r.gates_passed,
                        int(r.crashed), f"{r.v_mean:.4f}", f"{r.v_max:.4f}", r.done_reason])


def _write_aggregate_csv(reports: list[EvalReport], path: Path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(AGGREGATE_COLUMNS)
        for rep in reports:
            a = rep.aggregates()
            w.writerow([a["net"], a["env"], f"{a['ep_rew']:.4f}", f"{a['ep_len']:.1f}",
                        f"{a['gates']:.3f}", f"{a['crash_pct']:.2f}",
                        f"{a['v_mean']:.3f}", f"{a['v_max']:.3f}"])


def _plot_trajectories(report: EvalReport, track: Track, path: Path):
    fig, ax = plt.subplots(figsize=(6, 6))
    hx, hy = track.bounds[0] / 2, track.bounds[1] / 2
    for g in track.gates:
        a = g.center - g.half_size * g.lateral
        b = g.center + g.half_size * g.lateral
        ax.plot([a[0], b[0]], [a[1], b[1]], "k-", lw=3)
        ax.annotate("", xy=(g.center[0] + 0.5 * g.normal[0], g.center[1] + 0.5 * g.normal[1]),
                    xytext=(g.center[0], g.center[1]),
                    arrowprops=dict(arrowstyle="->", color="gray"))
    for tr in report.trajectories:
        ax.plot(tr[:, 0], tr[:, 1], lw=0.8)
    ax.set_xlim(-hx, hx)
    ax.set_ylim(-hy, hy)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{report.net} on {report.env}: top-down trajectories")
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_reward_boxes(reports: list[EvalReport], path: Path):
    fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(reports)), 4))
    data = [[r.episode_reward for r in rep.records] for rep in reports]
    labels = [f"{rep.net}\n{rep.env}" for rep in reports]
    ax.boxplot(data, tick_labels=labels)
    ax.set_ylabel("episode reward")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def export_report(report: EvalReport, track: Track, out_dir: str | Path) -> dict[str, Path]:
    """Write per-rollout CSV, aggregate CSV and SVG figures for one report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{report.net}_{report.env}"
    paths = {
        "rollouts": out_dir / f"rollouts_{tag}.csv",
        "aggregate": out_dir / "aggregate.csv",
        "boxplot": out_dir / "reward_boxplot.svg",
    }
    _write_records_csv(report, paths["rollouts"])
    _write_aggregate_csv([report], paths["aggregate"])
    _plot_reward_boxes([report], paths["boxplot"])
    if report.trajectories:
        paths["trajectories"] = out_dir / f"trajectories_{tag}.svg"
        _plot_trajectories(report, track, paths["trajectories"])
    return paths


def export_cross_eval(reports: dict[tuple[str, str], EvalReport], tracks: dict[str, Track],
                      out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reps = list(reports.values())
    paths = {
        "aggregate": out_dir / "aggregate.csv",
        "boxplot": out_dir / "reward_boxplot.svg",
    }
    _write_aggregate_csv(reps, paths["aggregate"])
    _plot_reward_boxes(reps, paths["boxplot"])
    for rep in reps:
        tag = f"{rep.net}_{rep.env}"
        _write_records_csv(rep, out_dir / f"rollouts_{tag}.csv")
        if rep.trajectories:
            _plot_trajectories(rep, tracks[rep.env], out_dir / f"trajectories_{tag}.svg")
    return paths
