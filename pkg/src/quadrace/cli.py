"""Command-line entry points: train, eval, cross-eval, plot, sysid."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ppo, sysid
from .evaluate import cross_eval, evaluate, export_cross_eval, export_report
from .params import builtin_params_path, load_params, save_params
from .policy import Policy
from .randomize import parse_scheme
from .track import builtin_track_path, load_track


def _load_track_arg(path: str | None):
    return load_track(path if path else builtin_track_path())


def _load_scheme(dr: str, params_path: str | None):
    base = load_params(params_path) if params_path else None
    return parse_scheme(dr, base)


def cmd_train(args) -> int:
    track = _load_track_arg(args.track)
    scheme = _load_scheme(args.dr, args.params)
    config = ppo.PpoConfig(
        total_steps=args.steps,
        seed=args.seed,
        n_envs=args.n_envs,
        rollout_length=args.rollout_length,
        minibatch_size=args.minibatch_size,
        learning_rate=args.learning_rate,
        epochs_per_update=args.epochs,
        entropy_coef=args.entropy_coef,
    )
    prefix = ppo.train(track, scheme, config, args.out,
                       checkpoint_every=args.checkpoint_every)
    print(f"final checkpoint: {prefix}")
    return 0


def cmd_eval(args) -> int:
    track = _load_track_arg(args.track)
    scheme = _load_scheme(args.dr, args.env_params)
    policy = Policy.load(args.checkpoint)
    report = evaluate(
        policy, track, scheme, args.n, args.seed,
        crash_includes_miss=args.crash_includes_miss,
        record_trajectories=args.plot_rollouts,
        net_name=Path(args.checkpoint).stem,
        env_name=Path(args.env_params).stem if args.env_params else args.dr,
    )
    paths = export_report(report, track, args.out)
    agg = report.aggregates()
    print(json.dumps(agg, indent=2))
    for k, p in paths.items():
        print(f"{k}: {p}")
    if report.blowup_fraction() > 0.5:
        print("error: numeric blow-up in most rollouts", file=sys.stderr)
        return 1
    return 0


def cmd_cross_eval(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    policies = {name: Policy.load(path) for name, path in manifest["policies"].items()}
    env_specs = {}
    tracks = {}
    for name, spec in manifest["envs"].items():
        track = _load_track_arg(spec.get("track"))
        scheme = _load_scheme(spec.get("dr", "fixed"), spec.get("params"))
        env_specs[name] = (track, scheme)
        tracks[name] = track
    reports = cross_eval(policies, env_specs, manifest.get("n", args.n), args.seed,
                         record_trajectories=args.plot_rollouts)
    paths = export_cross_eval(reports, tracks, args.out)
    for rep in reports.values():
        print(json.dumps(rep.aggregates()))
    for k, p in paths.items():
        print(f"{k}: {p}")
    if any(rep.blowup_fraction() > 0.5 for rep in reports.values()):
        print("error: numeric blow-up in most rollouts", file=sys.stderr)
        return 1
    return 0


def cmd_plot(args) -> int:
    """Re-render the reward box plot from an exported per-rollout CSV."""
    import csv as _csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rewards = []
    with open(args.report) as f:
        for row in _csv.DictReader(f):
            rewards.append(float(row["episode_reward"]))
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.boxplot([rewards], tick_labels=[Path(args.report).stem])
    ax.set_ylabel("episode reward")
    out = Path(args.out) / (Path(args.report).stem + ".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    print(f"figure: {out}")
    return 0


def cmd_sysid(args) -> int:
    """Identify parameters from flight-log CSVs and write a JSON report."""
    chirp = sysid.read_flight_log(args.log)
    step = sysid.read_flight_log(args.motor_log) if args.motor_log else chirp
    params = sysid.identify(chirp, step)
    save_params(params, args.out)
    force = sysid.fit_force_params(chirp)
    mom = sysid.fit_moment_params(chirp)
    print(json.dumps({
        "params": str(args.out),
        "force_rms": list(force.rms),
        "moment_rms": list(mom.rms),
    }, indent=2))
    return 0


def cmd_demo_logs(args) -> int:
    """Generate simulated excitation logs for the sysid self-test."""
    params = load_params(args.params if args.params else builtin_params_path("5inch"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sysid.write_flight_log(sysid.simulate_chirp_log(params), out / "chirp_log.csv")
    sysid.write_flight_log(sysid.simulate_motor_step_log(params), out / "motor_step_log.csv")
    print(f"wrote {out / 'chirp_log.csv'} and {out / 'motor_step_log.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadrace",
                                description="drone-racing simulation and RL toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy with PPO")
    t.add_argument("--dr", default="general", help="general | fixed | pct:<p>")
    t.add_argument("--params", help="base parameter JSON for fixed/pct schemes")
    t.add_argument("--track", help="track JSON (default: shipped figure-eight)")
    t.add_argument("--steps", type=int, default=100_000_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--n-envs", type=int, default=100)
    t.add_argument("--rollout-length", type=int, default=512)
    t.add_argument("--minibatch-size", type=int, default=6400)
    t.add_argument("--learning-rate", type=float, default=3e-4)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--entropy-coef", type=float, default=0.0)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env-params", help="parameter JSON of the evaluation platform")
    e.add_argument("--dr", default="fixed")
    e.add_argument("--track")
    e.add_argument("-n", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--crash-includes-miss", action="store_true",
                   help="count missed-gate endings as crashes")
    e.add_argument("--plot-rollouts", type=int, default=10,
                   help="number of rollouts to draw in the trajectory figure")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cross-eval", help="evaluate a policy/env matrix")
    c.add_argument("--manifest", required=True,
                   help='JSON: {"policies": {name: prefix}, "envs": {name: '
                        '{"dr": ..., "params": ..., "track": ...}}, "n": 1000}')
    c.add_argument("-n", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--plot-rollouts", type=int, default=5)
    c.set_defaults(func=cmd_cross_eval)

    pl = sub.add_parser("plot", help="plot a per-rollout report CSV")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out", default=".")
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("sysid", help="fit model parameters from a flight log")
    s.add_argument("--log", required=True, help="flight-log CSV with force columns")
    s.add_argument("--motor-log", help="step-excitation log for the motor constants")
    s.add_argument("--out", required=True, help="output parameter JSON")
    s.set_defaults(func=cmd_sysid)

    d = sub.add_parser("demo-logs", help="generate simulated sysid excitation logs")
    d.add_argument("--params")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demo_logs)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
