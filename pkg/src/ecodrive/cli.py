"""Command-line interface: run / train / sweep / baseline subcommands."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, load_config, load_train_config
from .controllers import load_checkpoint, save_checkpoint


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="config file (INI key/value)")
    p.add_argument("--seed", type=int, default=None, help="run seed (also the assignment seed)")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecodrive",
                                 description="Eco-driving intersection simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write metrics JSON")
    _common(run)
    run.add_argument("--penetration", type=float, default=None)
    run.add_argument("--human-model", choices=["vidm", "nidm", "midm"], default=None)
    run.add_argument("--controller", default=None,
                     help="force every vehicle to this controller kind")
    run.add_argument("--policy", type=Path, default=None, help="policy checkpoint for CAVs")
    run.add_argument("--replicates", type=int, default=1)
    run.add_argument("--trajectories", action="store_true", help="also export trajectory CSV")

    tr = sub.add_parser("train", help="train a policy, write checkpoint and learning curve")
    _common(tr)
    tr.add_argument("--iterations", type=int, default=None)
    tr.add_argument("--batch-steps", type=int, default=None)

    sw = sub.add_parser("sweep", help="penetration sweep with a frozen policy")
    _common(sw)
    sw.add_argument("--policy", type=Path, required=True)
    sw.add_argument("--human-model", choices=["vidm", "nidm", "midm"], default="vidm")
    sw.add_argument("--percents", type=float, nargs="+", default=[25, 50, 75, 100])
    sw.add_argument("--n-seeds", type=int, default=5)

    bl = sub.add_parser("baseline", help="compare the IDM variants and EcoGlide")
    _common(bl)
    bl.add_argument("--replicates", type=int, default=1)
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, penetration_pct=args.penetration,
                      human_model=args.human_model)
    policy = load_checkpoint(args.policy) if args.policy else None
    seed = args.seed if args.seed is not None else cfg.seed
    report = harness.run_scenario(
        cfg, seed=seed, n_replicates=args.replicates, policy=policy,
        controller_override=args.controller, log_trajectories=args.trajectories,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = args.out_dir / "metrics.json"
    metrics_path.write_text(harness.report_to_json(report))
    print(f"wrote {metrics_path}")
    if args.trajectories:
        traj_path = harness.export_trajectories(report.log, args.out_dir / "trajectories.csv")
        print(f"wrote {traj_path}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import train  # heavy import kept out of the other commands

    tc = load_train_config(args.config, seed=args.seed, iterations=args.iterations,
                           batch_steps=args.batch_steps)
    policy, curve = train(tc)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = args.out_dir / "policy.ckpt"
    save_checkpoint(policy, ckpt)
    curve_path = harness.write_curve_csv(curve, args.out_dir / "learning_curve.csv")
    print(f"wrote {ckpt}")
    print(f"wrote {curve_path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    policy = load_checkpoint(args.policy)
    result = harness.penetration_sweep(
        policy, cfg, human_model=args.human_model, percents=args.percents,
        seeds=list(range(args.n_seeds)),
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = harness.write_sweep_csv(result, args.out_dir / "sweep.csv")
    print(f"wrote {path}")
    return 0


def _cmd_baseline(args) -> int:
    cfg = load_config(args.config, seed=args.seed, penetration_pct=0.0)
    seed = args.seed if args.seed is not None else cfg.seed
    rows = {}
    for kind in ("vidm", "nidm", "midm", "ecoglide"):
        reps = 1 if kind in ("vidm", "ecoglide") else args.replicates
        rows[kind] = harness.run_scenario(
            cfg, seed=seed, n_replicates=reps, controller_override=kind
        )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = harness.write_baseline_csv(rows, args.out_dir / "baseline.csv")
    print(f"wrote {path}")
    return 0


_HANDLERS = {"run": _cmd_run, "train": _cmd_train, "sweep": _cmd_sweep,
             "baseline": _cmd_baseline}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
