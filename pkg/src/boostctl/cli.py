"""Command-line entry point: ``boostctl {train, rollout, verify, export-plots}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import Checkpoint, CheckpointMismatch, load_checkpoint, save_checkpoint
from .checks import SUITES, verify
from .plotting import (plot_loss_curve, plot_trajectories, read_log_csv, read_trajectory_csv, write_log_csv,
                       write_positions_csv, write_trajectory_csv)
from .training import LOG_COLUMNS, build_scenario, certify, rollout_summary, thread_cap, train

log = logging.getLogger("boostctl")


def _load_config(args) -> cfgmod.ScenarioConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.defaults(args.scenario)
    if getattr(args, "paper_scale", False):
        cfg = cfgmod.paper_scale(cfg)
    return cfg.with_overrides(seed=args.seed, epochs=getattr(args, "epochs", None))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out(args)
    cfgmod.save(cfg, out / "config.toml")
    log.info("training %s/%s for %d epochs", cfg.scenario, cfg.architecture, cfg.train.epochs)

    def report(row):
        if row["epoch"] % 100 == 0:
            log.info("epoch %d loss %.6g grad %.3g", row["epoch"], row["mean_loss"], row["grad_norm"])

    res = train(cfg, on_epoch=report)
    write_log_csv(out / "train_log.csv", res.log, LOG_COLUMNS)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    for epoch, theta in sorted(res.checkpoints.items()):
        save_checkpoint(Checkpoint(theta, epoch, cfg), ck_dir / f"epoch_{epoch:06d}.json")
    final = out / "checkpoint.json"
    save_checkpoint(Checkpoint(res.theta, cfg.train.epochs, cfg), final)
    scn = build_scenario(cfg)
    cert = certify(scn, res.theta, seed=cfg.seed)
    print(json.dumps({"checkpoint": str(final), "epochs": cfg.train.epochs,
                      "final_batch_loss": res.log[-1]["mean_loss"] if res.log else None,
                      "certificate_tail_ratio": cert.tail_ratio, "certificate_passed": cert.passed}))
    return 0


def cmd_rollout(args) -> int:
    cfg = _load_config(args)
    ck = load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
    scn = build_scenario(cfg)
    theta = scn.theta0 if ck is None else ck.theta
    summary, y, u, v, d = rollout_summary(scn, theta, horizon_factor=args.horizon_factor,
                                          seed=args.seed if args.noisy else None)
    out = _out(args)
    write_trajectory_csv(out / "trajectory.csv", y, u, v, d)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary))
    return 0


def cmd_verify(args) -> int:
    results = verify(args.suite)
    report = {"suite": args.suite, "passed": all(r.passed for r in results),
              "checks": [r.as_dict() for r in results]}
    text = json.dumps(report, indent=1)
    if args.out:
        (_out(args) / f"verify_{args.suite}.json").write_text(text)
    print(text)
    return 0 if report["passed"] else 1


def cmd_export_plots(args) -> int:
    cfg = _load_config(args)
    out = _out(args)
    if args.trajectory:
        y, _, _, _ = read_trajectory_csv(args.trajectory)
    else:
        ck = load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
        scn = build_scenario(cfg)
        _, y, u, v, d = rollout_summary(scn, scn.theta0 if ck is None else ck.theta,
                                        horizon_factor=args.horizon_factor)
        write_trajectory_csv(out / "trajectory.csv", y, u, v, d)
    write_positions_csv(out / "positions.csv", y)
    if cfg.loss_kind == "corridor":
        obstacles, radius = np.asarray(cfg.corridor.obstacles), float(np.sqrt(cfg.corridor.sigma))
    else:
        obstacles, radius = np.asarray(cfg.waypoint.obstacles), cfg.waypoint.r_obs
    plot_trajectories(out / "trajectories.png", y, targets=cfg.plant.targets, obstacles=obstacles, radius=radius,
                      horizon=cfg.horizon, title=cfg.scenario)
    written = ["positions.csv", "trajectories.png"]
    if args.log:
        rows = read_log_csv(args.log)
        write_log_csv(out / "loss_curve.csv", rows, ("epoch", "mean_loss"))
        plot_loss_curve(out / "loss_curve.png", rows)
        written += ["loss_curve.csv", "loss_curve.png"]
    print(json.dumps({"out": str(out), "files": written}))
    return 0


def _common(p: argparse.ArgumentParser, epochs: bool = False) -> None:
    p.add_argument("--config", help="scenario TOML file")
    p.add_argument("--scenario", default="corridor", choices=("corridor", "corridor-literal", "waypoint"),
                   help="built-in defaults used when --config is absent")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true", help="full-length training settings")
    p.add_argument("--out", default="out")
    if epochs:
        p.add_argument("--epochs", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boostctl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a REN-parametrized controller")
    _common(p, epochs=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="simulate a checkpoint and write trajectory files")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--horizon-factor", type=int, default=4)
    p.add_argument("--noisy", action="store_true", help="one seeded disturbance sample instead of the nominal run")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-plots", help="plot-ready CSV plus PNG figures")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--trajectory", help="existing trajectory.csv instead of a fresh rollout")
    p.add_argument("--log", help="train_log.csv for the loss curve")
    p.add_argument("--horizon-factor", type=int, default=4)
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        thread_cap()
        return args.func(args)
    except (cfgmod.ConfigError, CheckpointMismatch, ValueError) as exc:
        print(f"boostctl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
