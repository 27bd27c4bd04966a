"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration or input error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import algos, datasets, harness
from . import learnkit as lk
from .config import ConfigError, TrainConfig, desk_preset, load_config, resolve_seed
from .simulator import NetworkPolicy, Simulator, run_episode

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("iout_marl")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="base parameters before --config overrides (default: full)")
    p.add_argument("--seed", type=int, help="global seed (falls back to IOUT_SEED, then the config)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--epochs", type=int, help="episodes or epochs for this stage")
    p.add_argument("--turbulence", choices=("on", "off"), help="override env.turbulence")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="iout-marl", description="Multi-AUV IoUT data collection with offline MARL.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("train-online", parents=[common], help="train SAC expert policies")

    p = sub.add_parser("gen-dataset", parents=[common], help="roll out experts into a dataset file")
    p.add_argument("--checkpoint", type=Path, required=True, help="expert policy checkpoint")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="observation noise std")

    p = sub.add_parser("train-offline", parents=[common], help="train MAICQL or BC from a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--algo", choices=("maicql", "bc"), default="maicql")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="observation noise std added on load")

    for name, text in (("eval", "evaluate policies, write metrics and trajectories"),
                       ("export-traj", "write one episode's trajectory and layout")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", type=Path, help="policy checkpoint (default: steering pilot)")

    p = sub.add_parser("sweep-auvs", parents=[common], help="metrics for 1, 2 and 3 AUVs")
    p.add_argument("--seeds", type=int, default=5, help="seeds averaged per team size")
    p.add_argument("--policy", choices=("heuristic", "trained"), default="heuristic")
    return parser


def _load(args) -> TrainConfig:
    cfg = desk_preset() if args.preset == "desk" else TrainConfig()
    if args.config is not None:
        cfg = load_config(args.config, base=cfg)
    cfg = cfg.replace(seed=resolve_seed(args.seed, cfg))
    if args.turbulence is not None:
        cfg = cfg.replace(env={"turbulence": args.turbulence == "on"})
    return cfg


def _with_epochs(cfg: TrainConfig, field: str, epochs: Optional[int]) -> TrainConfig:
    if epochs is None:
        return cfg
    if epochs < 0:
        raise ConfigError("--epochs must be nonnegative")
    return cfg.replace(algo={field: epochs})


def _policies(args, cfg):
    if args.checkpoint is None:
        return harness.scripted_policies("heuristic", cfg.env.num_auvs)
    if not args.checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    return [NetworkPolicy(p) for p in harness.load_policies(args.checkpoint, cfg)]


def _cmd_train_online(args, cfg):
    cfg = _with_epochs(cfg, "online_epochs", args.epochs)
    learners, history = algos.train_online(cfg, cfg.seed, log.info)
    harness.save_policies(args.out / "expert.ckpt", [l.policy for l in learners], cfg, "sac")
    harness.write_metrics(history, args.out / "online_metrics.csv")


def _cmd_gen_dataset(args, cfg):
    cfg = _with_epochs(cfg, "dataset_epochs", args.epochs)
    if not args.checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    policies = harness.load_policies(args.checkpoint, cfg)
    ds = datasets.gen_expert_dataset(policies, cfg, seed=cfg.seed, progress=log.info)
    if args.noise_sigma:
        ds = datasets.inject_gaussian_noise(ds, args.noise_sigma, cfg.seed)
    datasets.save(ds, args.out / "dataset.bin")


def _cmd_train_offline(args, cfg):
    cfg = _with_epochs(cfg, "epochs", args.epochs)
    if not args.dataset.exists():
        raise ConfigError(f"dataset not found: {args.dataset}")
    ds = datasets.load(args.dataset)
    algos.check_dataset(ds, cfg)
    if args.noise_sigma:
        ds = datasets.inject_gaussian_noise(ds, args.noise_sigma, cfg.seed)
    if args.algo == "maicql":
        learners, history = algos.maicql_train(ds, cfg.env.num_auvs, cfg, cfg.seed, progress=log.info)
        nets = {}
        for j, l in enumerate(learners):
            nets.update({f"{k}_{j}": v for k, v in l.nets().items()})
        lk.save_checkpoint(args.out / "maicql_full.ckpt", nets, {"kind": "maicql"})
        policies = [l.policy for l in learners]
    else:
        policies, history = algos.bc_train(ds, cfg, cfg.seed, evaluate=True, progress=log.info)
    harness.save_policies(args.out / f"{args.algo}.ckpt", policies, cfg, args.algo)
    harness.write_metrics(history, args.out / f"{args.algo}_metrics.csv")


def _cmd_eval(args, cfg):
    episodes = 1 if args.epochs is None else args.epochs
    policies = _policies(args, cfg)
    sim = Simulator(cfg)
    rows, traj = [], []
    for e in range(episodes):
        m, t = run_episode(sim, policies, algos.eval_seed(cfg.seed, e), e, record=True)
        rows.append(m)
        traj.extend(t)
    harness.write_metrics(rows, args.out / "eval_metrics.csv")
    harness.write_trajectory(traj, args.out / "eval_trajectory.csv")


def _cmd_export_traj(args, cfg):
    policies = _policies(args, cfg)
    sim = Simulator(cfg)
    seed = algos.eval_seed(cfg.seed, 0)
    _, traj = run_episode(sim, policies, seed, record=True)
    harness.write_trajectory(traj, args.out / "trajectory.csv")
    world = sim.reset(seed)
    harness.write_layout(world, args.out)


def _cmd_sweep(args, cfg):
    if args.seeds < 1:
        raise ConfigError("--seeds must be positive")
    if args.epochs is not None:
        cfg = cfg.replace(algo={"online_epochs": args.epochs, "dataset_epochs": args.epochs,
                                "epochs": args.epochs})
    seeds = [cfg.seed + k for k in range(args.seeds)]
    rows = harness.sweep_auvs(cfg, seeds, policy=args.policy, progress=log.info)
    harness.write_rows(args.out / "sweep.csv", harness.SWEEP_COLUMNS, rows)


_COMMANDS = {
    "train-online": _cmd_train_online,
    "gen-dataset": _cmd_gen_dataset,
    "train-offline": _cmd_train_offline,
    "eval": _cmd_eval,
    "export-traj": _cmd_export_traj,
    "sweep-auvs": _cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if getattr(args, "noise_sigma", 0.0) < 0:
            raise ConfigError("--noise-sigma must be nonnegative")
        args.out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, cfg)
    except (ConfigError, datasets.DatasetError, lk.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
