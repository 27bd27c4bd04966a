"""Experiment orchestration: policy checkpoints, baselines, the AUV-count
sweep, and CSV emission of metrics and trajectories."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import algos
from . import learnkit as lk
from .config import TrainConfig
from .datasets import LayoutMismatchError
from .mdp_io import ACTION_DIM, OBS_LAYOUT_VERSION
from .ocean_env import WorldState
from .simulator import (
    TRAJECTORY_COLUMNS,
    EpochMetrics,
    HeuristicPilot,
    NetworkPolicy,
    Simulator,
    ZeroPolicy,
    run_episode,
)

METRICS_FORMAT = "metrics-v1"
METRICS_COLUMNS = (
    "epoch", "cumulative_reward", "sum_data_rate", "data_collected", "sum_voi", "avg_energy_cost", "crash_count",
    "steps", "objective", "critic_loss", "policy_loss", "alpha",
)
SWEEP_COLUMNS = ("num_auvs", "seeds", "sum_data_rate", "data_collected", "avg_energy_cost", "crash_count",
                 "cumulative_reward")
VORTEX_COLUMNS = ("x", "y", "radius", "intensity")
NODE_COLUMNS = ("node", "x", "y", "depth", "capacity_bps", "stored_bits", "collected_bits", "needs")

_LIST_SEP = ";"


# --- CSV ----------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return _LIST_SEP.join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics(rows: Iterable[EpochMetrics], path) -> None:
    """One row per epoch; per-agent columns hold ';'-joined values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for m in rows:
            w.writerow([_fmt(getattr(m, c)) for c in METRICS_COLUMNS])


def read_metrics(path) -> list[EpochMetrics]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics columns {reader.fieldnames}")
        for r in reader:
            def floats(key):
                return [float(x) for x in r[key].split(_LIST_SEP)] if r[key] else []

            out.append(EpochMetrics(
                epoch=int(r["epoch"]),
                cumulative_reward=float(r["cumulative_reward"]),
                sum_data_rate=float(r["sum_data_rate"]),
                data_collected=float(r["data_collected"]),
                sum_voi=float(r["sum_voi"]),
                avg_energy_cost=float(r["avg_energy_cost"]),
                crash_count=int(r["crash_count"]),
                steps=int(r["steps"]),
                objective=float(r["objective"]),
                critic_loss=floats("critic_loss"),
                policy_loss=floats("policy_loss"),
                alpha=floats("alpha"),
            ))
    return out


def write_rows(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_trajectory(rows, path) -> None:
    write_rows(path, TRAJECTORY_COLUMNS, rows)


def write_layout(world: WorldState, out_dir) -> None:
    """Vortex and node tables that go with a trajectory file."""
    out_dir = Path(out_dir)
    write_rows(out_dir / "vortices.csv", VORTEX_COLUMNS,
               [(v.center[0], v.center[1], v.radius_delta, v.intensity_gamma) for v in world.vortices])
    nodes = world.nodes
    write_rows(out_dir / "nodes.csv", NODE_COLUMNS, [
        (i, float(nodes.position[i, 0]), float(nodes.position[i, 1]), float(nodes.depth[i]),
         float(nodes.capacity[i]), float(nodes.stored[i]), float(nodes.collected[i]), int(nodes.needs[i]))
        for i in range(len(nodes.depth))
    ])


# --- policies -----------------------------------------------------------------------


def save_policies(path, policies: Sequence[lk.MLP], cfg: TrainConfig, kind: str) -> None:
    meta = {"kind": kind, "layout": OBS_LAYOUT_VERSION, "num_agents": len(policies),
            "config_sha256": cfg.fingerprint().hex()}
    lk.save_checkpoint(path, {f"policy_{j}": p for j, p in enumerate(policies)}, meta)


def load_policies(path, cfg: TrainConfig) -> list[lk.MLP]:
    """Per-AUV policy nets from a checkpoint, refused unless they fit ``cfg``."""
    nets, meta = lk.load_checkpoint(path)
    policies = [nets[k] for k in sorted(nets, key=lambda k: int(k.rsplit("_", 1)[1]))]
    sim = Simulator(cfg)
    if meta.get("layout") != OBS_LAYOUT_VERSION:
        raise LayoutMismatchError(f"{path}: observation layout {meta.get('layout')!r}, expected {OBS_LAYOUT_VERSION!r}")
    if len(policies) != sim.num_agents:
        raise LayoutMismatchError(f"{path}: {len(policies)} policies for {sim.num_agents} AUVs")
    for p in policies:
        if p.sizes[0] != sim.obs_dim or p.sizes[-1] != 2 * ACTION_DIM:
            raise LayoutMismatchError(f"{path}: policy input {p.sizes[0]}, environment gives {sim.obs_dim}")
    return policies


def random_init_policies(cfg: TrainConfig, seed: int) -> list[lk.MLP]:
    """The untrained policies an offline run starts from with this seed."""
    sim = Simulator(cfg)
    rng = np.random.default_rng([seed, 4])
    return [algos.make_learner(sim.obs_dim, cfg.algo, rng).policy for _ in range(sim.num_agents)]


def evaluate_epochs(cfg: TrainConfig, policies: Sequence[lk.MLP], seed: int,
                    epochs: Iterable[int]) -> list[EpochMetrics]:
    return [algos.evaluate_policies(cfg, policies, seed, e) for e in epochs]


def moving_average(values: Sequence[float], window: int = 10) -> float:
    tail = list(values)[-window:]
    if not tail:
        raise ValueError("no values to average")
    return float(np.mean(tail))


def improvement_ratio(trained: float, baseline: float) -> float:
    """Relative gain over the baseline, measured against its magnitude."""
    return (trained - baseline) / abs(baseline)


def scripted_policies(kind: str, n: int):
    if kind == "heuristic":
        return [HeuristicPilot() for _ in range(n)]
    if kind == "zero":
        return [ZeroPolicy() for _ in range(n)]
    raise ValueError(f"unknown scripted policy {kind!r}")


# --- experiments --------------------------------------------------------------------


@dataclass
class PipelineResult:
    online: list[EpochMetrics]
    experts: list[lk.MLP]
    dataset: object
    learners: list
    offline: list[EpochMetrics]


def run_pipeline(cfg: TrainConfig, seed: int, noise_sigma: float = 0.0, progress=None) -> PipelineResult:
    """Online SAC experts, expert dataset, optional noise, MAICQL."""
    from .datasets import gen_expert_dataset, inject_gaussian_noise

    learners, online = algos.train_online(cfg, seed, progress)
    experts = [l.policy for l in learners]
    dataset = gen_expert_dataset(experts, cfg, cfg.algo.dataset_epochs, seed, progress)
    if noise_sigma:
        dataset = inject_gaussian_noise(dataset, noise_sigma, seed)
    offline_learners, offline = algos.maicql_train(dataset, cfg.env.num_auvs, cfg, seed, progress=progress)
    return PipelineResult(online, experts, dataset, offline_learners, offline)


def sweep_auvs(cfg: TrainConfig, seeds: Sequence[int], counts: Sequence[int] = (1, 2, 3),
               policy: str = "heuristic", progress=None) -> list[tuple]:
    """Seed-averaged episode metrics per team size.

    ``policy`` is a scripted pilot name or "trained", which runs the full
    online, dataset and offline pipeline for every team size and seed and
    scores the final offline policies.
    """
    rows = []
    for n in counts:
        sub = cfg.replace(env={"num_auvs": n})
        sim = Simulator(sub)
        results = []
        for s in seeds:
            if policy == "trained":
                res = run_pipeline(sub, s, progress=progress)
                pols = [NetworkPolicy(l.policy) for l in res.learners]
            else:
                pols = scripted_policies(policy, n)
            m, _ = run_episode(sim, pols, algos.eval_seed(s, 0))
            results.append(m)
        rows.append((
            n, len(seeds),
            float(np.mean([m.sum_data_rate for m in results])),
            float(np.mean([m.data_collected for m in results])),
            float(np.mean([m.avg_energy_cost for m in results])),
            float(np.mean([m.crash_count for m in results])),
            float(np.mean([m.cumulative_reward for m in results])),
        ))
        if progress:
            progress(f"sweep N={n}: {rows[-1][2]:.2f} kbit/s, crashes {rows[-1][5]:.2f}")
    return rows
