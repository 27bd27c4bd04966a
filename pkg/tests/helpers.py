"""Shared builders for small configurations and datasets."""

import numpy as np

from iout_marl import datasets
from iout_marl.algos import make_learner
from iout_marl.config import TrainConfig
from iout_marl.mdp_io import obs_dim


DEFAULTS = [
    ("env.field_size", 120.0), ("env.num_devices", 55), ("acoustics.center_frequency_khz", 20.0),
    ("env.water_depth", -50.0), ("env.num_auvs", 2), ("env.sailing_depth", -10.0),
    ("env.comm_distance", 6.0), ("env.v_max", 2.0), ("env.vortex_gamma", 8.0),
    ("env.vortex_radius", 48.0), ("env.duration", 1000.0), ("env.dt", 1.0),
    ("algo.lr", 2e-4), ("algo.lr_alpha", 3e-4), ("algo.alpha_init", 0.01), ("algo.tau", 0.01),
    ("algo.gamma", 0.99), ("algo.epochs", 400), ("algo.updates_per_epoch", 5),
    ("voi.sigma", 10.0), ("voi.beta", 0.7), ("env.c_max_bits", 2e6), ("env.crash_distance", 5.0),
    ("algo.buffer_size", 80_000),
]


def config_value(cfg: TrainConfig, path: str):
    section, name = path.split(".")
    return getattr(getattr(cfg, section), name)


def tiny_config(num_auvs=1, duration=30.0, **algo) -> TrainConfig:
    base = dict(epochs=2, updates_per_epoch=3, batch_size=16, hidden=(16, 16), num_action_samples=3,
                online_epochs=1, dataset_epochs=1, start_steps=10, buffer_size=1000)
    base.update(algo)
    return TrainConfig().replace(env={"num_auvs": num_auvs, "duration": duration}, algo=base)


def random_dataset(cfg: TrainConfig, length=64, seed=0) -> datasets.OfflineDataset:
    rng = np.random.default_rng(seed)
    n = cfg.env.num_auvs
    d = obs_dim(n, cfg.mdp.node_slots)
    f = np.float32
    header = datasets.DatasetHeader(n, d, 2, 1, cfg.fingerprint(), seed)
    return datasets.OfflineDataset(
        header,
        rng.normal(size=(length, n, d)).astype(f),
        rng.uniform(-0.9, 0.9, size=(length, n, 2)).astype(f),
        rng.normal(size=(length, n)).astype(f),
        rng.normal(size=(length, n, d)).astype(f),
        (rng.random(length) < 0.05).astype(f),
        np.zeros(length, dtype=np.int64),
    )


def policy_nets(cfg: TrainConfig, seed=0):
    rng = np.random.default_rng(seed)
    d = obs_dim(cfg.env.num_auvs, cfg.mdp.node_slots)
    return [make_learner(d, cfg.algo, rng).policy for _ in range(cfg.env.num_auvs)]
