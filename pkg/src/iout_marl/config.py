"""Run configuration: every environment and algorithm parameter in one place.

Files are TOML with one table per subsystem. Unknown tables or keys are
rejected, since a silently ignored typo in a hyperparameter is the usual way
experiments go wrong.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli
import tomli_w

from .acoustics import AcousticConfig
from .energetics import EnergyConfig
from .mdp_io import MdpConfig
from .mission import ObjectiveWeights, PriorityParams, RewardWeights, VoiParams
from .ocean_env import EnvConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlgoConfig:
    """Learning hyperparameters shared by SAC, MAICQL and BC."""

    lr: float = 2e-4
    lr_alpha: float = 3e-4
    alpha_init: float = 0.01
    tau: float = 0.01
    gamma: float = 0.99
    epochs: int = 400
    online_epochs: int = 400
    dataset_epochs: int = 400
    updates_per_epoch: int = 5
    target_entropy: float = -2.0
    buffer_size: int = 80_000
    batch_size: int = 256
    hidden: tuple[int, ...] = (64, 64)
    alpha_cql: float = 1.0
    num_action_samples: int = 10
    start_steps: int = 1000
    warmup: str = "uniform"  # "uniform" random actions or a noisy "pilot" before start_steps
    warmup_noise: float = 0.5
    demo_weight: float = 0.0  # online actor: weight of squared distance to the steering pilot
    update_every: int = 1  # env steps per online gradient update
    bc_warmup_updates: int = 0  # offline actor clones dataset actions for this many updates
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.alpha_init <= 0:
            raise ValueError("alpha_init must be positive")
        if self.demo_weight < 0 or self.bc_warmup_updates < 0:
            raise ValueError("demo_weight and bc_warmup_updates must be nonnegative")
        if self.alpha_cql < 0:
            raise ValueError("alpha_cql must be nonnegative")
        if self.num_action_samples < 1 or self.batch_size < 1:
            raise ValueError("num_action_samples and batch_size must be positive")
        if self.warmup not in ("uniform", "pilot"):
            raise ValueError("warmup must be uniform or pilot")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


_SECTIONS = {
    "acoustics": AcousticConfig,
    "env": EnvConfig,
    "energy": EnergyConfig,
    "priority": PriorityParams,
    "voi": VoiParams,
    "reward": RewardWeights,
    "objective": ObjectiveWeights,
    "mdp": MdpConfig,
    "algo": AlgoConfig,
}


@dataclass(frozen=True)
class TrainConfig:
    acoustics: AcousticConfig = field(default_factory=AcousticConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    priority: PriorityParams = field(default_factory=PriorityParams)
    voi: VoiParams = field(default_factory=VoiParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    objective: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    mdp: MdpConfig = field(default_factory=MdpConfig)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    seed: int = 0

    def __post_init__(self):
        if self.energy.dt != self.env.dt:
            raise ConfigError("energy.dt must equal env.dt")
        if self.energy.v_max != self.env.v_max:
            raise ConfigError("energy.v_max must equal env.v_max")
        if self.reward.crash_distance != self.env.crash_distance:
            raise ConfigError("reward.crash_distance must equal env.crash_distance")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"seed": self.seed}
        for name in _SECTIONS:
            sec = {}
            for f in dataclasses.fields(getattr(self, name)):
                v = getattr(getattr(self, name), f.name)
                if v is None:
                    continue  # TOML has no null; absent means default
                sec[f.name] = list(v) if isinstance(v, tuple) else v
            out[name] = sec
        return out

    def fingerprint(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()

    def replace(self, **sections) -> "TrainConfig":
        """Override fields per section, e.g. ``replace(env={"num_auvs": 3}, seed=4)``."""
        kw: dict[str, Any] = {}
        for name, value in sections.items():
            if name == "seed":
                kw["seed"] = int(value)
            elif name in _SECTIONS:
                kw[name] = dataclasses.replace(getattr(self, name), **value)
            else:
                raise ConfigError(f"unknown section {name!r}")
        env = kw.get("env", self.env)
        if "env" in kw:
            if "energy" not in sections:
                kw["energy"] = dataclasses.replace(kw.get("energy", self.energy), dt=env.dt, v_max=env.v_max)
            if "reward" not in sections:
                kw["reward"] = dataclasses.replace(kw.get("reward", self.reward), crash_distance=env.crash_distance)
        return dataclasses.replace(self, **kw)


def _check_type(section: str, key: str, value, current) -> None:
    """Reject a value whose type cannot stand in for the current one."""
    if current is None:
        return
    if isinstance(current, bool) or isinstance(value, bool):
        ok = isinstance(value, bool) and isinstance(current, bool)
    elif isinstance(current, (int, float)):
        ok = isinstance(value, int) if isinstance(current, int) else isinstance(value, (int, float))
    elif isinstance(current, tuple):
        ok = isinstance(value, (list, tuple))
    else:
        ok = isinstance(value, type(current))
    if not ok:
        raise ConfigError(f"[{section}] {key} = {value!r}: expected {type(current).__name__}")


def from_dict(data: dict[str, Any], base: Optional[TrainConfig] = None) -> TrainConfig:
    """Overlay ``data`` on ``base`` (defaults when omitted)."""
    base = TrainConfig() if base is None else base
    data = dict(data)
    sections: dict[str, Any] = {"seed": data.pop("seed", base.seed)}
    for name, section in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        known = {f.name for f in dataclasses.fields(_SECTIONS[name])}
        for key, value in section.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            _check_type(name, key, value, getattr(getattr(base, name), key))
        sections[name] = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        return base.replace(**sections)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data, base)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()))


def resolve_seed(cli_seed: Optional[int], cfg: TrainConfig) -> int:
    """CLI flag first, then the IOUT_SEED environment variable, then the config."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("IOUT_SEED")
    if env:
        return int(env)
    return cfg.seed


DESK_ALGO = dict(
    online_epochs=50,
    dataset_epochs=50,
    epochs=50,
    updates_per_epoch=100,
    batch_size=128,
    lr=1e-3,
    update_every=2,
    start_steps=5000,
    warmup="pilot",
    demo_weight=1.0,
    dtype="float32",
)


def desk_preset(seed: int = 0) -> TrainConfig:
    """Single-core run: 50 online episodes, 50-episode dataset, 50 offline epochs.

    The online experts are steered toward the pilot so that 50 episodes give
    policies that actually collect data.
    """
    return TrainConfig(seed=seed).replace(algo=DESK_ALGO)
