"""Replay buffer and offline dataset files.

File layout (all little-endian):

    header  fixed 128 bytes, see ``_HEADER``
    records num_records x (uint32 byte length, float32 payload)

A record payload is obs (N*D), actions (N*A), rewards (N), next obs (N*D),
done flag and episode index, in that order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import learnkit as lk
from .mdp_io import ACTION_DIM, OBS_LAYOUT_VERSION

MAGIC = b"IOUTDSET"
FORMAT_VERSION = 1
# magic, format version, header size, layout tag, agents, obs dim, act dim,
# episodes, records, config sha256, seed, noise sigma, noise seed
_HEADER = struct.Struct("<8sHH16sIIIII32sQdQ")
HEADER_SIZE = 128


class DatasetError(Exception):
    code = 20


class CorruptHeaderError(DatasetError):
    code = 21


class VersionMismatchError(DatasetError):
    code = 22


class LayoutMismatchError(DatasetError):
    code = 23


class TruncatedPayloadError(DatasetError):
    code = 24


class CorruptRecordError(DatasetError):
    code = 25


@dataclass(frozen=True)
class DatasetHeader:
    num_agents: int
    obs_dim: int
    act_dim: int = ACTION_DIM
    episode_count: int = 0
    config_fingerprint: bytes = b"\0" * 32
    seed: int = 0
    noise_sigma: float = 0.0
    noise_seed: int = 0
    layout_version: str = OBS_LAYOUT_VERSION
    format_version: int = FORMAT_VERSION

    @property
    def record_floats(self) -> int:
        n, d, a = self.num_agents, self.obs_dim, self.act_dim
        return 2 * n * d + n * a + n + 2


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray  # (N, D)
    act: np.ndarray  # (N, A) squashed
    rew: np.ndarray  # (N,)
    next_obs: np.ndarray
    done: bool
    episode: int = 0


@dataclass
class OfflineDataset:
    header: DatasetHeader
    obs: np.ndarray  # (T, N, D) float32
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray  # (T,)
    episode: np.ndarray  # (T,) int

    def __len__(self):
        return len(self.done)

    def transition(self, i: int) -> Transition:
        return Transition(self.obs[i], self.act[i], self.rew[i], self.next_obs[i], bool(self.done[i]),
                          int(self.episode[i]))

    def equals(self, other: "OfflineDataset") -> bool:
        return self.header == other.header and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("obs", "act", "rew", "next_obs", "done", "episode")
        )


def empty_dataset(header: DatasetHeader) -> OfflineDataset:
    n, d, a = header.num_agents, header.obs_dim, header.act_dim
    f = np.float32
    return OfflineDataset(header, np.zeros((0, n, d), f), np.zeros((0, n, a), f), np.zeros((0, n), f),
                          np.zeros((0, n, d), f), np.zeros(0, f), np.zeros(0, np.int64))


class ReplayBuffer:
    """Fixed-capacity FIFO of joint transitions with uniform sampling."""

    def __init__(self, capacity: int, num_agents: int, obs_dim: int, act_dim: int = ACTION_DIM):
        self.capacity = capacity
        f = np.float32
        self.obs = np.zeros((capacity, num_agents, obs_dim), f)
        self.act = np.zeros((capacity, num_agents, act_dim), f)
        self.rew = np.zeros((capacity, num_agents), f)
        self.next_obs = np.zeros((capacity, num_agents, obs_dim), f)
        self.done = np.zeros(capacity, f)
        self.episode = np.zeros(capacity, np.int64)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, obs, act, rew, next_obs, done, episode: int = 0) -> None:
        i = self._next
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.episode[i] = episode
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_transition(self, tr: Transition) -> None:
        self.push(tr.obs, tr.act, tr.rew, tr.next_obs, tr.done, tr.episode)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise IndexError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return [self._at(int(i)) for i in self.sample_indices(batch_size, rng)]

    def _at(self, i: int) -> Transition:
        return Transition(self.obs[i], self.act[i], self.rew[i], self.next_obs[i], bool(self.done[i]),
                          int(self.episode[i]))

    def ordered_indices(self) -> np.ndarray:
        """Storage slots from oldest to newest."""
        start = self._next if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def items(self) -> list[Transition]:
        return [self._at(int(i)) for i in self.ordered_indices()]


# --- serialisation -----------------------------------------------------------------


def _record_dtype(h: DatasetHeader) -> np.dtype:
    return np.dtype([("len", "<u4"), ("payload", "<f4", (h.record_floats,))])


def _pack_header(h: DatasetHeader, num_records: int) -> bytes:
    tag = h.layout_version.encode()
    if len(tag) > 16:
        raise ValueError("layout tag longer than 16 bytes")
    raw = _HEADER.pack(MAGIC, h.format_version, HEADER_SIZE, tag, h.num_agents, h.obs_dim, h.act_dim,
                       h.episode_count, num_records, h.config_fingerprint, h.seed, h.noise_sigma,
                       h.noise_seed)
    return raw.ljust(HEADER_SIZE, b"\0")


def save(dataset: OfflineDataset, path) -> None:
    h = dataset.header
    n, d, a = h.num_agents, h.obs_dim, h.act_dim
    t = len(dataset)
    payload = np.concatenate([
        dataset.obs.reshape(t, n * d),
        dataset.act.reshape(t, n * a),
        dataset.rew.reshape(t, n),
        dataset.next_obs.reshape(t, n * d),
        dataset.done.reshape(t, 1),
        dataset.episode.reshape(t, 1).astype(np.float32),
    ], axis=1).astype("<f4")
    rec = np.zeros(t, dtype=_record_dtype(h))
    rec["len"] = 4 * h.record_floats
    rec["payload"] = payload
    with open(path, "wb") as fh:
        fh.write(_pack_header(h, t))
        fh.write(rec.tobytes())


def load(path, expected_layout: str = OBS_LAYOUT_VERSION) -> OfflineDataset:
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise CorruptHeaderError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    fields = _HEADER.unpack_from(data, 0)
    magic, fmt, hsize, tag, n, d, a, episodes, records, fp, seed, sigma, nseed = fields
    if magic != MAGIC or hsize != HEADER_SIZE:
        raise CorruptHeaderError(f"{path}: bad magic or header size")
    if fmt != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {fmt}, reader supports {FORMAT_VERSION}")
    layout = tag.rstrip(b"\0").decode(errors="replace")
    if layout != expected_layout:
        raise LayoutMismatchError(f"{path}: observation layout {layout!r}, expected {expected_layout!r}")
    h = DatasetHeader(n, d, a, episodes, fp, seed, sigma, nseed, layout, fmt)
    rdt = _record_dtype(h)
    body = memoryview(data)[HEADER_SIZE:]
    if len(body) < records * rdt.itemsize:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(body)} bytes, {records} records need {records * rdt.itemsize}")
    if len(body) > records * rdt.itemsize:
        raise CorruptRecordError(f"{path}: trailing bytes after {records} records")
    rec = np.frombuffer(body, dtype=rdt, count=records)
    if records and not np.all(rec["len"] == 4 * h.record_floats):
        raise CorruptRecordError(f"{path}: record length prefix mismatch")
    p = rec["payload"].astype(np.float32)
    o = 0

    def take(k):
        nonlocal o
        out = p[:, o:o + k]
        o += k
        return out

    obs = take(n * d).reshape(records, n, d)
    act = take(n * a).reshape(records, n, a)
    rew = take(n).reshape(records, n)
    nobs = take(n * d).reshape(records, n, d)
    done = take(1).reshape(records).copy()
    episode = take(1).reshape(records).astype(np.int64)
    return OfflineDataset(h, obs.copy(), act.copy(), rew.copy(), nobs.copy(), done, episode)


# --- generation and perturbation ---------------------------------------------------


def gen_expert_dataset(policies: Sequence[lk.MLP], cfg, num_epochs: Optional[int] = None,
                       seed: Optional[int] = None, progress=None) -> OfflineDataset:
    """Roll out stochastic expert policies for ``num_epochs`` episodes, recording every step."""
    from .algos import _episode_seed
    from .simulator import Simulator

    sim = Simulator(cfg)
    seed = cfg.seed if seed is None else seed
    num_epochs = cfg.algo.dataset_epochs if num_epochs is None else num_epochs
    n = sim.num_agents
    if len(policies) != n:
        raise LayoutMismatchError(f"{len(policies)} checkpoints for {n} AUVs")
    for p in policies:
        if p.sizes[0] != sim.obs_dim or p.sizes[-1] != 2 * ACTION_DIM:
            raise LayoutMismatchError(
                f"policy maps {p.sizes[0]} -> {p.sizes[-1]}, env needs {sim.obs_dim} -> {2 * ACTION_DIM}")
    rng = np.random.default_rng([seed, 2])
    steps = num_epochs * cfg.env.max_steps
    buf = ReplayBuffer(max(steps, 1), n, sim.obs_dim)
    for ep in range(num_epochs):
        world = sim.reset(_episode_seed(seed, "dataset", ep))
        obs = sim.observe(world)
        while True:
            raw = np.stack([
                lk.policy_sample(p, obs[j].astype(p.dtype), rng).u[0].astype(float)
                for j, p in enumerate(policies)
            ])
            res = sim.step(world, raw)
            nxt = sim.observe(world)
            buf.push(obs, np.tanh(raw), res.rewards, nxt, res.terminal, ep)
            obs = nxt
            if res.done:
                break
        if progress:
            progress(f"dataset episode {ep}: {world.nodes.collected.sum() / 1e6:.2f} Mbit")
    k = buf.size
    header = DatasetHeader(n, sim.obs_dim, ACTION_DIM, num_epochs, cfg.fingerprint(), seed)
    return OfflineDataset(header, buf.obs[:k].copy(), buf.act[:k].copy(), buf.rew[:k].copy(),
                          buf.next_obs[:k].copy(), buf.done[:k].copy(), buf.episode[:k].copy())


def inject_gaussian_noise(dataset: OfflineDataset, sigma: float, seed: int) -> OfflineDataset:
    """Add i.i.d. N(0, sigma^2) to observations and next observations only."""
    if sigma < 0 or not math.isfinite(sigma):
        raise ValueError(f"noise sigma must be a nonnegative real, got {sigma}")
    header = replace(dataset.header, noise_sigma=float(sigma), noise_seed=int(seed))
    if sigma == 0:
        return replace(dataset, header=header, obs=dataset.obs.copy(), next_obs=dataset.next_obs.copy())
    rng = np.random.default_rng([seed, 7])
    obs = dataset.obs + rng.normal(0.0, sigma, size=dataset.obs.shape).astype(np.float32)
    nobs = dataset.next_obs + rng.normal(0.0, sigma, size=dataset.next_obs.shape).astype(np.float32)
    return replace(dataset, header=header, obs=obs.astype(np.float32), next_obs=nobs.astype(np.float32))
