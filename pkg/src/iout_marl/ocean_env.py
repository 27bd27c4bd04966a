"""Planar ocean world: Lamb-Oseen vortex currents, AUV kinematics, node
data buffers and collision geometry.

The simulation is 2-D at a fixed sailing depth. Node depth only enters the
acoustic slant range used for each node's channel capacity.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from . import acoustics


@dataclass(frozen=True)
class Vortex:
    center: tuple[float, float]
    radius_delta: float
    intensity_gamma: float

    def __post_init__(self):
        if not self.radius_delta > 0:
            raise ValueError("vortex radius must be positive")


@dataclass
class AuvState:
    position: np.ndarray
    heading: float = 0.0
    speed_cmd: float = 0.0
    energy_spent: float = 0.0
    target_node: Optional[int] = None
    hovering: bool = False
    # bookkeeping for the most recent step, read by the reward function
    step_energy: float = 0.0
    step_bits: float = 0.0
    step_voi: float = 0.0
    step_capacity: float = 0.0
    action_clamped: bool = False

    def copy(self) -> "AuvState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class NodeState:
    position: np.ndarray
    stored_data: float
    channel_capacity: float
    initial_voi: float
    collection_start_time: Optional[float] = None
    needs_collection: bool = True
    occupied_by: Optional[int] = None


@dataclass
class NodeField:
    """All nodes as parallel arrays; ``state(i)`` gives a single-node view."""

    position: np.ndarray  # (M, 2)
    depth: np.ndarray
    stored: np.ndarray
    capacity: np.ndarray
    initial_voi: np.ndarray
    collection_start: np.ndarray  # nan until an AUV starts hovering
    needs: np.ndarray
    occupied_by: np.ndarray  # -1 when free
    collected: np.ndarray

    def __len__(self):
        return len(self.stored)

    def state(self, i: int) -> NodeState:
        start = self.collection_start[i]
        occ = int(self.occupied_by[i])
        return NodeState(
            position=self.position[i].copy(),
            stored_data=float(self.stored[i]),
            channel_capacity=float(self.capacity[i]),
            initial_voi=float(self.initial_voi[i]),
            collection_start_time=None if math.isnan(start) else float(start),
            needs_collection=bool(self.needs[i]),
            occupied_by=None if occ < 0 else occ,
        )

    @classmethod
    def from_states(cls, states: Sequence[NodeState], depth: float = -50.0) -> "NodeField":
        n = len(states)
        return cls(
            position=np.array([s.position for s in states], dtype=float).reshape(n, 2),
            depth=np.full(n, depth),
            stored=np.array([s.stored_data for s in states], dtype=float),
            capacity=np.array([s.channel_capacity for s in states], dtype=float),
            initial_voi=np.array([s.initial_voi for s in states], dtype=float),
            collection_start=np.array(
                [np.nan if s.collection_start_time is None else s.collection_start_time for s in states],
                dtype=float,
            ),
            needs=np.array([s.needs_collection for s in states], dtype=bool),
            occupied_by=np.array([-1 if s.occupied_by is None else s.occupied_by for s in states], dtype=int),
            collected=np.zeros(n),
        )


@dataclass
class WorldState:
    time: float
    auvs: list[AuvState]
    nodes: NodeField
    vortices: list[Vortex]
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    contacts: set = field(default_factory=set)
    crash_count: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class EnvConfig:
    field_size: float = 120.0
    num_devices: int = 55
    water_depth: float = -50.0
    num_auvs: int = 2
    sailing_depth: float = -10.0
    comm_distance: float = 6.0
    v_max: float = 2.0
    vortex_gamma: float = 8.0
    vortex_radius: float = 48.0
    duration: float = 1000.0
    dt: float = 1.0
    crash_distance: float = 5.0
    c_max_bits: float = 2.0e6
    num_vortices: int = 4
    turbulence: bool = True
    needing_fraction: float = 0.4
    arrival_rate_bps: float = 1000.0
    a_max: float = 0.5
    w_max: float = math.pi / 4
    launch_box: float = 25.0
    initial_fill: tuple[float, float] = (0.25, 1.0)
    initial_voi_range: tuple[float, float] = (0.5, 1.5)

    @property
    def max_steps(self) -> int:
        return int(round(self.duration / self.dt))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def _as_arrays(vortices: Sequence[Vortex]):
    c = np.array([v.center for v in vortices], dtype=float).reshape(-1, 2)
    d = np.array([v.radius_delta for v in vortices], dtype=float)
    g = np.array([v.intensity_gamma for v in vortices], dtype=float)
    return c, d, g


def flow_velocity(vortices: Sequence[Vortex], p) -> np.ndarray:
    """Superposed Lamb-Oseen current at ``p`` (shape (2,) or (n, 2)), m/s."""
    p = np.asarray(p, dtype=float)
    pts = p.reshape(-1, 2)
    out = np.zeros_like(pts)
    if len(vortices) == 0:
        return out.reshape(p.shape)
    c, d, g = _as_arrays(vortices)
    rel = pts[:, None, :] - c[None, :, :]  # (n, V, 2)
    r2 = np.einsum("nvk,nvk->nv", rel, rel)
    safe = np.where(r2 > 0.0, r2, 1.0)
    k = np.where(r2 > 0.0, g / (2.0 * math.pi * safe) * -np.expm1(-r2 / d**2), 0.0)
    out[:, 0] = np.sum(-k * rel[..., 1], axis=1)
    out[:, 1] = np.sum(k * rel[..., 0], axis=1)
    return out.reshape(p.shape)


def vorticity(vortex: Vortex, p) -> float:
    dx = p[0] - vortex.center[0]
    dy = p[1] - vortex.center[1]
    d2 = vortex.radius_delta**2
    return vortex.intensity_gamma / (math.pi * d2) * math.exp(-(dx * dx + dy * dy) / d2)


def relative_velocity(v_cmd, p, vortices: Sequence[Vortex]) -> np.ndarray:
    """Ground velocity of a vehicle commanding ``v_cmd`` at ``p``: v_cmd minus the current."""
    return np.asarray(v_cmd, dtype=float) - flow_velocity(vortices, p)


def step_kinematics(
    auv: AuvState,
    action: tuple[float, float],
    dt: float,
    vortices: Sequence[Vortex],
    cfg: EnvConfig = EnvConfig(),
) -> AuvState:
    """Advance one explicit-Euler step. Out-of-range actions are clamped and flagged."""
    accel, ang_vel = float(action[0]), float(action[1])
    ca = min(max(accel, -cfg.a_max), cfg.a_max)
    cw = min(max(ang_vel, -cfg.w_max), cfg.w_max)
    new = auv.copy()
    new.action_clamped = (ca != accel) or (cw != ang_vel)
    new.heading = wrap_angle(auv.heading + cw * dt)
    new.speed_cmd = min(max(auv.speed_cmd + ca * dt, 0.0), cfg.v_max)
    v_cmd = new.speed_cmd * np.array([math.cos(new.heading), math.sin(new.heading)])
    ground = relative_velocity(v_cmd, auv.position, vortices)
    new.position = np.clip(auv.position + ground * dt, 0.0, cfg.field_size)
    return new


def detect_collisions(positions, d_s: float) -> set[tuple[int, int]]:
    """Unordered index pairs closer than ``d_s``. Accepts AuvStates or points."""
    pts = [np.asarray(getattr(a, "position", a), dtype=float) for a in positions]
    return {
        (i, j)
        for i, j in combinations(range(len(pts)), 2)
        if float(np.hypot(*(pts[i] - pts[j]))) < d_s
    }


def engage_hover(world: WorldState, cfg: EnvConfig) -> None:
    """Put every AUV within ``comm_distance`` of its target into hover."""
    for auv in world.auvs:
        if auv.target_node is None or auv.hovering:
            continue
        i = auv.target_node
        if np.hypot(*(world.nodes.position[i] - auv.position)) <= cfg.comm_distance:
            auv.hovering = True
            auv.speed_cmd = 0.0
            if math.isnan(world.nodes.collection_start[i]):
                world.nodes.collection_start[i] = world.time


def step_nodes(world: WorldState, dt: float, cfg: EnvConfig = EnvConfig()) -> list[tuple[int, int]]:
    """Drain hovered nodes, accrue the rest; returns (auv, node) pairs that finished.

    Sets ``step_bits``/``step_capacity`` on each AUV.
    """
    nodes = world.nodes
    drained = np.zeros(len(nodes), dtype=bool)
    finished = []
    for j, auv in enumerate(world.auvs):
        auv.step_bits = 0.0
        auv.step_capacity = 0.0
        i = auv.target_node
        if not auv.hovering or i is None:
            continue
        if np.hypot(*(nodes.position[i] - auv.position)) > cfg.comm_distance:
            continue
        bits = min(nodes.stored[i], nodes.capacity[i] * dt)
        nodes.stored[i] -= bits
        nodes.collected[i] += bits
        auv.step_bits = bits
        auv.step_capacity = nodes.capacity[i]
        drained[i] = True
        if nodes.stored[i] <= 0.0:
            nodes.stored[i] = 0.0
            nodes.needs[i] = False
            nodes.occupied_by[i] = -1
            finished.append((j, i))
    accrue = nodes.needs & ~drained
    nodes.stored[accrue] = np.minimum(nodes.stored[accrue] + cfg.arrival_rate_bps * dt, cfg.c_max_bits)
    return finished


def make_world(cfg: EnvConfig, acoustic: acoustics.AcousticConfig, seed: int) -> WorldState:
    """Fresh episode layout drawn from a generator seeded with ``seed``."""
    rng = np.random.default_rng(seed)
    s = cfg.field_size
    m = cfg.num_devices
    pos = rng.uniform(0.0, s, size=(m, 2))
    depth = rng.uniform(cfg.water_depth, 0.5 * cfg.water_depth, size=m)
    n_need = int(round(cfg.needing_fraction * m))
    needs = np.zeros(m, dtype=bool)
    needs[rng.choice(m, size=n_need, replace=False)] = True
    lo, hi = cfg.initial_fill
    stored = np.where(needs, rng.uniform(lo, hi, size=m), 0.0) * cfg.c_max_bits
    voi0 = rng.uniform(*cfg.initial_voi_range, size=m)
    vertical = depth - cfg.sailing_depth
    capacity = np.array(
        [acoustics.channel_capacity(math.hypot(cfg.comm_distance, dz), acoustic) for dz in vertical]
    )
    nodes = NodeField(
        position=pos,
        depth=depth,
        stored=stored,
        capacity=capacity,
        initial_voi=voi0,
        collection_start=np.full(m, np.nan),
        needs=needs,
        occupied_by=np.full(m, -1, dtype=int),
        collected=np.zeros(m),
    )
    # drawn even with turbulence off so both scenarios share node and AUV layouts
    vortices = []
    for _ in range(cfg.num_vortices):
        c = rng.uniform(0.0, s, size=2)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        vortices.append(Vortex((float(c[0]), float(c[1])), cfg.vortex_radius, sign * cfg.vortex_gamma))
    if not cfg.turbulence:
        vortices = []
    auvs = []
    for _ in range(cfg.num_auvs):
        p = rng.uniform(0.0, min(cfg.launch_box, s), size=2)
        auvs.append(AuvState(position=p, heading=float(rng.uniform(-math.pi, math.pi))))
    return WorldState(time=0.0, auvs=auvs, nodes=nodes, vortices=vortices, rng=rng)
