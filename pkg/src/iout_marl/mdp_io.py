"""Per-AUV observation vectors, range-gated peer sharing and action decoding.

Observation layout (version ``obs-v1``), all entries finite:

    own pose        6   x/S, y/S, cos h, sin h, speed/v_max, energy fraction
    node slots     7K   body-frame dx/S, dy/S, dist/S, stored/C_max,
                        capacity/N_max, is-target, held-by-other
    peer blocks  6(N-1) body-frame dx/S, dy/S, cos dh, sin dh, speed/v_max,
                        dist/S, each scaled by its gate e_jk
    vortex block    5   body-frame offset to nearest core /S, local current
                        (body frame, normalised), local vorticity (normalised)

Slot 0 holds the current target when there is one; the remaining slots are
the nearest other needing nodes. Unused slots are exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import acoustics, energetics
from .mission import PriorityParams, select_target
from .ocean_env import EnvConfig, WorldState, flow_velocity, vorticity

OBS_LAYOUT_VERSION = "obs-v1"
ACTION_DIM = 2
GATE_MODES = ("range", "shared", "independent")


@dataclass(frozen=True)
class MdpConfig:
    node_slots: int = 5
    comm_range_auv: Optional[float] = None  # None: sonar detection range, capped at the diagonal
    gate_mode: str = "range"

    def __post_init__(self):
        if self.node_slots < 1:
            raise ValueError("node_slots must be at least 1")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")


@dataclass(frozen=True)
class ObsSpec:
    """Everything ``build_observation`` needs, resolved once per configuration."""

    num_auvs: int
    node_slots: int
    field_size: float
    v_max: float
    c_max: float
    n_max: float
    comm_range: float
    gate_mode: str
    energy_scale: float
    flow_scale: float
    vorticity_scale: float

    @property
    def dim(self) -> int:
        return obs_dim(self.num_auvs, self.node_slots)


def obs_dim(num_auvs: int, node_slots: int) -> int:
    return 6 + 7 * node_slots + 6 * (num_auvs - 1) + 5


def make_obs_spec(env: EnvConfig, mdp: MdpConfig, acoustic: acoustics.AcousticConfig) -> ObsSpec:
    diagonal = math.sqrt(2.0) * env.field_size
    if mdp.comm_range_auv is None:
        try:
            comm = min(acoustics.detection_range(acoustic), diagonal)
        except acoustics.NoDetectionError:
            comm = 0.0
    else:
        comm = mdp.comm_range_auv
    # max over x of (1 - e^{-x^2}) / x is 0.6382, reached at x ~ 1.1209
    peak_flow = abs(env.vortex_gamma) / (2.0 * math.pi * env.vortex_radius) * 0.6382
    return ObsSpec(
        num_auvs=env.num_auvs,
        node_slots=mdp.node_slots,
        field_size=env.field_size,
        v_max=env.v_max,
        c_max=env.c_max_bits,
        n_max=acoustic.max_capacity_bps,
        comm_range=comm,
        gate_mode=mdp.gate_mode,
        energy_scale=energetics.power_from_speed(env.v_max, env.v_max) * env.duration,
        flow_scale=peak_flow if peak_flow > 0 else 1.0,
        vorticity_scale=abs(env.vortex_gamma) / (math.pi * env.vortex_radius**2) or 1.0,
    )


def gate(world: WorldState, j: int, k: int, spec: ObsSpec) -> float:
    """Sharing weight e_jk of AUV k's state as seen by AUV j."""
    if j == k or spec.gate_mode == "shared":
        return 1.0
    if spec.gate_mode == "independent":
        return 0.0
    d = float(np.hypot(*(world.auvs[k].position - world.auvs[j].position)))
    return 1.0 if d <= spec.comm_range else 0.0


def build_observation(world: WorldState, auv_index: int, spec: ObsSpec) -> np.ndarray:
    auv = world.auvs[auv_index]
    s = spec.field_size
    ch, sh = math.cos(auv.heading), math.sin(auv.heading)
    rot = np.array([[ch, sh], [-sh, ch]])  # world -> body frame
    out = np.zeros(spec.dim)

    out[:6] = (
        auv.position[0] / s,
        auv.position[1] / s,
        ch,
        sh,
        auv.speed_cmd / spec.v_max,
        auv.energy_spent / spec.energy_scale,
    )

    nodes = world.nodes
    k = spec.node_slots
    base = 6
    rel = nodes.position - auv.position
    dist = np.hypot(rel[:, 0], rel[:, 1])
    candidates = np.flatnonzero(nodes.needs)
    target = auv.target_node
    order = [target] if target is not None and nodes.needs[target] else []
    rest = candidates[candidates != target] if target is not None else candidates
    rest = rest[np.argsort(dist[rest], kind="stable")]
    order.extend(int(i) for i in rest[: k - len(order)])
    for slot, i in enumerate(order):
        off = base + 7 * slot
        b = rot @ rel[i]
        occ = nodes.occupied_by[i]
        out[off:off + 7] = (
            b[0] / s,
            b[1] / s,
            dist[i] / s,
            nodes.stored[i] / spec.c_max,
            nodes.capacity[i] / spec.n_max,
            1.0 if i == target else 0.0,
            1.0 if (occ >= 0 and occ != auv_index) else 0.0,
        )

    off = base + 7 * k
    for other in range(spec.num_auvs):
        if other == auv_index:
            continue
        e = gate(world, auv_index, other, spec)
        if e != 0.0:
            o = world.auvs[other]
            b = rot @ (o.position - auv.position)
            dh = o.heading - auv.heading
            out[off:off + 6] = e * np.array((
                b[0] / s,
                b[1] / s,
                math.cos(dh),
                math.sin(dh),
                o.speed_cmd / spec.v_max,
                math.hypot(b[0], b[1]) / s,
            ))
        off += 6

    if world.vortices:
        centers = np.array([v.center for v in world.vortices])
        dv = np.hypot(*(centers - auv.position).T)
        nearest = world.vortices[int(np.argmin(dv))]
        b = rot @ (np.asarray(nearest.center) - auv.position)
        flow = rot @ flow_velocity(world.vortices, auv.position)
        w = sum(vorticity(v, auv.position) for v in world.vortices)
        out[off:off + 5] = (
            b[0] / s,
            b[1] / s,
            flow[0] / spec.flow_scale,
            flow[1] / spec.flow_scale,
            w / spec.vorticity_scale,
        )
    return out


def observe_all(world: WorldState, spec: ObsSpec) -> np.ndarray:
    return np.stack([build_observation(world, j, spec) for j in range(len(world.auvs))])


@dataclass(frozen=True)
class AgentAction:
    accel: float
    ang_vel: float
    target: Optional[int]
    invalid: bool = False


def decode_action(
    policy_output,
    world: WorldState,
    auv_index: int,
    env: EnvConfig,
    priority: PriorityParams = PriorityParams(),
    n_max: float = 1.0e6,
) -> AgentAction:
    """Squash a raw policy output into bounded controls and refresh the target.

    A new target is picked only when the AUV has none or its node is drained.
    """
    raw = np.asarray(policy_output, dtype=float).reshape(-1)
    auv = world.auvs[auv_index]
    t = auv.target_node
    if t is None or not world.nodes.needs[t]:
        if t is not None and world.nodes.occupied_by[t] == auv_index:
            world.nodes.occupied_by[t] = -1
        auv.target_node = None
        auv.hovering = False
        t = select_target(world, auv_index, priority, env.c_max_bits, n_max)
    if raw.shape != (ACTION_DIM,) or not np.all(np.isfinite(raw)):
        return AgentAction(0.0, 0.0, t, invalid=True)
    a = np.tanh(raw)
    return AgentAction(float(a[0] * env.a_max), float(a[1] * env.w_max), t)
