"""Node priority, value of information, assignment constraints, the per-step
reward and the episode objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ocean_env import NodeState, WorldState


@dataclass(frozen=True)
class PriorityParams:
    xi: float = 0.005
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class VoiParams:
    beta: float = 0.7
    sigma: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class RewardWeights:
    w_ec: float = -0.001
    w_voi: float = 1.0
    w_dr: float = 2e-6
    w_dp: float = 1.0
    w_cs: float = -5.0
    d_r: float = 20.0
    o: float = 0.1
    crash_distance: float = 5.0

    def __post_init__(self):
        if not (self.d_r > 0 and self.o > 0 and self.crash_distance > 0):
            raise ValueError("d_r, o and crash_distance must be positive")


@dataclass(frozen=True)
class ObjectiveWeights:
    L_k: float = 0.5
    J_n: float = 0.1
    varsigma_v: float = 0.5
    W_e: float = 0.01

    def __post_init__(self):
        for name in ("L_k", "J_n", "varsigma_v", "W_e"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class MissionConfig:
    priority: PriorityParams = field(default_factory=PriorityParams)
    voi: VoiParams = field(default_factory=VoiParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    objective: ObjectiveWeights = field(default_factory=ObjectiveWeights)


# --- priority and target selection -------------------------------------------------


def priority(
    node: NodeState,
    auv_pos,
    t: float,
    params: PriorityParams,
    c_max: float = 2.0e6,
    n_max: float = 1.0e6,
) -> float:
    """Collection priority of ``node`` for an AUV at ``auv_pos``.

    Capacity is normalised by ``n_max`` so the storage ratio is dimensionless.
    ``t`` is accepted for interface symmetry; the node snapshot is already at ``t``.
    """
    d = float(np.hypot(*(np.asarray(node.position) - np.asarray(auv_pos))))
    n = node.channel_capacity / n_max
    return node.stored_data / (c_max * (n + params.epsilon)) - params.xi * d


def priority_scores(world: WorldState, auv_index: int, params: PriorityParams,
                    c_max: float = 2.0e6, n_max: float = 1.0e6) -> np.ndarray:
    nodes = world.nodes
    d = np.hypot(*(nodes.position - world.auvs[auv_index].position).T)
    return nodes.stored / (c_max * (nodes.capacity / n_max + params.epsilon)) - params.xi * d


def select_target(world: WorldState, auv_index: int, params: PriorityParams,
                  c_max: float = 2.0e6, n_max: float = 1.0e6) -> Optional[int]:
    """Claim the highest-priority free needing node; ``None`` means idle.

    Ties go to the lowest node index.
    """
    nodes = world.nodes
    free = nodes.needs & ((nodes.occupied_by < 0) | (nodes.occupied_by == auv_index))
    if not free.any():
        return None
    scores = np.where(free, priority_scores(world, auv_index, params, c_max, n_max), -np.inf)
    i = int(np.argmax(scores))
    prev = world.auvs[auv_index].target_node
    if prev is not None and prev != i and nodes.occupied_by[prev] == auv_index:
        nodes.occupied_by[prev] = -1
    nodes.occupied_by[i] = auv_index
    world.auvs[auv_index].target_node = i
    return i


def assignment_matrix(world: WorldState) -> np.ndarray:
    """chi[j, i] = 1 when AUV j is hovering at node i."""
    chi = np.zeros((len(world.auvs), len(world.nodes)), dtype=int)
    for j, auv in enumerate(world.auvs):
        if auv.hovering and auv.target_node is not None:
            chi[j, auv.target_node] = 1
    return chi


def check_assignment(world: WorldState) -> None:
    """Raise if any node hosts two AUVs or a claim disagrees with a target."""
    chi = assignment_matrix(world)
    if (chi.sum(axis=0) > 1).any() or (chi.sum(axis=1) > 1).any():
        raise AssertionError("assignment constraint violated")
    targets = [a.target_node for a in world.auvs if a.target_node is not None]
    if len(targets) != len(set(targets)):
        raise AssertionError("two AUVs share a target node")
    for j, auv in enumerate(world.auvs):
        if auv.target_node is not None and world.nodes.occupied_by[auv.target_node] != j:
            raise AssertionError(f"AUV {j} targets a node it does not hold")


# --- value of information ----------------------------------------------------------


def voi(node: NodeState, t: float, params: VoiParams) -> float:
    start = node.collection_start_time
    if start is None or t < start:
        return 0.0
    v = node.initial_voi
    return params.beta * v + (1.0 - params.beta) * v * math.exp(-(t - start) / params.sigma)


def collection_time(k_bits: float, capacity_bps: float) -> float:
    if capacity_bps <= 0:
        raise ZeroDivisionError("zero channel capacity gives an infinite collection time")
    return k_bits / capacity_bps


def travel_time(distance_m: float, mean_speed: float) -> float:
    if mean_speed <= 0:
        raise ZeroDivisionError("mean speed must be positive")
    return distance_m / mean_speed


def voi_update(node: NodeState, t_c: float, t_m: float, params: VoiParams) -> float:
    """VoI of ``node`` when the AUV starts on the next node, ``t_c + t_m`` later."""
    if not math.isfinite(t_c):
        raise ZeroDivisionError("collection time is infinite")
    v = node.initial_voi
    return params.beta * v + (1.0 - params.beta) * v * math.exp(-(t_c + t_m) / params.sigma)


def next_collection_start(node: NodeState, t_c: float, t_m: float) -> float:
    start = 0.0 if node.collection_start_time is None else node.collection_start_time
    return start + t_c + t_m


# --- reward and objective ----------------------------------------------------------


@dataclass(frozen=True)
class RewardComponents:
    r_ec: float
    r_voi: float
    r_dr: float
    r_dp: float
    r_cs: float


def distance_reward(d: Optional[float], weights: RewardWeights) -> float:
    if d is None or d > weights.d_r:
        return 0.0
    return 1.0 / (d + weights.o)


def collision_reward(positions: np.ndarray, j: int, d_s: float) -> float:
    n = len(positions)
    if n < 2:
        return 0.0
    d = np.hypot(*(np.delete(positions, j, axis=0) - positions[j]).T)
    return float(np.sum(1.0 - np.minimum(d, d_s) / d_s) / (n - 1))


def step_reward(world: WorldState, auv_index: int, weights: RewardWeights) -> tuple[float, RewardComponents]:
    """Weighted per-step reward of one AUV plus the unweighted components."""
    auv = world.auvs[auv_index]
    d = None
    if auv.target_node is not None:
        d = float(np.hypot(*(world.nodes.position[auv.target_node] - auv.position)))
    positions = np.array([a.position for a in world.auvs])
    comp = RewardComponents(
        r_ec=auv.step_energy,
        r_voi=auv.step_voi,
        r_dr=auv.step_bits,
        r_dp=distance_reward(d, weights),
        r_cs=collision_reward(positions, auv_index, weights.crash_distance),
    )
    total = (
        weights.w_ec * comp.r_ec
        + weights.w_voi * comp.r_voi
        + weights.w_dr * comp.r_dr
        + weights.w_dp * comp.r_dp
        + weights.w_cs * comp.r_cs
    )
    return total, comp


@dataclass
class ObjectiveTotals:
    """Per-AUV episode sums: data (Mbit), hover-time capacity (Mbit/s), VoI, energy (kJ)."""

    data_mbit: Sequence[float]
    capacity_mbps: Sequence[float]
    voi: Sequence[float]
    energy_kj: Sequence[float]


def episode_objective(totals: ObjectiveTotals, weights: ObjectiveWeights) -> float:
    return (
        weights.L_k * float(np.sum(totals.data_mbit))
        + weights.J_n * float(np.sum(totals.capacity_mbps))
        + weights.varsigma_v * float(np.sum(totals.voi))
        - weights.W_e * float(np.sum(totals.energy_kj))
    )
