"""Episode stepping and rollouts for the multi-AUV collection task."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import energetics, learnkit, mission
from .config import TrainConfig
from .mdp_io import ACTION_DIM, decode_action, make_obs_spec, observe_all
from .ocean_env import (
    WorldState,
    detect_collisions,
    engage_hover,
    make_world,
    step_kinematics,
    step_nodes,
)

Policy = Callable[[np.ndarray], np.ndarray]

TRAJECTORY_COLUMNS = ("time", "auv_id", "x", "y", "heading", "speed", "energy", "target")


@dataclass
class StepResult:
    rewards: np.ndarray
    components: list[mission.RewardComponents]
    terminal: bool
    truncated: bool
    invalid_actions: int = 0
    clamped_actions: int = 0
    new_crashes: int = 0

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


@dataclass
class EpochMetrics:
    epoch: int = 0
    cumulative_reward: float = 0.0
    sum_data_rate: float = 0.0  # team throughput, kbit per second of mission time
    data_collected: float = 0.0  # Mbit collected by the team
    sum_voi: float = 0.0
    avg_energy_cost: float = 0.0  # J per AUV per step
    crash_count: int = 0
    steps: int = 0
    objective: float = 0.0
    critic_loss: list[float] = field(default_factory=list)
    policy_loss: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)


class Simulator:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.spec = make_obs_spec(cfg.env, cfg.mdp, cfg.acoustics)
        self.energy_cfg = cfg.energy

    @property
    def obs_dim(self) -> int:
        return self.spec.dim

    @property
    def num_agents(self) -> int:
        return self.cfg.env.num_auvs

    def reset(self, seed: int) -> WorldState:
        world = make_world(self.cfg.env, self.cfg.acoustics, seed)
        for j in range(len(world.auvs)):
            mission.select_target(world, j, self.cfg.priority, self.cfg.env.c_max_bits,
                                  self.cfg.acoustics.max_capacity_bps)
        world.contacts = detect_collisions(world.auvs, self.cfg.env.crash_distance)
        return world

    def observe(self, world: WorldState) -> np.ndarray:
        return observe_all(world, self.spec)

    def step(self, world: WorldState, raw_actions) -> StepResult:
        """Apply one raw (pre-squash) action per AUV and advance the world by dt."""
        env = self.cfg.env
        raw_actions = np.asarray(raw_actions, dtype=float).reshape(len(world.auvs), ACTION_DIM)
        invalid = clamped = 0
        for j in range(len(world.auvs)):
            act = decode_action(raw_actions[j], world, j, env, self.cfg.priority,
                                self.cfg.acoustics.max_capacity_bps)
            invalid += act.invalid
            auv = world.auvs[j]
            if auv.hovering or act.target is None:
                auv.speed_cmd = 0.0
                moving = False
            else:
                new = step_kinematics(auv, (act.accel, act.ang_vel), env.dt, world.vortices, env)
                clamped += new.action_clamped
                world.auvs[j] = auv = new
                moving = True
            holding = not moving or auv.speed_cmd == 0.0
            auv.step_energy = energetics.step_energy(auv.speed_cmd, holding, self.energy_cfg)
            auv.energy_spent += auv.step_energy
            auv.step_voi = 0.0

        engage_hover(world, env)
        finished = step_nodes(world, env.dt, env)
        world.time += env.dt
        for j, i in finished:
            world.auvs[j].step_voi = mission.voi(world.nodes.state(i), world.time, self.cfg.voi)

        contacts = detect_collisions(world.auvs, env.crash_distance)
        new_crashes = len(contacts - world.contacts)
        world.crash_count += new_crashes
        world.contacts = contacts

        rewards = np.zeros(len(world.auvs))
        comps = []
        for j in range(len(world.auvs)):
            rewards[j], c = mission.step_reward(world, j, self.cfg.reward)
            comps.append(c)

        for j, i in finished:
            auv = world.auvs[j]
            auv.target_node = None
            auv.hovering = False
        for j, auv in enumerate(world.auvs):
            if auv.target_node is None:
                mission.select_target(world, j, self.cfg.priority, env.c_max_bits,
                                      self.cfg.acoustics.max_capacity_bps)

        terminal = not world.nodes.needs.any()
        truncated = not terminal and world.time >= env.duration - 1e-9
        return StepResult(rewards, comps, terminal, truncated, invalid, clamped, new_crashes)


# --- policies ------------------------------------------------------------------------


class ZeroPolicy:
    def __call__(self, obs):
        return np.zeros(ACTION_DIM)


class NetworkPolicy:
    """Squashed-Gaussian policy network. Deterministic uses the mean."""

    def __init__(self, params: learnkit.MLP, rng: Optional[np.random.Generator] = None,
                 deterministic: bool = True):
        self.params = params
        self.rng = rng
        self.deterministic = deterministic

    def __call__(self, obs):
        x = np.asarray(obs, dtype=self.params.dtype)
        s = learnkit.policy_sample(self.params, x, self.rng, deterministic=self.deterministic)
        return s.u[0].astype(float)


class HeuristicPilot:
    """Steer toward the node in observation slot 0 at full speed."""

    def __init__(self, gain: float = 2.0):
        self.gain = gain

    def __call__(self, obs):
        return np.arctanh(pilot_actions(np.asarray(obs)[None, :], self.gain)[0])


def pilot_actions(obs: np.ndarray, gain: float = 2.0) -> np.ndarray:
    """Squashed pilot actions for a batch of observations; zero when no target is visible."""
    bx, by = obs[:, 6], obs[:, 7]
    bearing = np.arctan2(by, bx)
    turn = np.clip(gain * bearing, -0.999, 0.999)
    accel = np.where(np.abs(bearing) < 0.5, 0.999, -0.5)
    idle = (bx == 0.0) & (by == 0.0)
    return np.where(idle[:, None], 0.0, np.stack([accel, turn], axis=1))


# --- rollouts ------------------------------------------------------------------------


class EpisodeTally:
    """Per-AUV running sums that become an EpochMetrics row at episode end."""

    def __init__(self, num_agents: int):
        self.reward = 0.0
        self.bits = np.zeros(num_agents)
        self.voi = np.zeros(num_agents)
        self.capacity = np.zeros(num_agents)
        self.steps = 0

    def add(self, world: WorldState, res: StepResult) -> None:
        self.steps += 1
        self.reward += float(res.rewards.sum())
        for j, auv in enumerate(world.auvs):
            self.bits[j] += auv.step_bits
            self.voi[j] += auv.step_voi
            if auv.step_voi > 0:
                self.capacity[j] += auv.step_capacity

    def metrics(self, world: WorldState, cfg: TrainConfig, epoch: int = 0) -> EpochMetrics:
        energy = np.array([a.energy_spent for a in world.auvs])
        totals = mission.ObjectiveTotals(self.bits / 1e6, self.capacity / 1e6, self.voi, energy / 1e3)
        return EpochMetrics(
            epoch=epoch,
            cumulative_reward=self.reward,
            sum_data_rate=float(self.bits.sum() / 1e3 / max(world.time, cfg.env.dt)),
            data_collected=float(self.bits.sum() / 1e6),
            sum_voi=float(self.voi.sum()),
            avg_energy_cost=float(energy.sum() / (len(energy) * max(self.steps, 1))),
            crash_count=world.crash_count,
            steps=self.steps,
            objective=mission.episode_objective(totals, cfg.objective),
        )


def run_episode(sim: Simulator, policies: Sequence[Policy], seed: int, epoch: int = 0,
                record: bool = False):
    """Roll out one episode; returns (EpochMetrics, trajectory rows)."""
    if len(policies) != sim.num_agents:
        raise ValueError(f"{len(policies)} policies for {sim.num_agents} AUVs")
    world = sim.reset(seed)
    n = len(world.auvs)
    tally = EpisodeTally(n)
    traj = _traj_rows(world) if record else []
    while True:
        obs = sim.observe(world)
        actions = np.stack([policies[j](obs[j]) for j in range(n)])
        res = sim.step(world, actions)
        tally.add(world, res)
        if record:
            traj.extend(_traj_rows(world))
        if res.done:
            break
    return tally.metrics(world, sim.cfg, epoch), traj


def _traj_rows(world: WorldState):
    return [
        (world.time, j, float(a.position[0]), float(a.position[1]), a.heading, a.speed_cmd,
         a.energy_spent, -1 if a.target_node is None else a.target_node)
        for j, a in enumerate(world.auvs)
    ]
