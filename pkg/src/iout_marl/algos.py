"""Soft actor-critic (online expert), independent conservative Q-learning
(offline, one learner per AUV) and behavioural cloning.

All learners use twin critics with Polyak-averaged targets and a
log-parameterised entropy coefficient. Actions seen by the critics are the
squashed values in (-1, 1).
"""

from __future__ import annotations

import logging
import math
import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import learnkit as lk
from .config import AlgoConfig, TrainConfig
from .mdp_io import ACTION_DIM
from .simulator import pilot_actions

logger = logging.getLogger(__name__)

ACTION_CLIP = 1.0 - 1e-6


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray  # squashed, in (-1, 1)
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.rew)


@dataclass
class AgentLearner:
    policy: lk.MLP
    q1: lk.MLP
    q2: lk.MLP
    q1_targ: lk.MLP
    q2_targ: lk.MLP
    log_alpha: float
    policy_opt: lk.AdamState
    q1_opt: lk.AdamState
    q2_opt: lk.AdamState
    alpha_opt: lk.ScalarAdam
    updates: int = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def nets(self) -> dict[str, lk.MLP]:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2, "q1_targ": self.q1_targ,
                "q2_targ": self.q2_targ}


def make_learner(obs_dim: int, cfg: AlgoConfig, rng: np.random.Generator,
                 act_dim: int = ACTION_DIM) -> AgentLearner:
    dt = np.dtype(cfg.dtype)
    hidden = list(cfg.hidden)
    policy = lk.init_mlp([obs_dim, *hidden, 2 * act_dim], rng, dtype=dt)
    q1 = lk.init_mlp([obs_dim + act_dim, *hidden, 1], rng, dtype=dt)
    q2 = lk.init_mlp([obs_dim + act_dim, *hidden, 1], rng, dtype=dt)
    return AgentLearner(
        policy=policy, q1=q1, q2=q2, q1_targ=q1.copy(), q2_targ=q2.copy(),
        log_alpha=math.log(cfg.alpha_init),
        policy_opt=lk.adam_state(policy, cfg.lr),
        q1_opt=lk.adam_state(q1, cfg.lr),
        q2_opt=lk.adam_state(q2, cfg.lr),
        alpha_opt=lk.ScalarAdam(cfg.lr_alpha),
    )


def _q(net: lk.MLP, obs, act, cache=None) -> np.ndarray:
    return lk.forward(net, np.concatenate([obs, act], axis=1), cache)[:, 0]


# --- pieces of the losses ----------------------------------------------------------


def alpha_gradient(log_alpha: float, log_prob: np.ndarray, target_entropy: float) -> float:
    """d/d(log alpha) of E[-alpha * (log pi + H0)]."""
    return -math.exp(log_alpha) * float(np.mean(log_prob + target_entropy))


def update_alpha(learner: AgentLearner, batch: Batch, cfg: AlgoConfig, rng) -> float:
    s = lk.policy_sample(learner.policy, batch.obs, rng)
    g = alpha_gradient(learner.log_alpha, s.log_prob, cfg.target_entropy)
    learner.log_alpha = learner.alpha_opt.step(learner.log_alpha, g)
    return float(np.mean(s.log_prob))


def td_target(learner: AgentLearner, batch: Batch, gamma: float, rng) -> np.ndarray:
    """r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')), a' ~ pi."""
    s = lk.policy_sample(learner.policy, batch.next_obs, rng)
    q = np.minimum(_q(learner.q1_targ, batch.next_obs, s.action), _q(learner.q2_targ, batch.next_obs, s.action))
    return batch.rew + gamma * (1.0 - batch.done) * (q - learner.alpha * s.log_prob)


def conservative_penalty(q_samples: np.ndarray, log_density: np.ndarray, q_data: np.ndarray):
    """Mean over states of logsumexp-estimate(Q) - Q(s, a_data).

    ``q_samples`` (B, S) are Q values at sampled actions drawn with
    ``log_density`` (B, S) (zero for an exact sum over a finite action set).
    Returns the value and its gradients w.r.t. ``q_samples`` and ``q_data``.
    """
    cat = q_samples - log_density
    m = cat.max(axis=1, keepdims=True)
    w = np.exp(cat - m)
    z = w.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0] - math.log(cat.shape[1])
    b = len(q_data)
    value = float(np.mean(lse - q_data))
    return value, w / z / b, np.full(b, -1.0 / b)


def cql_critic_loss(learner: AgentLearner, batch: Batch, cfg: AlgoConfig, rng,
                    alpha_cql: Optional[float] = None, target: Optional[np.ndarray] = None):
    """Conservative critic loss for both critics and their gradients.

    loss_i = alpha_cql * E_s[logsumexp_a Q_i(s, a) - Q_i(s, a_data)]
             + 1/2 E[(Q_i(s, a_data) - y)^2]

    The log-sum-exp over the action box is estimated from
    ``num_action_samples`` uniform actions and as many current-policy
    actions, each divided by its sampling density. Sampled actions and the
    TD target carry no gradient.
    """
    alpha_cql = cfg.alpha_cql if alpha_cql is None else alpha_cql
    if len(batch) == 0:
        raise ValueError("empty batch")
    y = td_target(learner, batch, cfg.gamma, rng) if target is None else target
    b, d = batch.obs.shape
    a_dim = batch.act.shape[1]
    dtype = batch.obs.dtype
    if alpha_cql > 0:
        m = cfg.num_action_samples
        obs_rep = np.repeat(batch.obs, m, axis=0)
        a_rand = rng.uniform(-1.0, 1.0, size=(b * m, a_dim)).astype(dtype)
        pi = lk.policy_sample(learner.policy, obs_rep, rng)
        log_dens = np.concatenate([
            np.full((b, m), -a_dim * math.log(2.0)),
            pi.log_prob.reshape(b, m),
        ], axis=1)
        x = np.concatenate([
            np.concatenate([obs_rep, a_rand], axis=1),
            np.concatenate([obs_rep, pi.action.astype(dtype)], axis=1),
            np.concatenate([batch.obs, batch.act], axis=1),
        ])
    else:
        m = 0
        x = np.concatenate([batch.obs, batch.act], axis=1)
    total = 0.0
    grads = []
    info = {}
    for name, net in (("q1", learner.q1), ("q2", learner.q2)):
        cache = lk.Cache()
        out = lk.forward(net, x, cache)[:, 0]
        q_data = out[2 * b * m:]
        td_err = q_data - y
        loss = 0.5 * float(np.mean(td_err * td_err))
        up = np.zeros(len(out))
        up[2 * b * m:] = td_err / b
        if m:
            q_samp = np.concatenate([out[:b * m].reshape(b, m), out[b * m:2 * b * m].reshape(b, m)], axis=1)
            pen, g_samp, g_data = conservative_penalty(q_samp, log_dens, q_data)
            loss += alpha_cql * pen
            up[:b * m] = alpha_cql * g_samp[:, :m].reshape(-1)
            up[b * m:2 * b * m] = alpha_cql * g_samp[:, m:].reshape(-1)
            up[2 * b * m:] += alpha_cql * g_data
            info[f"{name}_penalty"] = pen
        g, _ = lk.backward(net, cache, up[:, None].astype(out.dtype))
        grads.append(g)
        total += loss
    info["q_data_mean"] = float(np.mean(q_data))
    return total, grads, info


def policy_loss_and_grad(learner: AgentLearner, batch: Batch, rng, guide: Optional[np.ndarray] = None,
                         guide_weight: float = 0.0):
    """E[alpha log pi(a|s) - min(Q1, Q2)(s, a)], a ~ pi reparameterised.

    With ``guide`` actions and a positive ``guide_weight`` the loss gains
    guide_weight * E[|a - guide|^2].
    """
    s = lk.policy_sample(learner.policy, batch.obs, rng)
    b = len(batch)
    act = s.action.astype(batch.obs.dtype)
    c1, c2 = lk.Cache(), lk.Cache()
    x = np.concatenate([batch.obs, act], axis=1)
    q1 = lk.forward(learner.q1, x, c1)[:, 0]
    q2 = lk.forward(learner.q2, x, c2)[:, 0]
    use1 = q1 <= q2
    qmin = np.where(use1, q1, q2)
    alpha = learner.alpha
    loss = float(np.mean(alpha * s.log_prob - qmin))
    w1 = use1.astype(q1.dtype)
    _, dx1 = lk.backward(learner.q1, c1, (-w1 / b)[:, None])
    _, dx2 = lk.backward(learner.q2, c2, (-(1.0 - w1) / b)[:, None])
    d_action = (dx1 + dx2)[:, -act.shape[1]:]
    if guide is not None and guide_weight > 0:
        diff = act - guide.astype(act.dtype)
        loss += guide_weight * float(np.mean(np.sum(diff * diff, axis=1)))
        d_action = d_action + (2.0 * guide_weight / b) * diff
    grads = lk.policy_backward(learner.policy, s, d_action, np.full(b, alpha / b))
    return loss, grads


def cloning_policy_loss_and_grad(learner: AgentLearner, batch: Batch, rng):
    """E[alpha log pi(a|s)] - E[log pi(a_data|s)]: the warm-up actor loss of offline training."""
    s = lk.policy_sample(learner.policy, batch.obs, rng)
    b = len(batch)
    alpha = learner.alpha
    grads = lk.policy_backward(learner.policy, s, np.zeros_like(s.action), np.full(b, alpha / b))
    u_data = np.arctanh(np.clip(batch.act, -ACTION_CLIP, ACTION_CLIP))
    nll, nll_grads = lk.gaussian_nll(learner.policy, batch.obs, u_data)
    for g, h in zip(grads.arrays(), nll_grads.arrays()):
        g += h
    return float(alpha * np.mean(s.log_prob)) + nll, grads


def _critic_step(learner: AgentLearner, grads) -> None:
    lk.optimizer_step(learner.q1, grads[0], learner.q1_opt)
    lk.optimizer_step(learner.q2, grads[1], learner.q2_opt)


def _targets_step(learner: AgentLearner, tau: float) -> None:
    lk.soft_update(learner.q1_targ, learner.q1, tau)
    lk.soft_update(learner.q2_targ, learner.q2, tau)


def sac_update(learner: AgentLearner, batch: Batch, cfg: AlgoConfig, rng) -> dict:
    """Entropy coefficient, twin critics, policy, then target networks."""
    if len(batch) == 0:
        logger.warning("sac_update called with an empty batch")
        return {}
    logp = update_alpha(learner, batch, cfg, rng)
    closs, grads, _ = cql_critic_loss(learner, batch, cfg, rng, alpha_cql=0.0)
    _critic_step(learner, grads)
    guide = pilot_actions(batch.obs) if cfg.demo_weight > 0 else None
    ploss, pgrads = policy_loss_and_grad(learner, batch, rng, guide, cfg.demo_weight)
    lk.optimizer_step(learner.policy, pgrads, learner.policy_opt)
    _targets_step(learner, cfg.tau)
    return {"critic_loss": closs, "policy_loss": ploss, "alpha": learner.alpha, "log_prob": logp}


def maicql_update(learner: AgentLearner, batch: Batch, cfg: AlgoConfig, rng) -> dict:
    """One conservative update in the order: alpha, critics, targets, policy."""
    logp = update_alpha(learner, batch, cfg, rng)
    closs, grads, info = cql_critic_loss(learner, batch, cfg, rng)
    _critic_step(learner, grads)
    _targets_step(learner, cfg.tau)
    if learner.updates < cfg.bc_warmup_updates:
        ploss, pgrads = cloning_policy_loss_and_grad(learner, batch, rng)
    else:
        ploss, pgrads = policy_loss_and_grad(learner, batch, rng)
    lk.optimizer_step(learner.policy, pgrads, learner.policy_opt)
    learner.updates += 1
    return {"critic_loss": closs, "policy_loss": ploss, "alpha": learner.alpha, "log_prob": logp, **info}


# --- training loops ----------------------------------------------------------------


def agent_batch(obs, act, rew, next_obs, done, idx, j, dtype) -> Batch:
    return Batch(
        obs=obs[idx, j].astype(dtype, copy=False),
        act=np.clip(act[idx, j], -ACTION_CLIP, ACTION_CLIP).astype(dtype, copy=False),
        rew=rew[idx, j].astype(dtype, copy=False),
        next_obs=next_obs[idx, j].astype(dtype, copy=False),
        done=done[idx].astype(dtype, copy=False),
    )


def train_online(cfg: TrainConfig, seed: int, progress: Optional[Callable[[str], None]] = None):
    """SAC experts, one independent learner per AUV sharing a joint replay buffer.

    Returns the learners and the per-episode metrics.
    """
    from .datasets import ReplayBuffer
    from .simulator import EpisodeTally, HeuristicPilot, Simulator

    algo = cfg.algo
    sim = Simulator(cfg)
    n = sim.num_agents
    rng = np.random.default_rng([seed, 1])
    learners = [make_learner(sim.obs_dim, algo, rng) for _ in range(n)]
    buf = ReplayBuffer(algo.buffer_size, n, sim.obs_dim, ACTION_DIM)
    dtype = np.dtype(algo.dtype)
    pilot = HeuristicPilot()
    total_steps = 0
    history = []
    for ep in range(algo.online_epochs):
        world = sim.reset(_episode_seed(seed, "online", ep))
        obs = sim.observe(world)
        tally = EpisodeTally(n)
        stats = []
        while True:
            if total_steps < algo.start_steps and algo.warmup == "pilot":
                raw = np.stack([pilot(o) for o in obs]) + rng.normal(0.0, algo.warmup_noise, (n, ACTION_DIM))
            elif total_steps < algo.start_steps:
                a = rng.uniform(-1.0, 1.0, size=(n, ACTION_DIM))
                raw = np.arctanh(np.clip(a, -ACTION_CLIP, ACTION_CLIP))
            else:
                raw = np.empty((n, ACTION_DIM))
                for j, lrn in enumerate(learners):
                    raw[j] = lk.policy_sample(lrn.policy, obs[j].astype(dtype), rng).u[0]
            res = sim.step(world, raw)
            next_obs = sim.observe(world)
            buf.push(obs, np.tanh(raw), res.rewards, next_obs, res.terminal, ep)
            obs = next_obs
            tally.add(world, res)
            total_steps += 1
            if total_steps >= algo.start_steps and total_steps % algo.update_every == 0:
                idx = buf.sample_indices(algo.batch_size, rng)
                for j, lrn in enumerate(learners):
                    batch = agent_batch(buf.obs, buf.act, buf.rew, buf.next_obs, buf.done, idx, j, dtype)
                    stats.append(sac_update(lrn, batch, algo, rng))
            if res.done:
                break
        m = tally.metrics(world, cfg, ep)
        for j in range(n):
            mine = stats[j::n]
            m.critic_loss.append(float(np.mean([s["critic_loss"] for s in mine])) if mine else math.nan)
            m.policy_loss.append(float(np.mean([s["policy_loss"] for s in mine])) if mine else math.nan)
        m.alpha = [lrn.alpha for lrn in learners]
        history.append(m)
        if progress:
            progress(f"online episode {ep}: reward {m.cumulative_reward:.2f} data {m.data_collected:.2f} Mbit")
    return learners, history


def _episode_seed(seed: int, phase: str, index: int) -> int:
    tag = {"online": 1, "dataset": 2, "eval": 3}[phase]
    return int(np.random.SeedSequence([seed, tag, index]).generate_state(1)[0])


def eval_seed(seed: int, epoch: int) -> int:
    return _episode_seed(seed, "eval", epoch)


def evaluate_policies(cfg: TrainConfig, policies: Sequence[lk.MLP], seed: int, epoch: int):
    from .simulator import NetworkPolicy, Simulator, run_episode

    sim = Simulator(cfg)
    metrics, _ = run_episode(sim, [NetworkPolicy(p) for p in policies], eval_seed(seed, epoch), epoch)
    return metrics


def check_dataset(dataset, cfg: TrainConfig) -> None:
    from .datasets import LayoutMismatchError
    from .mdp_io import OBS_LAYOUT_VERSION, obs_dim

    h = dataset.header
    expected = (OBS_LAYOUT_VERSION, cfg.env.num_auvs, obs_dim(cfg.env.num_auvs, cfg.mdp.node_slots), ACTION_DIM)
    found = (h.layout_version, h.num_agents, h.obs_dim, h.act_dim)
    if expected != found:
        raise LayoutMismatchError(
            "dataset layout (version, agents, obs_dim, act_dim) = "
            f"{found} does not match config {expected}"
        )


def maicql_train(dataset, num_agents: int, cfg: TrainConfig, seed: Optional[int] = None,
                 alpha_cql: Optional[float] = None, evaluate: bool = True,
                 progress: Optional[Callable[[str], None]] = None):
    """Independent conservative learners, one per AUV, no shared parameters.

    Each epoch runs ``updates_per_epoch`` updates for every agent, then rolls
    out the deterministic policies once. Returns (learners, per-epoch metrics).
    """
    from .simulator import EpochMetrics

    check_dataset(dataset, cfg)
    if num_agents != dataset.header.num_agents:
        raise ValueError(f"dataset holds {dataset.header.num_agents} agents, asked for {num_agents}")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seed = cfg.seed if seed is None else seed
    algo = cfg.algo
    if alpha_cql is not None:
        algo = dataclasses.replace(algo, alpha_cql=alpha_cql)
    dtype = np.dtype(algo.dtype)
    init_rng = np.random.default_rng([seed, 4])
    learners = [make_learner(dataset.header.obs_dim, algo, init_rng) for _ in range(num_agents)]
    rngs = [np.random.default_rng([seed, 5, j]) for j in range(num_agents)]
    history = []
    for epoch in range(algo.epochs):
        closs = [[] for _ in range(num_agents)]
        ploss = [[] for _ in range(num_agents)]
        for j, lrn in enumerate(learners):
            for _ in range(algo.updates_per_epoch):
                idx = rngs[j].integers(0, len(dataset), size=algo.batch_size)
                batch = agent_batch(dataset.obs, dataset.act, dataset.rew, dataset.next_obs, dataset.done,
                                    idx, j, dtype)
                st = maicql_update(lrn, batch, algo, rngs[j])
                closs[j].append(st["critic_loss"])
                ploss[j].append(st["policy_loss"])
        if evaluate:
            m = evaluate_policies(cfg, [l.policy for l in learners], seed, epoch)
        else:
            m = EpochMetrics(epoch=epoch)
        m.critic_loss = [float(np.mean(c)) for c in closs]
        m.policy_loss = [float(np.mean(p)) for p in ploss]
        m.alpha = [l.alpha for l in learners]
        history.append(m)
        if progress:
            progress(f"offline epoch {epoch}: reward {m.cumulative_reward:.2f} data {m.data_collected:.2f} Mbit")
    return learners, history


def bc_train(dataset, cfg: TrainConfig, seed: Optional[int] = None, steps: Optional[int] = None,
             evaluate: bool = False, progress: Optional[Callable[[str], None]] = None):
    """Maximum-likelihood fit of each agent's squashed-Gaussian policy to dataset actions."""
    from .simulator import EpochMetrics

    if len(dataset) == 0:
        raise ValueError("cannot clone an empty dataset")
    seed = cfg.seed if seed is None else seed
    algo = cfg.algo
    dtype = np.dtype(algo.dtype)
    n = dataset.header.num_agents
    rng = np.random.default_rng([seed, 6])
    policies = [lk.init_mlp([dataset.header.obs_dim, *algo.hidden, 2 * ACTION_DIM], rng, dtype=dtype)
                for _ in range(n)]
    opts = [lk.adam_state(p, algo.lr) for p in policies]
    u_all = np.arctanh(np.clip(dataset.act, -ACTION_CLIP, ACTION_CLIP))
    history = []
    epochs = algo.epochs if steps is None else 1
    per_epoch = algo.updates_per_epoch if steps is None else steps
    for epoch in range(epochs):
        losses = [[] for _ in range(n)]
        for j in range(n):
            for _ in range(per_epoch):
                idx = rng.integers(0, len(dataset), size=algo.batch_size)
                loss, g = lk.gaussian_nll(policies[j], dataset.obs[idx, j].astype(dtype),
                                          u_all[idx, j].astype(dtype))
                lk.optimizer_step(policies[j], g, opts[j])
                losses[j].append(loss)
        m = evaluate_policies(cfg, policies, seed, epoch) if evaluate else EpochMetrics(epoch=epoch)
        m.policy_loss = [float(np.mean(x)) for x in losses]
        history.append(m)
        if progress:
            progress(f"bc epoch {epoch}: nll {np.mean(m.policy_loss):.3f} reward {m.cumulative_reward:.2f}")
    return policies, history
