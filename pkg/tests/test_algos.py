import logging
import math

import numpy as np
import pytest

from iout_marl import algos
from iout_marl import learnkit as lk
from iout_marl.config import AlgoConfig
from iout_marl.datasets import LayoutMismatchError
from helpers import random_dataset, tiny_config
from oracles import finite_difference_grad, max_relative_error

FAST = AlgoConfig(lr=3e-3, lr_alpha=0.0, alpha_init=1e-6, tau=0.05, hidden=(16, 16), batch_size=32,
                  num_action_samples=4)


def _chain_batch(rng, b=32):
    """Two states that alternate forever with reward 1."""
    s = rng.integers(0, 2, size=b)
    obs = np.eye(2)[s]
    return algos.Batch(obs, rng.uniform(-0.9, 0.9, size=(b, 2)), np.ones(b), np.eye(2)[1 - s], np.zeros(b))


def test_sac_critic_on_two_state_chain_approaches_geometric_sum():
    cfg = AlgoConfig(**{**FAST.__dict__, "gamma": 0.9})
    rng = np.random.default_rng(0)
    learner = algos.make_learner(2, cfg, rng)
    for _ in range(3000):
        algos.sac_update(learner, _chain_batch(rng), cfg, rng)
    test = _chain_batch(np.random.default_rng(1), 256)
    q = np.minimum(algos._q(learner.q1, test.obs, test.act), algos._q(learner.q2, test.obs, test.act))
    assert np.mean(q) == pytest.approx(10.0, abs=0.5)


def test_zero_discount_critic_fits_reward():
    cfg = AlgoConfig(**{**FAST.__dict__, "gamma": 0.01})
    rng = np.random.default_rng(0)
    learner = algos.make_learner(2, cfg, rng)
    for _ in range(1500):
        b = _chain_batch(rng)
        b.rew = np.where(b.obs[:, 0] == 1, 2.0, -1.0)
        algos.sac_update(learner, b, cfg, rng)
    obs = np.eye(2)
    q = algos._q(learner.q1, obs, np.zeros((2, 2)))
    assert q == pytest.approx([2.0, -1.0], abs=0.1)


def test_alpha_rises_when_target_entropy_exceeds_policy_entropy():
    cfg = AlgoConfig(target_entropy=50.0, hidden=(8,), batch_size=16)
    rng = np.random.default_rng(0)
    learner = algos.make_learner(2, cfg, rng)
    alphas = [learner.alpha]
    for _ in range(50):
        algos.sac_update(learner, _chain_batch(rng, 16), cfg, rng)
        alphas.append(learner.alpha)
    assert all(b > a for a, b in zip(alphas, alphas[1:]))


def test_alpha_stays_positive_under_many_updates():
    learner = algos.make_learner(2, AlgoConfig(hidden=(4,)), np.random.default_rng(0))
    for _ in range(5000):
        learner.log_alpha = learner.alpha_opt.step(learner.log_alpha, 1e3)
    assert learner.alpha > 0


def test_td_target_uses_min_of_target_critics():
    cfg = AlgoConfig(hidden=(8,))
    learner = algos.make_learner(2, cfg, np.random.default_rng(0))
    learner.q2_targ.biases[-1] += 5.0  # q2 target clearly larger
    b = _chain_batch(np.random.default_rng(1), 8)
    y = algos.td_target(learner, b, 0.9, np.random.default_rng(2))
    s = lk.policy_sample(learner.policy, b.next_obs, np.random.default_rng(2))
    q1 = algos._q(learner.q1_targ, b.next_obs, s.action)
    assert np.allclose(y, b.rew + 0.9 * (q1 - learner.alpha * s.log_prob))


def test_empty_batch_is_noop_with_warning(caplog):
    learner = algos.make_learner(2, AlgoConfig(hidden=(4,)), np.random.default_rng(0))
    before = learner.q1.copy()
    empty = algos.Batch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))
    with caplog.at_level(logging.WARNING):
        assert algos.sac_update(learner, empty, AlgoConfig(), np.random.default_rng(0)) == {}
    assert "empty batch" in caplog.text
    assert lk.param_distance(before, learner.q1) == 0.0


def test_penalty_off_reduces_to_td_regression():
    cfg = AlgoConfig(hidden=(8,), num_action_samples=3)
    learner = algos.make_learner(3, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    b = algos.Batch(rng.normal(size=(5, 3)), rng.uniform(-0.9, 0.9, (5, 2)), rng.normal(size=5),
                    rng.normal(size=(5, 3)), np.zeros(5))
    y = rng.normal(size=5)
    total, _, _ = algos.cql_critic_loss(learner, b, cfg, rng, alpha_cql=0.0, target=y)
    x = np.concatenate([b.obs, b.act], axis=1)
    expected = sum(0.5 * np.mean((lk.forward(q, x)[:, 0] - y) ** 2) for q in (learner.q1, learner.q2))
    assert total == pytest.approx(expected, rel=1e-12)


def test_penalty_gradient_ignores_uniform_shift():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4, 6))
    dens = rng.normal(size=(4, 6))
    qd = rng.normal(size=4)
    v0, gs, gd = algos.conservative_penalty(q, dens, qd)
    v1, _, _ = algos.conservative_penalty(q + 3.7, dens, qd + 3.7)
    assert v1 == pytest.approx(v0, abs=1e-12)
    assert gs.sum() + gd.sum() == pytest.approx(0.0, abs=1e-12)


def test_penalty_of_constant_q_is_log_mean_density_ratio():
    q = np.full((2, 4), 1.3)
    v, _, _ = algos.conservative_penalty(q, np.zeros((2, 4)), np.full(2, 1.3))
    assert v == pytest.approx(0.0, abs=1e-12)


def test_full_cql_loss_gradient_matches_finite_differences():
    cfg = AlgoConfig(hidden=(6,), num_action_samples=4, alpha_cql=2.0)
    learner = algos.make_learner(3, cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    b = algos.Batch(rng.normal(size=(3, 3)), rng.uniform(-0.9, 0.9, (3, 2)), rng.normal(size=3),
                    rng.normal(size=(3, 3)), np.zeros(3))
    y = rng.normal(size=3)
    loss = lambda: algos.cql_critic_loss(learner, b, cfg, np.random.default_rng(7), target=y)[0]
    _, grads, _ = algos.cql_critic_loss(learner, b, cfg, np.random.default_rng(7), target=y)
    for net, g in zip((learner.q1, learner.q2), grads):
        fd = finite_difference_grad(loss, net.arrays(), 1e-6)
        assert max(max_relative_error(a, f) for a, f in zip(g.arrays(), fd)) <= 1e-3


def test_policy_gradient_matches_finite_differences():
    cfg = AlgoConfig(hidden=(6,))
    learner = algos.make_learner(3, cfg, np.random.default_rng(0))
    learner.log_alpha = math.log(0.3)
    rng = np.random.default_rng(1)
    b = algos.Batch(rng.normal(size=(4, 3)), np.zeros((4, 2)), np.zeros(4), np.zeros((4, 3)), np.zeros(4))
    guide = rng.uniform(-0.5, 0.5, (4, 2))
    loss = lambda: algos.policy_loss_and_grad(learner, b, np.random.default_rng(3), guide, 0.7)[0]
    _, g = algos.policy_loss_and_grad(learner, b, np.random.default_rng(3), guide, 0.7)
    fd = finite_difference_grad(loss, learner.policy.arrays(), 1e-6)
    assert max(max_relative_error(a, f) for a, f in zip(g.arrays(), fd)) <= 1e-4


def test_maicql_smoke_single_agent_and_checkpoint(tmp_path):
    cfg = tiny_config(1)
    ds = random_dataset(cfg)
    learners, hist = algos.maicql_train(ds, 1, cfg, seed=0)
    assert len(hist) == 2 and all(np.isfinite(m.critic_loss[0]) for m in hist)
    lk.save_checkpoint(tmp_path / "p.ckpt", learners[0].nets())
    nets, _ = lk.load_checkpoint(tmp_path / "p.ckpt")
    assert np.array_equal(nets["policy"].weights[0], learners[0].policy.weights[0])


def test_maicql_agents_train_independently():
    cfg = tiny_config(2)
    ds = random_dataset(cfg)
    learners, _ = algos.maicql_train(ds, 2, cfg, seed=0, evaluate=False)
    assert lk.param_distance(learners[0].q1, learners[1].q1) > 0
    assert lk.param_distance(learners[0].policy, learners[1].policy) > 0


def test_maicql_is_deterministic():
    cfg = tiny_config(1)
    ds = random_dataset(cfg)
    _, h1 = algos.maicql_train(ds, 1, cfg, seed=3, evaluate=False)
    _, h2 = algos.maicql_train(ds, 1, cfg, seed=3, evaluate=False)
    assert [m.critic_loss for m in h1] == [m.critic_loss for m in h2]
    assert [m.policy_loss for m in h1] == [m.policy_loss for m in h2]


def test_maicql_refuses_mismatched_layout():
    cfg = tiny_config(1)
    ds = random_dataset(tiny_config(2))
    with pytest.raises(LayoutMismatchError, match="obs-v1"):
        algos.maicql_train(ds, 1, cfg)


def test_conservative_critic_scores_random_actions_lower():
    cfg = tiny_config(1, epochs=1, updates_per_epoch=300, alpha_cql=1.0, lr=1e-3)
    ds = random_dataset(cfg, length=256)
    ds.act[:] = 0.5  # dataset covers a single action
    runs = {}
    for a in (0.0, 1.0):
        learners, _ = algos.maicql_train(ds, 1, cfg, seed=0, alpha_cql=a, evaluate=False)
        obs = ds.obs[:, 0].astype(np.float64)
        rand = np.random.default_rng(9).uniform(-1, 1, size=(len(obs), 2))
        runs[a] = float(np.mean(algos._q(learners[0].q1, obs, rand)))
    assert runs[1.0] < runs[0.0]


def test_bc_recovers_linear_teacher():
    cfg = tiny_config(1, epochs=1, updates_per_epoch=1, batch_size=128, hidden=(32, 32), lr=3e-3)
    ds = random_dataset(cfg, length=2000)
    w = np.random.default_rng(4).normal(scale=0.3, size=(ds.obs.shape[2], 2))
    ds.act[:, 0] = np.tanh(ds.obs[:, 0] @ w * 0.3)
    train = random_dataset(cfg, length=1500)
    for k in ("obs", "act"):
        setattr(train, k, getattr(ds, k)[:1500])
    train.done = ds.done[:1500]
    policies, hist = algos.bc_train(train, cfg, seed=0, steps=2500)
    held = ds.obs[1500:, 0]
    pred = lk.policy_sample(policies[0], held.astype(np.float64), deterministic=True).action
    assert float(np.mean(np.abs(pred - ds.act[1500:, 0]))) <= 0.05


def test_bc_rejects_empty_dataset():
    cfg = tiny_config(1)
    ds = random_dataset(cfg, length=0)
    with pytest.raises(ValueError):
        algos.bc_train(ds, cfg)


def test_bc_loss_decreases_on_fixed_batch():
    cfg = AlgoConfig(hidden=(16,), lr=1e-3)
    net = lk.init_mlp([5, 16, 4], np.random.default_rng(0))
    opt = lk.adam_state(net, cfg.lr)
    rng = np.random.default_rng(1)
    obs, u = rng.normal(size=(64, 5)), rng.normal(size=(64, 2))
    losses = []
    for _ in range(100):
        loss, g = lk.gaussian_nll(net, obs, u)
        losses.append(loss)
        lk.optimizer_step(net, g, opt)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_cloning_actor_gradient_matches_finite_differences():
    cfg = AlgoConfig(hidden=(6,))
    learner = algos.make_learner(3, cfg, np.random.default_rng(0))
    learner.log_alpha = math.log(0.2)
    rng = np.random.default_rng(1)
    b = algos.Batch(rng.normal(size=(4, 3)), rng.uniform(-0.9, 0.9, (4, 2)), np.zeros(4), np.zeros((4, 3)),
                    np.zeros(4))
    loss = lambda: algos.cloning_policy_loss_and_grad(learner, b, np.random.default_rng(3))[0]
    _, g = algos.cloning_policy_loss_and_grad(learner, b, np.random.default_rng(3))
    fd = finite_difference_grad(loss, learner.policy.arrays(), 1e-6)
    # the dropped tanh Jacobian of the data term is constant in the parameters
    assert max(max_relative_error(a, f) for a, f in zip(g.arrays(), fd)) <= 1e-4


def test_warm_start_switches_actor_objective_after_budget():
    cfg = tiny_config(1, epochs=1, updates_per_epoch=4, bc_warmup_updates=2)
    ds = random_dataset(cfg)
    learners, _ = algos.maicql_train(ds, 1, cfg, seed=0, evaluate=False)
    assert learners[0].updates == 4
