import math

import numpy as np
import pytest

from iout_marl import acoustics
from iout_marl.config import TrainConfig
from iout_marl.mdp_io import (
    ACTION_DIM,
    MdpConfig,
    build_observation,
    decode_action,
    gate,
    make_obs_spec,
    obs_dim,
    observe_all,
)
from iout_marl.ocean_env import make_world


def _setup(**mdp):
    cfg = TrainConfig().replace(mdp=mdp) if mdp else TrainConfig()
    spec = make_obs_spec(cfg.env, cfg.mdp, cfg.acoustics)
    world = make_world(cfg.env, cfg.acoustics, 5)
    return cfg, spec, world


def test_dimension_formula():
    assert obs_dim(2, 5) == 6 + 35 + 6 + 5
    cfg, spec, world = _setup()
    obs = observe_all(world, spec)
    assert obs.shape == (2, spec.dim)
    assert np.all(np.isfinite(obs))


def test_comm_range_is_detection_range_capped_by_diagonal():
    cfg, spec, _ = _setup()
    d = acoustics.detection_range(cfg.acoustics)
    assert spec.comm_range == pytest.approx(min(d, math.sqrt(2) * 120))


def test_target_occupies_first_slot_in_body_frame():
    cfg, spec, world = _setup()
    auv = world.auvs[0]
    auv.target_node = int(np.flatnonzero(world.nodes.needs)[3])
    o = build_observation(world, 0, spec)
    rel = world.nodes.position[auv.target_node] - auv.position
    ch, sh = math.cos(auv.heading), math.sin(auv.heading)
    assert o[6] == pytest.approx((ch * rel[0] + sh * rel[1]) / 120)
    assert o[7] == pytest.approx((-sh * rel[0] + ch * rel[1]) / 120)
    assert o[6 + 5] == 1.0


def test_gate_modes():
    for mode, expect in (("shared", 1.0), ("independent", 0.0)):
        _, spec, world = _setup(gate_mode=mode)
        assert gate(world, 0, 1, spec) == expect
    _, spec, world = _setup(comm_range_auv=0.001)
    world.auvs[1].position = world.auvs[0].position + 10.0
    assert gate(world, 0, 1, spec) == 0.0
    peer = 6 + 7 * spec.node_slots
    assert np.all(build_observation(world, 0, spec)[peer:peer + 6] == 0.0)


def test_unused_slots_are_zero():
    cfg, spec, world = _setup()
    world.nodes.needs[:] = False
    o = build_observation(world, 0, spec)
    assert np.all(o[6:6 + 7 * spec.node_slots] == 0.0)


def test_calm_water_vortex_block_is_zero():
    cfg = TrainConfig().replace(env={"turbulence": False})
    spec = make_obs_spec(cfg.env, cfg.mdp, cfg.acoustics)
    world = make_world(cfg.env, cfg.acoustics, 5)
    assert np.all(build_observation(world, 0, spec)[-5:] == 0.0)


def test_decode_action_bounds_and_target():
    cfg, spec, world = _setup()
    act = decode_action(np.array([50.0, -50.0]), world, 0, cfg.env)
    assert act.accel == pytest.approx(cfg.env.a_max) and act.ang_vel == pytest.approx(-cfg.env.w_max)
    assert act.target is not None and world.nodes.occupied_by[act.target] == 0
    same = decode_action(np.zeros(ACTION_DIM), world, 0, cfg.env)
    assert same.target == act.target and same.accel == 0.0


@pytest.mark.parametrize("raw", [np.array([np.nan, 0.0]), np.array([1.0, 2.0, 3.0]), np.array([np.inf, 0])])
def test_decode_action_rejects_malformed(raw):
    cfg, spec, world = _setup()
    act = decode_action(raw, world, 0, cfg.env)
    assert act.invalid and act.accel == 0.0 and act.ang_vel == 0.0


def test_decode_reselects_after_drain():
    cfg, spec, world = _setup()
    first = decode_action(np.zeros(2), world, 0, cfg.env).target
    world.nodes.needs[first] = False
    second = decode_action(np.zeros(2), world, 0, cfg.env).target
    assert second != first and world.nodes.occupied_by[first] == -1


def test_mdp_validation():
    with pytest.raises(ValueError):
        MdpConfig(gate_mode="broadcast")
