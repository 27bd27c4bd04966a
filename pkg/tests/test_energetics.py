import pytest
from hypothesis import given
from hypothesis import strategies as st

from iout_marl import energetics as en
from oracles import OracleReport, power_residual, quadratic_root_oracle


def test_efficiency_at_top_speed():
    assert en.efficiency_from_speed(2.0) == pytest.approx(0.733, abs=1e-12)


def test_power_at_top_speed_matches_root_oracle():
    rep = OracleReport("P(2)", quadratic_root_oracle(2.0), en.power_from_speed(2.0), 0.05)
    assert rep.passed, rep
    assert en.power_from_speed(2.0) == pytest.approx(137.315, abs=0.01)


@given(st.floats(1e-3, 2.0))
def test_power_root_matches_oracle_and_satisfies_identity(v):
    p = en.power_from_speed(v)
    assert p > 0
    assert p == pytest.approx(quadratic_root_oracle(v), rel=1e-10)
    assert abs(power_residual(p, v)) <= 1e-9 * max(1.0, p)


def test_negative_root_rejected_across_range():
    for k in range(1, 201):
        v = 2.0 * k / 200
        assert en.power_from_speed(v) > 0


def test_thrust_fit_and_domain():
    assert en.thrust_from_power(0.0) == pytest.approx(2.8372)
    with pytest.raises(ValueError):
        en.thrust_from_power(-1.0)
    with pytest.raises(ValueError):
        en.efficiency_from_speed(2.5)
    with pytest.raises(ValueError):
        en.power_from_speed(0.0)


def test_step_energy_hover_and_cruise():
    cfg = en.EnergyConfig()
    assert en.step_energy(0.0, False, cfg) == cfg.hover_power_w * cfg.dt
    assert en.step_energy(1.5, True, cfg) == cfg.hover_power_w * cfg.dt
    assert en.step_energy(2.0, False, cfg) == pytest.approx(en.power_from_speed(2.0))
    half = en.EnergyConfig(dt=0.5)
    assert en.step_energy(1.0, False, half) == pytest.approx(0.5 * en.power_from_speed(1.0))
    with pytest.raises(ValueError):
        en.step_energy(-0.1, False, cfg)
