"""Empirical propeller model and per-step energy accounting.

Thrust is a quadratic in propulsion power and propeller efficiency a cubic
in speed. Combining ``eta = F_T v / P`` with both fits gives the power needed
to cruise at a given speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

V_MAX = 2.0

_A, _B, _C = -0.0021, 0.6342, 2.8372


@dataclass(frozen=True)
class EnergyConfig:
    hover_power_w: float = 5.0
    dt: float = 1.0
    v_max: float = V_MAX

    def __post_init__(self):
        if self.hover_power_w < 0:
            raise ValueError("hover_power_w must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def thrust_from_power(p: float) -> float:
    if p < 0:
        raise ValueError(f"power must be nonnegative, got {p}")
    return _A * p * p + _B * p + _C


def efficiency_from_speed(v: float, v_max: float = V_MAX) -> float:
    if not 0.0 <= v <= v_max:
        raise ValueError(f"speed {v} outside [0, {v_max}]")
    return -0.081 * v**3 + 0.215 * v**2 - 0.01 * v + 0.541


def power_from_speed(v: float, v_max: float = V_MAX) -> float:
    """Propulsion power in watts for cruise speed ``v`` in (0, v_max].

    Solves ``a P^2 + (b - eta/v) P + c = 0`` for its positive root. The
    product of the roots is ``c/a < 0`` so exactly one root is positive.
    """
    if not 0.0 < v <= v_max:
        raise ValueError(f"speed {v} outside (0, {v_max}]")
    b = _B - efficiency_from_speed(v, v_max) / v
    disc = b * b - 4.0 * _A * _C
    # numerically stable pair: q = -(b + sign(b) sqrt(disc)) / 2
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = (q / _A, _C / q)
    p = max(roots)
    if not p > 0:
        raise RuntimeError(f"no positive power root at v={v}")
    return p


def step_energy(v: float, hovering: bool, cfg: EnergyConfig) -> float:
    """Energy in joules spent over one step of length ``cfg.dt``."""
    if not 0.0 <= v <= cfg.v_max + 1e-12:
        raise ValueError(f"speed {v} outside [0, {cfg.v_max}]")
    if hovering or v == 0.0:
        return cfg.hover_power_w * cfg.dt
    return power_from_speed(min(v, cfg.v_max), cfg.v_max) * cfg.dt
