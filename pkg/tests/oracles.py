"""Brute-force reference implementations used only by the tests.

None of these call into the code they check: each recomputes its quantity
by a different method (linear scan instead of bisection, extended precision
instead of float64, finite differences instead of backprop, an explicit
tabular loss instead of networks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    oracle: float
    artifact: float
    tolerance: float
    relative: bool = False

    @property
    def abs_error(self) -> float:
        return abs(self.oracle - self.artifact)

    @property
    def rel_error(self) -> float:
        return self.abs_error / max(abs(self.oracle), 1e-300)

    @property
    def passed(self) -> bool:
        err = self.rel_error if self.relative else self.abs_error
        return err <= self.tolerance

    def __str__(self):
        return (f"{self.quantity}: oracle={self.oracle:.9g} artifact={self.artifact:.9g} "
                f"abs={self.abs_error:.3g} rel={self.rel_error:.3g} tol={self.tolerance:g} "
                f"{'ok' if self.passed else 'FAIL'}")


# --- propagation -------------------------------------------------------------------


def thorp_db_per_km(f_khz) -> mpmath.mpf:
    """Thorp's formula, evaluated term by term in 50-digit arithmetic."""
    with mpmath.workdps(50):
        f = mpmath.mpf(f_khz)
        f2 = f ** 2
        return (mpmath.mpf("0.11") * f2 / (1 + f2) + 44 * f2 / (4100 + f2)
                + mpmath.mpf("2.75e-4") * f2 + mpmath.mpf("0.003"))


def two_way_loss(d_m, f_khz) -> float:
    with mpmath.workdps(30):
        d = mpmath.mpf(d_m)
        return float(2 * (20 * mpmath.log10(d) + d * thorp_db_per_km(f_khz) / 1000))


def grid_scan_detection_range(budget_db: float, f_khz: float, step: float = 0.05,
                              max_range: float = 1e5) -> float:
    """First grid point where the echo excess turns nonpositive."""
    if step > 0.1:
        raise ValueError("step must be at most 0.1 m")
    d_grid = np.arange(1.0, max_range, step)
    alpha = float(thorp_db_per_km(f_khz))
    excess = budget_db - 2.0 * (20.0 * np.log10(d_grid) + d_grid * alpha / 1000.0)
    below = np.flatnonzero(excess <= 0.0)
    if below.size == 0 or below[0] == 0:
        raise ValueError("no sign change of the echo excess on the grid")
    return float(d_grid[below[0]])


# --- propulsion --------------------------------------------------------------------


def quadratic_root_oracle(v) -> float:
    """Positive power root of the combined thrust/efficiency relation at speed v.

    Both textbook root formulas are evaluated at 40 digits; they must agree.
    """
    if not 0 < v <= 2:
        raise ValueError("speed must lie in (0, 2]")
    with mpmath.workdps(40):
        v = mpmath.mpf(v)
        eta = (mpmath.mpf("-0.081") * v ** 3 + mpmath.mpf("0.215") * v ** 2
               - mpmath.mpf("0.01") * v + mpmath.mpf("0.541"))
        a, c = mpmath.mpf("-0.0021"), mpmath.mpf("2.8372")
        b = mpmath.mpf("0.6342") - eta / v
        disc = mpmath.sqrt(b * b - 4 * a * c)
        standard = [(-b + disc) / (2 * a), (-b - disc) / (2 * a)]
        citardauq = [2 * c / (-b - disc), 2 * c / (-b + disc)]
        for x, y in zip(standard, citardauq):
            assert abs(x - y) <= mpmath.mpf("1e-30") * max(1, abs(x))
        positive = [r for r in standard if r > 0]
        assert len(positive) == 1
        return float(positive[0])


def power_residual(p: float, v: float) -> float:
    """eta(v) * P - thrust(P) * v, zero at a valid operating point."""
    eta = -0.081 * v ** 3 + 0.215 * v ** 2 - 0.01 * v + 0.541
    thrust = -0.0021 * p * p + 0.6342 * p + 2.8372
    return eta * p - thrust * v


# --- gradients ---------------------------------------------------------------------


def finite_difference_grad(loss_fn: Callable[[], float], params: Sequence[np.ndarray],
                           h: float = 1e-6) -> list[np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``params`` (mutated in place, restored)."""
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4]")
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=float)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# --- tabular conservative Q-learning -----------------------------------------------


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with a fixed dataset of (s, a, r, s') tuples and a fixed policy."""

    num_states: int
    num_actions: int
    data: tuple  # ((s, a, r, s_next), ...)
    policy: np.ndarray  # (S, A) probabilities used in the backup
    gamma: float = 0.9


def tabular_cql_oracle(mdp: TabularMdp, alpha_cql: float, steps: int, lr: float,
                       q0: np.ndarray | None = None) -> np.ndarray:
    """Plain gradient descent on the conservative loss with an explicit Q table.

    loss = alpha_cql * mean_i [log(mean_a exp Q(s_i, a)) - Q(s_i, a_i)]
           + 1/2 mean_i (Q(s_i, a_i) - y_i)^2,
    y_i = r_i + gamma * sum_a pi(a|s'_i) Q_frozen(s'_i, a).

    The target uses the table from the previous step and carries no gradient.
    """
    if mdp.num_states > 4 or mdp.num_actions > 3:
        raise ValueError("oracle sized for at most 4 states and 3 actions")
    q = np.zeros((mdp.num_states, mdp.num_actions)) if q0 is None else np.array(q0, float)
    n = len(mdp.data)
    for _ in range(steps):
        grad = np.zeros_like(q)
        frozen = q.copy()
        for s, a, r, s2 in mdp.data:
            y = r + mdp.gamma * float(np.dot(mdp.policy[s2], frozen[s2]))
            grad[s, a] += (q[s, a] - y) / n
            row = q[s]
            weights = [math.exp(x - max(row)) for x in row]
            z = sum(weights)
            for b in range(mdp.num_actions):
                grad[s, b] += alpha_cql * weights[b] / z / n
            grad[s, a] -= alpha_cql / n
        q -= lr * grad
    return q
