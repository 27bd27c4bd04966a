"""Underwater acoustic channel: absorption, spreading loss, ambient noise,
active-sonar echo excess and the Shannon capacity of a node link.

Frequencies are in kHz and all logarithms are base 10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class AcousticsDomainError(ValueError):
    """An argument lies outside the physical domain of a formula."""


class NoDetectionError(RuntimeError):
    """The sonar budget is already negative at 1 m, so no range exists."""


@dataclass(frozen=True)
class AcousticConfig:
    center_frequency_khz: float = 20.0
    source_level_db: float = 135.0
    target_strength_db: float = 10.0
    directivity_index_db: float = 10.0
    detection_threshold_db: float = 10.0
    shipping_activity: float = 0.5
    wind_speed_mps: float = 5.0
    bandwidth_hz: float = 10_000.0
    max_capacity_bps: float = 1.0e6

    def __post_init__(self):
        if not self.center_frequency_khz > 0:
            raise AcousticsDomainError("center_frequency_khz must be positive")
        if not 0.0 < self.shipping_activity < 1.0:
            raise AcousticsDomainError("shipping_activity must lie in (0, 1)")
        if self.wind_speed_mps < 0:
            raise AcousticsDomainError("wind_speed_mps must be nonnegative")
        if not self.bandwidth_hz > 0:
            raise AcousticsDomainError("bandwidth_hz must be positive")
        if self.max_capacity_bps < 0:
            raise AcousticsDomainError("max_capacity_bps must be nonnegative")


@dataclass(frozen=True)
class NoiseBreakdown:
    turbulence_db: float
    shipping_db: float
    wind_db: float
    thermal_db: float
    total_db: float


def thorp_absorption(f_khz: float) -> float:
    """Thorp absorption coefficient in dB/km for a frequency in kHz."""
    if not f_khz > 0:
        raise AcousticsDomainError(f"frequency must be positive, got {f_khz}")
    f2 = f_khz * f_khz
    return 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003


def transmission_loss(d_m: float, f_khz: float) -> float:
    """Spherical spreading plus absorption, in dB, over ``d_m`` metres."""
    if not d_m > 0:
        raise AcousticsDomainError(f"distance must be positive, got {d_m}")
    return 20.0 * math.log10(d_m) + d_m * thorp_absorption(f_khz) / 1000.0


def noise_psd(f_khz: float, s: float, w: float) -> NoiseBreakdown:
    """Ambient noise components (dB re 1 uPa^2/Hz) and their power sum.

    ``s`` is the shipping activity factor in (0, 1) and ``w`` the wind
    speed in m/s. The shipping term keeps the printed exponents 26 and 60.
    """
    if not f_khz > 0:
        raise AcousticsDomainError(f"frequency must be positive, got {f_khz}")
    if not 0.0 < s < 1.0:
        raise AcousticsDomainError(f"shipping activity must lie in (0, 1), got {s}")
    if w < 0:
        raise AcousticsDomainError(f"wind speed must be nonnegative, got {w}")
    lf = math.log10(f_khz)
    turbulence = 17.0 - 30.0 * lf
    shipping = 30.0 + 20.0 * s + 26.0 * lf - 60.0 * math.log10(f_khz + 0.03)
    wind = 50.0 + 7.5 * math.sqrt(w) + 20.0 * (lf - 2.0 * math.log10(f_khz + 0.4))
    thermal = -15.0 + 20.0 * lf
    linear = sum(10.0 ** (c / 10.0) for c in (turbulence, shipping, wind, thermal))
    return NoiseBreakdown(turbulence, shipping, wind, thermal, 10.0 * math.log10(linear))


def noise_level(cfg: AcousticConfig) -> float:
    """Band noise level: PSD at the centre frequency spread flat over the band."""
    psd = noise_psd(cfg.center_frequency_khz, cfg.shipping_activity, cfg.wind_speed_mps)
    return psd.total_db + 10.0 * math.log10(cfg.bandwidth_hz)


def sonar_budget(cfg: AcousticConfig) -> float:
    """SL + TS + DI - NL - DT, i.e. echo excess before propagation losses."""
    return (
        cfg.source_level_db
        + cfg.target_strength_db
        + cfg.directivity_index_db
        - noise_level(cfg)
        - cfg.detection_threshold_db
    )


def echo_excess(d_m: float, cfg: AcousticConfig) -> float:
    return sonar_budget(cfg) - 2.0 * transmission_loss(d_m, cfg.center_frequency_khz)


def range_for_budget(budget_db: float, f_khz: float, tol_m: float = 0.01) -> float:
    """Distance at which ``budget_db - 2 TL(d, f)`` crosses zero (bisection)."""
    if budget_db - 2.0 * transmission_loss(1.0, f_khz) <= 0:
        raise NoDetectionError(f"echo excess is nonpositive at 1 m (budget {budget_db} dB)")
    lo, hi = 1.0, 2.0
    while budget_db - 2.0 * transmission_loss(hi, f_khz) > 0:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol_m:
        mid = 0.5 * (lo + hi)
        if budget_db - 2.0 * transmission_loss(mid, f_khz) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def detection_range(cfg: AcousticConfig) -> float:
    return range_for_budget(sonar_budget(cfg), cfg.center_frequency_khz)


def link_snr_db(d_m: float, cfg: AcousticConfig) -> float:
    return cfg.source_level_db - transmission_loss(d_m, cfg.center_frequency_khz) - noise_level(cfg)


def channel_capacity(d_m: float, cfg: AcousticConfig) -> float:
    """Shannon capacity (bits/s) of a one-way link, clamped to [0, max_capacity_bps]."""
    snr = 10.0 ** (link_snr_db(d_m, cfg) / 10.0)
    cap = cfg.bandwidth_hz * math.log2(1.0 + snr)
    return min(max(cap, 0.0), cfg.max_capacity_bps)
