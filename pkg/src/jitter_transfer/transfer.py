"""Jitter transfer between a noisy sampling clock and the sampled oscillator.

Oscillator ``i`` sampling oscillator ``j`` behaves, to first order in
``sigma_i^2 / f_i``, like a jitter-free clock sampling an oscillator of
volatility ``sigma'^2 = (f_j/f_i)^2 sigma_i^2 + sigma_j^2``.  The same law
reads differently depending on whether jitter is expressed as phase-noise
volatility, period jitter (variance of one period, s^2) or time jitter
(s^1/2); every result carries its convention so the three never mix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .oscillator import AccumulatedVolatility, OscillatorParams, accumulate

__all__ = [
    "CONVENTIONS",
    "VALIDITY_THRESHOLD",
    "TransferredJitter",
    "transfer_phase",
    "transfer_period",
    "transfer_time",
    "transfer_accumulated",
    "phase_to_period",
    "period_to_phase",
    "phase_to_time",
    "time_to_phase",
    "phase_variance_increment",
]

CONVENTIONS = ("phase", "period", "time")
# sigma_0^2 / f_0 above which the normal approximation visibly degrades
VALIDITY_THRESHOLD = 0.01


@dataclass(frozen=True)
class TransferredJitter:
    sigma_prime_sq: float
    convention: str
    pair: tuple = (0, 1)
    validity_ratio: float = 0.0

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}, got {self.convention!r}")
        if not self.sigma_prime_sq >= 0:
            raise ValueError(f"sigma_prime_sq must be non-negative, got {self.sigma_prime_sq!r}")

    @property
    def sigma_prime(self) -> float:
        return math.sqrt(self.sigma_prime_sq)

    @property
    def approximation_warning(self) -> bool:
        """True when the sampler's ``sigma^2 / f`` exceeds :data:`VALIDITY_THRESHOLD`."""
        return self.validity_ratio > VALIDITY_THRESHOLD


def _nonneg(**kw):
    for k, v in kw.items():
        if not v >= 0:
            raise ValueError(f"{k} must be non-negative, got {v!r}")


def _pos(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v!r}")


def transfer_phase(f0: float, sigma0: float, f1: float, sigma1: float, pair=(0, 1)) -> TransferredJitter:
    """Composite phase-noise volatility seen when oscillator 0 samples oscillator 1.

    Returns ``sigma'^2 = (f1/f0)^2 sigma0^2 + sigma1^2`` (s^-1), with
    ``validity_ratio = sigma0^2 / f0`` attached.
    """
    _pos(f0=f0, f1=f1)
    _nonneg(sigma0=sigma0, sigma1=sigma1)
    s2 = (f1 / f0) ** 2 * sigma0**2 + sigma1**2
    return TransferredJitter(s2, "phase", tuple(pair), sigma0**2 / f0)


def transfer_period(f0: float, period_jitter0_sq: float, f1: float, period_jitter1_sq: float,
                    pair=(0, 1)) -> TransferredJitter:
    """Composite period jitter ``(f0/f1) pj0 + pj1`` (s^2, per period of oscillator 1)."""
    _pos(f0=f0, f1=f1)
    _nonneg(period_jitter0_sq=period_jitter0_sq, period_jitter1_sq=period_jitter1_sq)
    s2 = (f0 / f1) * period_jitter0_sq + period_jitter1_sq
    # sigma0^2 / f0 = pj0 * f0^2
    return TransferredJitter(s2, "period", tuple(pair), period_jitter0_sq * f0**2)


def transfer_time(sigma0_time: float, sigma1_time: float, pair=(0, 1), f0: float | None = None) -> TransferredJitter:
    """Composite time jitter ``sqrt(s0^2 + s1^2)``; squared value is stored.

    ``f0`` is only needed to fill in the validity ratio.
    """
    _nonneg(sigma0_time=sigma0_time, sigma1_time=sigma1_time)
    ratio = 0.0 if f0 is None else (f0 * sigma0_time) ** 2 / f0
    return TransferredJitter(sigma0_time**2 + sigma1_time**2, "time", tuple(pair), ratio)


def phase_to_period(sigma_sq: float, f: float) -> float:
    return sigma_sq / f**3


def period_to_phase(period_jitter_sq: float, f: float) -> float:
    return period_jitter_sq * f**3


def phase_to_time(sigma: float, f: float) -> float:
    return sigma / f


def time_to_phase(sigma_time: float, f: float) -> float:
    return sigma_time * f


def transfer_accumulated(sampler: OscillatorParams, sampled: OscillatorParams,
                         reference_period: float | None = None, pair=(0, 1)) -> AccumulatedVolatility:
    """``sigma'(T_ref) = sqrt(T_ref sigma'^2)``; ``T_ref`` defaults to the sampler's period."""
    t = transfer_phase(sampler.frequency, sampler.volatility, sampled.frequency, sampled.volatility, pair)
    ref = sampler.period if reference_period is None else reference_period
    return accumulate(t.sigma_prime_sq, ref)


def phase_variance_increment(cycle_variance: float, cycle_mean: float, reference_frequency: float) -> float:
    """Phase variance gained by an oscillator during one cycle of a jitter-free clock.

    With ``Var[T]`` and ``E[T] = 1/f1`` the oscillator's own period statistics,
    ``Q = sigma1^2 / f_ref = (Var[T] / E[T]^2) (f1 / f_ref)``.
    """
    _pos(cycle_mean=cycle_mean, reference_frequency=reference_frequency)
    _nonneg(cycle_variance=cycle_variance)
    return cycle_variance / cycle_mean**2 / (cycle_mean * reference_frequency)
