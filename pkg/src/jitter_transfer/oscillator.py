"""Wiener-phase ring oscillator model.

An oscillator produces ``w(phi + f t + xi_t)`` where ``w`` is a 1-periodic
square wave with duty cycle ``alpha`` and ``xi`` is a Wiener process of
volatility ``sigma`` (units s^-1/2).  Phases are kept unwrapped here; wrapping
modulo 1 happens only when a bit is read out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import InverseGaussianParams, PointMass
from .errors import DomainError

__all__ = [
    "OscillatorParams",
    "AccumulatedVolatility",
    "edge_time_law",
    "clock_cycle_law",
    "sampled_phase_moments",
    "jitter_ratio",
    "jitter_level",
    "accumulate",
    "de_accumulate",
    "wrap_phase",
]


@dataclass(frozen=True)
class OscillatorParams:
    """One free-running oscillator.

    Attributes
    ----------
    frequency : float
        Mean frequency in Hz.
    volatility : float
        Phase-noise volatility ``sigma`` in s^-1/2.  Zero means jitter free.
    initial_phase : float
        Phase at t = 0, in [0, 1).
    duty_cycle : float
        Fraction of each period during which the square wave reads 1.
    """

    frequency: float
    volatility: float = 0.0
    initial_phase: float = 0.0
    duty_cycle: float = 0.5

    def __post_init__(self):
        if not (self.frequency > 0 and math.isfinite(self.frequency)):
            raise ValueError(f"frequency must be positive, got {self.frequency!r}")
        if not (self.volatility >= 0 and math.isfinite(self.volatility)):
            raise ValueError(f"volatility must be non-negative, got {self.volatility!r}")
        if not 0 <= self.initial_phase < 1:
            raise ValueError(f"initial_phase must lie in [0, 1), got {self.initial_phase!r}")
        if not 0 < self.duty_cycle < 1:
            raise ValueError(f"duty_cycle must lie in (0, 1), got {self.duty_cycle!r}")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    @classmethod
    def from_period(cls, period: float, accumulated: float, reference_period: float | None = None,
                    **kwargs) -> OscillatorParams:
        """Build from a period and an accumulated volatility ``sqrt(T_ref sigma^2)``.

        ``reference_period`` defaults to the oscillator's own period.
        """
        ref = period if reference_period is None else reference_period
        sigma_sq = de_accumulate(AccumulatedVolatility(accumulated, ref))
        return cls(frequency=1.0 / period, volatility=math.sqrt(sigma_sq), **kwargs)

    def accumulated(self, reference_period: float) -> AccumulatedVolatility:
        return accumulate(self.volatility**2, reference_period)


@dataclass(frozen=True)
class AccumulatedVolatility:
    """Dimensionless jitter ``sqrt(T_ref sigma^2)`` accumulated over ``reference_period`` seconds."""

    value: float
    reference_period: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"accumulated volatility must be non-negative, got {self.value!r}")
        if not self.reference_period > 0:
            raise DomainError(f"reference_period must be positive, got {self.reference_period!r}")

    @property
    def squared(self) -> float:
        return self.value**2


def accumulate(sigma_sq: float, reference_period: float) -> AccumulatedVolatility:
    if not reference_period > 0:
        raise DomainError(f"reference_period must be positive, got {reference_period!r}")
    if sigma_sq < 0:
        raise DomainError(f"sigma_sq must be non-negative, got {sigma_sq!r}")
    return AccumulatedVolatility(math.sqrt(reference_period * sigma_sq), reference_period)


def de_accumulate(acc: AccumulatedVolatility) -> float:
    """Volatility squared (s^-1) from its accumulated form."""
    return acc.value**2 / acc.reference_period


def edge_time_law(osc: OscillatorParams, k: int) -> InverseGaussianParams | PointMass:
    """Law of ``T_k``, the time of the k-th rising edge.

    ``T_k`` is the first time ``f t + xi_t`` reaches ``k - phi``, so
    ``T_k ~ IG((k - phi)/f, (k - phi)^2 / sigma^2)``.  A jitter-free oscillator
    returns a :class:`PointMass` at ``(k - phi)/f``.
    """
    if k < 1 or int(k) != k:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    dist = k - osc.initial_phase
    if osc.volatility == 0:
        return PointMass(dist / osc.frequency)
    return InverseGaussianParams(dist / osc.frequency, dist**2 / osc.volatility**2)


def clock_cycle_law(osc: OscillatorParams) -> InverseGaussianParams | PointMass:
    """Law of one clock period ``T_{k+1} - T_k``: IG(1/f, 1/sigma^2), independent of k."""
    if osc.volatility == 0:
        return PointMass(osc.period)
    return InverseGaussianParams(osc.period, 1.0 / osc.volatility**2)


def sampled_phase_moments(sampler: OscillatorParams, sampled: OscillatorParams, k: int):
    """Mean and variance of the sampled oscillator's unwrapped phase at the k-th sampling edge."""
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    f0, f1 = sampler.frequency, sampled.frequency
    n = k - sampler.initial_phase
    mean = sampled.initial_phase + n * f1 / f0
    var = (f1 * f1 / f0**3) * n * sampler.volatility**2 + n * sampled.volatility**2 / f0
    return mean, var


def jitter_ratio(cycle_mean: float, cycle_variance: float) -> float:
    """``Var[T] / E[T]^2`` of a clock cycle, which equals ``sigma^2 / f``."""
    if not cycle_mean > 0:
        raise DomainError(f"cycle_mean must be positive, got {cycle_mean!r}")
    if cycle_variance < 0:
        raise DomainError(f"cycle_variance must be non-negative, got {cycle_variance!r}")
    return cycle_variance / cycle_mean**2


def jitter_level(osc: OscillatorParams) -> float:
    """Relative period jitter ``sigma[T]/T = sqrt(sigma^2 / f)``."""
    return math.sqrt(osc.volatility**2 / osc.frequency)


def wrap_phase(phase):
    """Reduce unwrapped phases modulo 1.

    Values within a few ulps below an integer are snapped to 0, so that
    jitter-free phases like ``5 * 1.4`` land on the edge they belong to
    instead of just below it.
    """
    phase = np.asarray(phase, dtype=float)
    nearest = np.rint(phase)
    snap = np.abs(phase - nearest) <= 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(phase))
    out = np.where(snap, 0.0, phase - np.floor(phase))
    return out if out.ndim else float(out)
