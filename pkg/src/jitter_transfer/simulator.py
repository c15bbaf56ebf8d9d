"""Bit-level simulation of oscillator-based TRNGs.

An elementary TRNG (EO-TRNG) samples oscillator ``j`` with a D flip-flop
clocked by the rising edges of oscillator ``i``.  Each step draws one clock
period of the sampler and advances the sampled phase by a Brownian increment
over that period:

    P      ~ IG(1/f_i, 1/sigma_i^2)            (mode ``exact_ig``)
    P      ~ N(1/f_i, sigma_i / f_i^1.5)        (mode ``normal_approx``)
    phase += N(f_j P, sigma_j^2 P)
    bit    = 1 if (phase mod 1) < duty_j else 0

Seeding: every stream gets its own ``numpy.random.Generator(PCG64(sub_seed))``
with ``sub_seed = splitmix64((master_seed + pair_index) mod 2**64)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import InverseGaussianParams, PointMass, ig_sample
from .oscillator import OscillatorParams, clock_cycle_law, edge_time_law, wrap_phase

__all__ = [
    "MODES",
    "SimulationConfig",
    "BitStream",
    "splitmix64",
    "derive_seed",
    "simulate_pair",
    "simulate_topology",
    "pack_bits",
    "unpack_bits",
    "three_ring_oscillators",
    "THREE_RING_PAIRS",
]

MODES = ("exact_ig", "normal_approx")
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (all arithmetic mod 2**64)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    return splitmix64((master_seed + index) & _MASK64)


def _check_seed(seed: int) -> int:
    if int(seed) != seed or not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


@dataclass(frozen=True)
class SimulationConfig:
    oscillators: tuple
    pairs: tuple
    n_bits: int
    mode: str = "exact_ig"
    seed: int = 0
    record_phases: bool = False

    def __post_init__(self):
        object.__setattr__(self, "oscillators", tuple(self.oscillators))
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))
        n = len(self.oscillators)
        if not self.pairs:
            raise ValueError("at least one (sampler, sampled) pair is required")
        for i, j in self.pairs:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"invalid pair ({i}, {j}) for {n} oscillators")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate pairs in topology")
        if int(self.n_bits) != self.n_bits or self.n_bits < 1:
            raise ValueError(f"n_bits must be a positive integer, got {self.n_bits!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        _check_seed(self.seed)


@dataclass
class BitStream:
    """Output bits of one EO-TRNG plus what is needed to interpret them.

    ``ground_truth_phases[k]`` is the unwrapped sampled phase at the (k+1)-th
    sampling edge; it is only present when recording was requested.
    """

    bits: np.ndarray
    pair: tuple
    sampler: OscillatorParams
    sampled: OscillatorParams
    mode: str
    seed: int
    ground_truth_phases: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.ground_truth_phases is not None and len(self.ground_truth_phases) != len(self.bits):
            raise ValueError("ground_truth_phases must have one entry per bit")

    def __len__(self):
        return len(self.bits)

    @property
    def n_bits(self) -> int:
        return len(self.bits)

    def to_bytes(self) -> bytes:
        return pack_bits(self.bits)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "bit"])
            w.writerows(zip(range(len(self.bits)), self.bits.tolist()))


def pack_bits(bits) -> bytes:
    """Pack 0/1 values eight per byte, first bit in the least significant position."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    if n_bits > 8 * len(arr):
        raise ValueError(f"{len(arr)} bytes cannot hold {n_bits} bits")
    return np.unpackbits(arr, bitorder="little", count=n_bits)


def _draw_periods(law, n, mode, rng):
    if isinstance(law, PointMass):
        return np.full(n, law.value)
    if mode == "exact_ig":
        return ig_sample(law, rng, size=n)
    # normal approximation of the clock period; a negative draw would need a
    # jitter level of order 1, far outside the approximation's validity
    p = law.mean + math.sqrt(law.variance) * rng.standard_normal(n)
    return np.maximum(p, 0.0)


def simulate_pair(sampler: OscillatorParams, sampled: OscillatorParams, n: int,
                  mode: str = "exact_ig", seed: int = 0, *, pair=(0, 1),
                  record_phases: bool = False, rng: Optional[np.random.Generator] = None) -> BitStream:
    """Simulate ``n`` output bits of ``sampler`` sampling ``sampled``.

    Parameters
    ----------
    sampler, sampled : OscillatorParams
    n : int
        Number of output bits (sampling edges).
    mode : {"exact_ig", "normal_approx"}
        Law used for the sampler's clock periods.
    seed : int
        Seeds ``PCG64`` when ``rng`` is not supplied.
    record_phases : bool
        Keep the unwrapped sampled phases for oracle estimators.
    rng : numpy.random.Generator, optional
        Use this stream instead of seeding a new one.

    Returns
    -------
    BitStream
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    seed = _check_seed(seed)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))

    f0, f1 = sampler.frequency, sampled.frequency
    first = edge_time_law(sampler, 1)
    cycle = clock_cycle_law(sampler)
    periods = np.empty(n)
    periods[:1] = _draw_periods(first, 1, mode, rng)
    if n > 1:
        periods[1:] = _draw_periods(cycle, n - 1, mode, rng)

    nominal = np.full(n, sampler.period)
    nominal[0] = first.mean
    # split each increment into its drift f1 * nominal and a zero-mean part so
    # that jitter-free runs accumulate exactly k * f1 / f0
    noise = f1 * (periods - nominal)
    if sampled.volatility > 0:
        noise += sampled.volatility * np.sqrt(periods) * rng.standard_normal(n)
    k = np.arange(1, n + 1, dtype=float)
    ratio = f1 / f0
    phases = sampled.initial_phase + (k * ratio - sampler.initial_phase * ratio) + np.cumsum(noise)
    bits = (wrap_phase(phases) < sampled.duty_cycle).astype(np.uint8)
    return BitStream(bits=bits, pair=tuple(pair), sampler=sampler, sampled=sampled, mode=mode,
                     seed=seed, ground_truth_phases=phases if record_phases else None)


def simulate_topology(cfg: SimulationConfig) -> list:
    """One :class:`BitStream` per configured pair, each on its own derived seed."""
    out = []
    for idx, (i, j) in enumerate(cfg.pairs):
        out.append(simulate_pair(cfg.oscillators[i], cfg.oscillators[j], cfg.n_bits, cfg.mode,
                                 derive_seed(cfg.seed, idx), pair=(i, j),
                                 record_phases=cfg.record_phases))
    return out


def three_ring_oscillators(duty_cycle: float = 0.5) -> list:
    """The three oscillators of the reference simulation (periods in seconds).

    Periods 1, 0.724 and 0.652 ms; accumulated jitter over T0 of 1, 2 and 3e-3.
    """
    t0 = 1e-3
    return [OscillatorParams.from_period(t, acc, reference_period=t0, duty_cycle=duty_cycle)
            for t, acc in ((1e-3, 1.00e-3), (0.724e-3, 2.00e-3), (0.652e-3, 3.00e-3))]


THREE_RING_PAIRS = ((0, 1), (0, 2), (1, 2))
