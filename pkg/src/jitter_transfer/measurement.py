"""Differential jitter measurement emulated from EO-TRNG output bits.

Given the bits of oscillator ``i`` sampling oscillator ``j``, recover the
frequency ratio ``f_j/f_i`` and the composite jitter accumulated over one
sampler period, ``sigma'_ij(T_i) = sqrt(T_i sigma'^2)``.

The bit estimator is a pairwise (composite) maximum likelihood.  Between
sampling edges ``k`` and ``k+m`` the sampled phase moves by
``D ~ N(m r, m s^2)`` with ``s = sigma'(T_i)``, and with the phase at ``k``
equidistributed on the circle,

    P(b_k = 1, b_{k+m} = 1) = E[g(D)],   g(x) = |[0, a) ∩ ([0, a) + x) mod 1|

``g`` is piecewise linear, so ``E[g(D)]`` is a finite sum of truncated normal
moments over the wrapping terms within 6 standard deviations.  Lags whose
mean offset ``m r mod 1`` sits far from a kink of ``g`` carry no information
about ``s``; after a pilot fit only the first lags close to a kink are kept.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import EstimationFailedError
from .oscillator import AccumulatedVolatility
from .simulator import BitStream

__all__ = [
    "METHODS",
    "MeasurementRecord",
    "estimate_ratio",
    "resolve_ratio",
    "estimate_total_jitter",
    "estimate_from_phases",
    "lag_counts",
    "pair_probability_11",
    "composite_neg_loglik",
    "measure_stream",
    "CSV_HEADER",
    "write_records_csv",
    "read_records_csv",
]

# "expected" marks noise-free records computed from known parameters
METHODS = ("bit_mle", "phase_oracle", "expected")
CSV_HEADER = ("i", "j", "ratio", "sigma_prime", "T_ref", "n_bits", "method")

SIGMA_BOUNDS = (1e-6, 1.0)
PILOT_LAGS = 400
MAX_LAGS = 2000
N_INFORMATIVE = 20
KINK_WINDOW = 3.0  # in standard deviations of the lag-m phase offset
WRAP_SDS = 6.0
PEAK_TO_MEAN = 50.0
DEMOD_BLOCK = 64


@dataclass
class MeasurementRecord:
    """One differential measurement of the pair (sampler ``i``, sampled ``j``)."""

    pair: tuple
    ratio_estimate: float
    accumulated_sigma_prime: AccumulatedVolatility
    n_bits_used: int
    method: str
    std_error: Optional[float] = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.pair = tuple(int(v) for v in self.pair)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.ratio_estimate > 0:
            raise ValueError(f"ratio_estimate must be positive, got {self.ratio_estimate!r}")

    @property
    def sigma_prime(self) -> float:
        return self.accumulated_sigma_prime.value

    @property
    def reference_period(self) -> float:
        return self.accumulated_sigma_prime.reference_period

    def confidence_interval(self, z: float = 1.96):
        if self.std_error is None:
            return None
        return max(self.sigma_prime - z * self.std_error, 0.0), self.sigma_prime + z * self.std_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair"] = list(self.pair)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MeasurementRecord:
        acc = d["accumulated_sigma_prime"]
        return cls(pair=tuple(d["pair"]), ratio_estimate=float(d["ratio_estimate"]),
                   accumulated_sigma_prime=AccumulatedVolatility(float(acc["value"]),
                                                                 float(acc["reference_period"])),
                   n_bits_used=int(d["n_bits_used"]), method=d["method"],
                   std_error=d.get("std_error"), flags=list(d.get("flags", [])))

    @classmethod
    def from_csv_row(cls, row: dict) -> MeasurementRecord:
        """Inverse of :meth:`csv_row` given a ``csv.DictReader`` row."""
        return cls(pair=(int(row["i"]), int(row["j"])), ratio_estimate=float(row["ratio"]),
                   accumulated_sigma_prime=AccumulatedVolatility(float(row["sigma_prime"]), float(row["T_ref"])),
                   n_bits_used=int(row["n_bits"]), method=row["method"])

    def csv_row(self) -> list:
        i, j = self.pair
        return [i, j, repr(self.ratio_estimate), repr(self.sigma_prime), repr(self.reference_period),
                self.n_bits_used, self.method]


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        w.writerows(r.csv_row() for r in records)


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"records CSV lacks columns {sorted(missing)}")
        return [MeasurementRecord.from_csv_row(row) for row in reader]


def _bits_of(stream):
    if isinstance(stream, BitStream):
        return stream.bits
    return np.asarray(stream, dtype=np.uint8)


# -- frequency ratio -------------------------------------------------------

def _refine_by_demodulation(x, f, block):
    """Correct ``f`` by the slope of the unwrapped phase of the demodulated stream."""
    n = (len(x) // block) * block
    if n < 8 * block:
        return f
    k = np.arange(n)
    z = (x[:n] * np.exp(-2j * np.pi * f * k)).reshape(-1, block).mean(axis=1)
    ang = np.unwrap(np.angle(z))
    t = (np.arange(len(z)) + 0.5) * block
    slope = np.polyfit(t, ang, 1)[0]
    return f + slope / (2 * np.pi)


def estimate_ratio(stream, delay_elements: Optional[Sequence[int]] = None) -> float:
    """Frequency ratio ``f_j / f_i`` from the dominant periodicity of the bits.

    The bits only determine the ratio modulo 1 and up to the mirror
    ``r -> 1 - r`` (the mirrored pattern is the same stream with the phase
    shifted by the duty cycle), so without extra knowledge the result is
    folded into ``[0, 0.5]``.  ``delay_elements = (n_i, n_j)``, the ring
    lengths of sampler and sampled oscillator, gives the nominal ratio
    ``n_i / n_j`` that selects the actual value.

    Raises
    ------
    EstimationFailedError
        When the stream is constant or shows no spectral line.
    """
    b = _bits_of(stream).astype(float)
    n = len(b)
    if n < 16:
        raise EstimationFailedError("too few bits to estimate a frequency ratio", {"n_bits": n})
    x = b - b.mean()
    var = float(np.dot(x, x)) / n
    if var == 0:
        raise EstimationFailedError("constant bit stream has no periodicity", {"n_bits": n})
    size = 1 << int(math.ceil(math.log2(4 * n)))
    power = np.abs(np.fft.rfft(x, size)) ** 2
    power[0] = 0.0
    peak = int(np.argmax(power))
    # mean periodogram level equals n * var by Parseval
    contrast = power[peak] / (n * var)
    if contrast < PEAK_TO_MEAN:
        raise EstimationFailedError("no significant periodicity in bit stream",
                                    {"peak_to_mean": contrast, "n_bits": n})
    f_peak = peak / size
    frac = _refine_by_demodulation(x, f_peak, DEMOD_BLOCK)
    if abs(frac - f_peak) > 0.25 / DEMOD_BLOCK:
        # beyond this the block phase steps alias and the unwrap cannot be trusted
        frac = f_peak
    frac = min(frac, 1.0 - frac)
    if delay_elements is None:
        return frac
    ni, nj = delay_elements
    if ni <= 0 or nj <= 0:
        raise ValueError("delay element counts must be positive")
    return resolve_ratio(frac, ni / nj)


def resolve_ratio(fractional: float, nominal: float) -> float:
    """Pick the ratio congruent to ``±fractional`` (mod 1) closest to ``nominal``."""
    base = math.floor(nominal)
    cands = [b + f for b in (base - 1, base, base + 1) for f in (fractional, 1.0 - fractional)]
    cands = [c for c in cands if c > 0]
    return min(cands, key=lambda c: abs(c - nominal))


# -- composite likelihood --------------------------------------------------

def lag_counts(bits, max_lag: int):
    """2x2 contingency counts of ``(b_k, b_{k+m})`` for ``m = 1..max_lag``.

    Returns ``(m, n11, n10, n01, n00)`` as integer arrays.
    """
    b = np.asarray(bits, dtype=np.int64)
    n = len(b)
    max_lag = min(max_lag, n - 1)
    if max_lag < 1:
        raise ValueError("need at least two bits")
    size = 1 << int(math.ceil(math.log2(2 * n)))
    fb = np.fft.rfft(b.astype(float), size)
    ac = np.fft.irfft(fb * np.conj(fb), size)[1:max_lag + 1]
    n11 = np.rint(ac).astype(np.int64)
    cs = np.concatenate(([0], np.cumsum(b)))
    m = np.arange(1, max_lag + 1)
    ones_first = cs[n - m]
    ones_second = cs[n] - cs[m]
    n10 = ones_first - n11
    n01 = ones_second - n11
    n00 = (n - m) - n11 - n10 - n01
    return m, n11, n10, n01, n00


def _linear_normal_integral(a, b, c0, c1, mean, sd):
    """``int_a^b (c0 + c1 x) N(x; mean, sd^2) dx``."""
    za, zb = (a - mean) / sd, (b - mean) / sd
    mass = special.ndtr(zb) - special.ndtr(za)
    dens = (np.exp(-0.5 * zb * zb) - np.exp(-0.5 * za * za)) / math.sqrt(2 * math.pi)
    return c0 * mass + c1 * (mean * mass - sd * dens)


def pair_probability_11(mean, var, duty: float):
    """``E[g(D)]`` for ``D ~ N(mean, var)`` and the circular overlap ``g`` of two duty windows."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.asarray(var, dtype=float))
    shift = np.floor(mean)
    mu = mean - shift
    reach = int(math.ceil(WRAP_SDS * float(np.max(sd)))) + 1
    a = duty
    out = np.zeros(np.broadcast(mu, sd).shape)
    for j in range(-reach, reach + 1):
        # on [j, j+1): g(x) = max(0, a - (x - j)) + max(0, (x - j) + a - 1)
        out += _linear_normal_integral(j, j + a, a + j, -1.0, mu, sd)
        out += _linear_normal_integral(j + 1 - a, j + 1.0, a - 1 - j, 1.0, mu, sd)
    return out


def composite_neg_loglik(log_sigma: float, ratio: float, duty: float, counts) -> float:
    m, n11, n10, n01, n00 = counts
    s2 = math.exp(2.0 * log_sigma)
    p11 = pair_probability_11(m * ratio, m * s2, duty)
    tiny = 1e-300
    p10 = np.maximum(duty - p11, tiny)
    p00 = np.maximum(1.0 - 2.0 * duty + p11, tiny)
    p11 = np.maximum(p11, tiny)
    return -float(n11 @ np.log(p11) + (n10 + n01) @ np.log(p10) + n00 @ np.log(p00))


def _kink_distance(m, ratio, duty):
    x = np.mod(m * ratio, 1.0)
    kinks = np.array([0.0, duty, 1.0 - duty, 1.0])
    return np.min(np.abs(x[:, None] - kinks[None, :]), axis=1)


def _select(counts, idx):
    return tuple(c[idx] for c in counts)


def _maximize(counts, ratio, duty):
    lo, hi = (math.log(v) for v in SIGMA_BOUNDS)
    edges = np.linspace(lo, hi, 4)
    best = None
    for a, b in zip(edges[:-1], edges[1:]):
        res = optimize.minimize_scalar(composite_neg_loglik, bounds=(a, b), method="bounded",
                                       args=(ratio, duty, counts), options={"xatol": 1e-7})
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise EstimationFailedError("composite likelihood is not finite anywhere in the search range",
                                    {"ratio": ratio, "duty": duty})
    return math.exp(best.x), best


def _fit_sigma(bits, ratio, duty):
    counts = lag_counts(bits, MAX_LAGS)
    m = counts[0]
    pilot, _ = _maximize(_select(counts, m <= PILOT_LAGS), ratio, duty)
    near = np.nonzero(_kink_distance(m, ratio, duty) < KINK_WINDOW * pilot * np.sqrt(m))[0]
    if len(near) == 0:
        return pilot, len(m)
    est, _ = _maximize(_select(counts, near[:N_INFORMATIVE]), ratio, duty)
    return est, int(min(len(near), N_INFORMATIVE))


def estimate_total_jitter(stream, ratio: float, duty: Optional[float] = None, *,
                          reference_period: Optional[float] = None, n_blocks: int = 10,
                          pair=None) -> MeasurementRecord:
    """Composite maximum-likelihood estimate of ``sigma'(T_i)`` from bits.

    Parameters
    ----------
    stream : BitStream or array of 0/1
    ratio : float
        ``f_j / f_i``; only its value modulo 1 (up to sign) matters.
    duty : float, optional
        Duty cycle of the sampled oscillator; taken from the stream if omitted.
    reference_period : float, optional
        Sampler period ``T_i`` recorded with the estimate; taken from the stream
        if omitted, else 1.
    n_blocks : int
        The stream is also cut into this many contiguous blocks, each fitted on
        its own; the spread gives a batch-means standard error.  0 disables it.

    Raises
    ------
    EstimationFailedError
        If the likelihood cannot be maximized.
    """
    bits = _bits_of(stream)
    if isinstance(stream, BitStream):
        duty = stream.sampled.duty_cycle if duty is None else duty
        reference_period = stream.sampler.period if reference_period is None else reference_period
        pair = stream.pair if pair is None else pair
    if duty is None:
        raise ValueError("duty cycle required for a bare bit array")
    if not 0 < duty < 1:
        raise ValueError(f"duty must lie in (0, 1), got {duty!r}")
    if not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio!r}")
    n = len(bits)
    if n < 2:
        raise EstimationFailedError("need at least two bits", {"n_bits": n})
    if bits.min() == bits.max():
        raise EstimationFailedError("constant bit stream carries no jitter information", {"n_bits": n})

    est, used_lags = _fit_sigma(bits, ratio, duty)
    flags = []
    lo, hi = SIGMA_BOUNDS
    at_bound = est <= lo * 1.001 or est >= hi * 0.999
    if at_bound:
        flags.append("at_search_boundary")

    std_error = None
    block = n // n_blocks if n_blocks else 0
    if n_blocks >= 2 and block >= 2 * MAX_LAGS:
        ests = []
        for b in range(n_blocks):
            chunk = bits[b * block:(b + 1) * block]
            if chunk.min() == chunk.max():
                continue
            ests.append(_fit_sigma(chunk, ratio, duty)[0])
        if len(ests) >= 2:
            # blocks are 1/B as long, so their spread is sqrt(B) times the full-stream error
            std_error = float(np.std(ests, ddof=1) / math.sqrt(len(ests)))
    if at_bound or std_error is None or std_error > 0.25 * est:
        flags.append("wide_confidence_interval")

    return MeasurementRecord(pair=tuple(pair or (0, 1)), ratio_estimate=float(ratio),
                             accumulated_sigma_prime=AccumulatedVolatility(est, reference_period or 1.0),
                             n_bits_used=n, method="bit_mle", std_error=std_error, flags=flags)


def estimate_from_phases(stream, *, reference_period: Optional[float] = None, pair=None) -> MeasurementRecord:
    """Oracle estimate from recorded unwrapped phases.

    Ratio is the sample mean and ``sigma'(T_i)^2`` the sample variance
    (``ddof=1``) of the per-edge phase increments.
    """
    if isinstance(stream, BitStream):
        phases = stream.ground_truth_phases
        reference_period = stream.sampler.period if reference_period is None else reference_period
        pair = stream.pair if pair is None else pair
    else:
        phases = stream
    if phases is None:
        raise ValueError("stream was simulated without ground-truth phases")
    inc = np.diff(np.asarray(phases, dtype=float))
    if len(inc) < 2:
        raise EstimationFailedError("need at least three phases", {"n_phases": len(inc) + 1})
    mean = float(np.mean(inc))
    var = float(np.var(inc, ddof=1))
    # delta method on the sample variance: Var[s^2] ~ (m4 - s^4) / n
    m4 = float(np.mean((inc - mean) ** 4))
    se = None
    if var > 0:
        se = math.sqrt(max(m4 - var * var, 0.0) / len(inc)) / (2.0 * math.sqrt(var))
    return MeasurementRecord(pair=tuple(pair or (0, 1)), ratio_estimate=mean,
                             accumulated_sigma_prime=AccumulatedVolatility(math.sqrt(var),
                                                                           reference_period or 1.0),
                             n_bits_used=len(inc) + 1, method="phase_oracle", std_error=se)


def measure_stream(stream: BitStream, method: str = "bit_mle", *, ratio: Optional[float] = None,
                   nominal_ratio: Optional[float] = None, n_blocks: int = 10) -> MeasurementRecord:
    """Run the full measurement on one stream.

    For ``bit_mle`` the ratio is estimated from the bits when not given and
    disambiguated with ``nominal_ratio`` (defaults to the configured one).
    """
    if method == "phase_oracle":
        return estimate_from_phases(stream)
    if method != "bit_mle":
        raise ValueError(f"method must be 'bit_mle' or 'phase_oracle', got {method!r}")
    if ratio is None:
        frac = estimate_ratio(stream)
        nominal = stream.sampled.frequency / stream.sampler.frequency if nominal_ratio is None else nominal_ratio
        ratio = resolve_ratio(frac, nominal)
    return estimate_total_jitter(stream, ratio, n_blocks=n_blocks)
