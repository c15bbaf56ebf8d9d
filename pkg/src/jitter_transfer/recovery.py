"""Individual oscillator volatilities from pairwise composite measurements.

Every measured pair ``(i, j)`` gives one linear equation in the unknown
volatilities, ``(f_j/f_i)^2 sigma_i^2 + sigma_j^2 = sigma'_ij^2``.  Unknowns
and right-hand sides are kept in accumulated form over the period ``T0`` of
oscillator 0, the quantity an entropy model consumes:

    sigma_i^2(T0) = T0 sigma_i^2
    sigma'_ij^2(T_i) = T_i sigma'_ij^2      (what a measurement reports)

A record for a pair whose sampler is not oscillator 0 is rescaled by
``T0 / T_i = f_i / f0`` on the way in.

With pairs ``(0,1), (0,2), (1,2), (0,3), ..., (0,n)`` the system matrix ``M``
has a closed-form inverse, and with ``L = max f_i / f_j``,
``kappa_inf(M) <= (1 + L^2)(1 + 1.5 L^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .measurement import MeasurementRecord

__all__ = [
    "FrequencyRatios",
    "VolatilitySolution",
    "Method1Estimate",
    "general_pairs",
    "rate_system_matrix",
    "accumulated_system_matrix",
    "explicit_inverse",
    "condition_number_inf",
    "condition_bound",
    "recover_method1",
    "recover_method1_all",
    "recover_method2_3osc",
    "recover_method2_general",
    "forward_measurements",
]

ILL_CONDITIONED = 1e6
# loose enough for measured ratios, tight enough to catch a T_j-for-T_i mixup
_REF_RTOL = 1e-3


@dataclass(frozen=True)
class FrequencyRatios:
    """``f_i / f_0`` for ``i = 0..n``; the first entry is 1 by construction."""

    ratios: tuple
    source: str = "configured"

    def __post_init__(self):
        r = tuple(float(v) for v in self.ratios)
        if len(r) < 2:
            raise ValueError("need at least two oscillators")
        if any(not v > 0 for v in r):
            raise ValueError("frequency ratios must be positive")
        if r[0] != 1.0:
            r = tuple(v / r[0] for v in r)
        if self.source not in ("measured", "configured"):
            raise ValueError(f"source must be 'measured' or 'configured', got {self.source!r}")
        object.__setattr__(self, "ratios", r)

    @classmethod
    def from_frequencies(cls, freqs, source="configured"):
        return cls(tuple(f / freqs[0] for f in freqs), source)

    @classmethod
    def from_periods(cls, periods, source="configured"):
        return cls(tuple(periods[0] / t for t in periods), source)

    @classmethod
    def from_records(cls, records, n: Optional[int] = None):
        """Measured ratios from the ``(0, i)`` records; ``ratio_estimate`` is ``f_i / f_0`` there."""
        by_pair = {r.pair: r for r in records}
        n = n if n is not None else max(j for _, j in by_pair)
        try:
            return cls((1.0,) + tuple(by_pair[(0, i)].ratio_estimate for i in range(1, n + 1)), "measured")
        except KeyError as e:
            raise ValueError(f"missing measurement for pair {e.args[0]}") from None

    def __len__(self):
        return len(self.ratios)

    @property
    def spread(self) -> float:
        """``L = max_ij f_i / f_j``."""
        return max(self.ratios) / min(self.ratios)


@dataclass
class VolatilitySolution:
    sigma_sq_accumulated: tuple
    condition_number_inf: Optional[float]
    condition_bound: Optional[float]
    residual_inf: float
    method: str
    flags: list = field(default_factory=list)

    @property
    def sigma_accumulated(self) -> tuple:
        """``sigma_i(T0)``; NaN where the recovered variance is negative."""
        return tuple(math.sqrt(v) if v >= 0 else float("nan") for v in self.sigma_sq_accumulated)

    def to_dict(self) -> dict:
        return {
            "sigma_sq_T0": list(self.sigma_sq_accumulated),
            "kappa_inf": self.condition_number_inf,
            "kappa_bound": self.condition_bound,
            "residual_inf": self.residual_inf,
            "flags": list(self.flags),
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> VolatilitySolution:
        return cls(tuple(d["sigma_sq_T0"]), d.get("kappa_inf"), d.get("kappa_bound"),
                   d["residual_inf"], d.get("method", "method2_general"), list(d.get("flags", [])))


@dataclass(frozen=True)
class Method1Estimate:
    pair: tuple
    sigma_sq_sampled: float
    sigma_sq_reference: float


def general_pairs(n: int) -> list:
    """Pairs measured for oscillators ``0..n``: (0,1), (0,2), (1,2), (0,3), ..., (0,n)."""
    if n < 2:
        raise ValueError("need at least three oscillators (n >= 2)")
    return [(0, 1), (0, 2), (1, 2)] + [(0, i) for i in range(3, n + 1)]


def _ratios(ratios) -> np.ndarray:
    return np.asarray(ratios.ratios if isinstance(ratios, FrequencyRatios) else ratios, dtype=float)


def rate_system_matrix(ratios) -> np.ndarray:
    """``M`` with row ``(i, j)`` holding ``(f_j/f_i)^2`` in column ``i`` and 1 in column ``j``."""
    f = _ratios(ratios)
    n = len(f) - 1
    m = np.zeros((n + 1, n + 1))
    for row, (i, j) in enumerate(general_pairs(n)):
        m[row, i] = (f[j] / f[i]) ** 2
        m[row, j] = 1.0
    return m


def accumulated_system_matrix(ratios) -> np.ndarray:
    """System acting on ``sigma_i^2(T0)`` with right-hand sides ``sigma'_ij^2(T_i)``.

    Row ``(i, j)`` is ``[T_i^3 / (T_j^2 T0)] sigma_i^2(T0) + [T_i / T0] sigma_j^2(T0)``,
    i.e. the rate matrix with each row scaled by ``T_i / T0``.
    """
    f = _ratios(ratios)
    m = rate_system_matrix(f)
    for row, (i, _) in enumerate(general_pairs(len(f) - 1)):
        m[row] *= 1.0 / f[i]
    return m


def explicit_inverse(ratios) -> np.ndarray:
    """Closed-form ``M^-1`` for the pair set of :func:`general_pairs`.

    The leading 3x3 block inverts the triangle (0,1), (0,2), (1,2); every
    further row is ``sigma_i^2 = sigma'_0i^2 - (f_i/f_0)^2 sigma_0^2`` expanded
    through the first row, which is the block formula
    ``[[A, 0], [C, I]]^-1 = [[A^-1, 0], [-C A^-1, I]]``.
    """
    f = _ratios(ratios)
    n = len(f) - 1
    if n < 2:
        raise ValueError("need at least three oscillators (n >= 2)")
    f0, f1, f2 = (v * v for v in f[:3])
    inv = np.zeros((n + 1, n + 1))
    inv[0, :3] = [f0 / (2 * f1), f0 / (2 * f2), -f0 / (2 * f2)]
    inv[1, :3] = [0.5, -f1 / (2 * f2), f1 / (2 * f2)]
    inv[2, :3] = [-f2 / (2 * f1), 0.5, 0.5]
    for i in range(3, n + 1):
        fi = f[i] ** 2
        inv[i, :3] = [-fi / (2 * f1), -fi / (2 * f2), fi / (2 * f2)]
        inv[i, i] = 1.0
    return inv


def condition_number_inf(matrix, inverse=None) -> float:
    """``||M||_inf ||M^-1||_inf`` (max absolute row sums).

    ``inverse`` defaults to a numerical inverse; pass the closed form when it is known.
    """
    m = np.asarray(matrix, dtype=float)
    inv = np.linalg.inv(m) if inverse is None else np.asarray(inverse, dtype=float)
    return float(np.abs(m).sum(axis=1).max() * np.abs(inv).sum(axis=1).max())


def condition_bound(spread: float) -> float:
    """``(1 + L^2)(1 + 1.5 L^2)``."""
    return (1.0 + spread**2) * (1.0 + 1.5 * spread**2)


def _by_pair(records) -> dict:
    out = {}
    for r in records:
        if r.pair in out:
            raise ValueError(f"duplicate measurement for pair {r.pair}")
        out[r.pair] = r
    return out


def _require(by_pair, pairs):
    missing = [p for p in pairs if p not in by_pair]
    if missing:
        raise ValueError(f"missing measurements for pairs {missing}")
    return [by_pair[p] for p in pairs]


def _reference_flags(recs, pairs, f) -> list:
    """Flag records whose reference periods disagree with the sampler-period convention."""
    t0 = None
    for rec, (i, _) in zip(recs, pairs):
        if i == 0:
            t0 = rec.reference_period
            break
    if t0 is None:
        return []
    for rec, (i, _) in zip(recs, pairs):
        if not math.isclose(rec.reference_period, t0 / f[i], rel_tol=_REF_RTOL):
            return ["reference_period_mismatch"]
    return []


def _finish(x, kappa, bound, residual, method, flags):
    if np.any(x < 0):
        flags.append("negative_variance")
    if kappa is not None and kappa > ILL_CONDITIONED:
        flags.append("ill_conditioned")
    return VolatilitySolution(tuple(float(v) for v in x), kappa, bound, float(residual), method, flags)


def recover_method2_general(records: Sequence[MeasurementRecord], ratios) -> VolatilitySolution:
    """Solve the full system with the closed-form inverse.

    Parameters
    ----------
    records : sequence of MeasurementRecord
        Exactly the pairs of :func:`general_pairs` (extra pairs are ignored).
    ratios : FrequencyRatios or sequence of float
        ``f_i / f_0`` for ``i = 0..n``.

    Returns
    -------
    VolatilitySolution
        ``sigma_sq_accumulated[i] = sigma_i^2(T0)``, with ``kappa_inf`` of the
        rate-form matrix (the one the error bound is about) and the bound.
    """
    f = _ratios(ratios)
    if f[0] != 1.0:
        f = f / f[0]
    n = len(f) - 1
    pairs = general_pairs(n)
    recs = _require(_by_pair(records), pairs)
    # sigma'^2(T_i) -> sigma'^2(T0)
    rhs = np.array([r.sigma_prime**2 * f[i] for r, (i, _) in zip(recs, pairs)])
    m = rate_system_matrix(f)
    inv = explicit_inverse(f)
    x = inv @ rhs
    kappa = condition_number_inf(m, inv)
    bound = condition_bound(f.max() / f.min())
    residual = np.abs(m @ x - rhs).max()
    return _finish(x, kappa, bound, residual, "method2_general", _reference_flags(recs, pairs, f))


def recover_method2_3osc(records: Sequence[MeasurementRecord], ratios) -> VolatilitySolution:
    """Three-oscillator recovery from pairs (0,1), (0,2), (1,2).

    Works directly on the accumulated system whose rows are
    ``[T0^2/T1^2, 1, 0]``, ``[T0^2/T2^2, 0, 1]`` and ``[0, T1^3/(T2^2 T0), T1/T0]``
    against the raw measured ``sigma'^2(T_i)``.
    """
    f = _ratios(ratios)
    if len(f) != 3:
        raise ValueError(f"three-oscillator recovery needs 3 ratios, got {len(f)}")
    f = f / f[0]
    pairs = general_pairs(2)
    recs = _require(_by_pair(records), pairs)
    rhs = np.array([r.sigma_prime**2 for r in recs])
    t1 = 1.0 / f[1]
    a = accumulated_system_matrix(f)
    # A = D M with D = diag(1, 1, T1/T0), so A^-1 = M^-1 D^-1
    m_inv = explicit_inverse(f)
    a_inv = m_inv.copy()
    a_inv[:, 2] /= t1
    x = a_inv @ rhs
    kappa = condition_number_inf(rate_system_matrix(f), m_inv)
    bound = condition_bound(f.max() / f.min())
    residual = np.abs(a @ x - rhs).max()
    return _finish(x, kappa, bound, residual, "method2_3osc", _reference_flags(recs, pairs, f))


def recover_method1(record: MeasurementRecord, ratio: float) -> Method1Estimate:
    """Split one ``(0, i)`` measurement assuming ``sigma_i^2 f_i`` is the same for every ring.

    Then ``sigma'_0i^2 = sigma_i^2 (1 + (f_i/f_0)^3)`` and ``sigma_0^2 = sigma_i^2 f_i / f_0``.
    ``ratio`` is ``f_i / f_0``.
    """
    if not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio!r}")
    if record.pair[0] != 0:
        raise ValueError(f"method 1 uses (0, i) measurements, got pair {record.pair}")
    si = record.sigma_prime**2 / (1.0 + ratio**3)
    return Method1Estimate(record.pair, si, si * ratio)


def recover_method1_all(records: Sequence[MeasurementRecord], ratios) -> VolatilitySolution:
    """Method 1 over all ``(0, i)`` records; ``sigma_0^2`` is the mean of the per-pair values."""
    f = _ratios(ratios)
    f = f / f[0]
    n = len(f) - 1
    by_pair = _by_pair(records)
    recs = _require(by_pair, [(0, i) for i in range(1, n + 1)])
    ests = [recover_method1(r, f[r.pair[1]]) for r in recs]
    x = np.empty(n + 1)
    x[0] = np.mean([e.sigma_sq_reference for e in ests])
    for e in ests:
        x[e.pair[1]] = e.sigma_sq_sampled
    # residual of the transfer equations with the pooled sigma_0^2
    pred = np.array([f[i] ** 2 * x[0] + x[i] for i in range(1, n + 1)])
    obs = np.array([r.sigma_prime**2 for r in recs])
    return _finish(x, None, None, np.abs(pred - obs).max(), "method1", [])


def forward_measurements(sigma_sq_accumulated, ratios, pairs=None, reference_period: float = 1.0,
                         n_bits: int = 0) -> list:
    """Noise-free records ``sigma'_ij(T_i)`` implied by known ``sigma_i^2(T0)``.

    ``reference_period`` is ``T0`` in seconds; record ``(i, j)`` is referenced to ``T0 f0/f_i``.
    """
    from .oscillator import AccumulatedVolatility

    f = _ratios(ratios)
    f = f / f[0]
    s = np.asarray(sigma_sq_accumulated, dtype=float)
    pairs = general_pairs(len(f) - 1) if pairs is None else pairs
    out = []
    for i, j in pairs:
        at_t0 = (f[j] / f[i]) ** 2 * s[i] + s[j]
        at_ti = at_t0 / f[i]
        out.append(MeasurementRecord(pair=(i, j), ratio_estimate=float(f[j] / f[i]),
                                     accumulated_sigma_prime=AccumulatedVolatility(
                                         math.sqrt(max(at_ti, 0.0)), reference_period / f[i]),
                                     n_bits_used=n_bits, method="expected"))
    return out
