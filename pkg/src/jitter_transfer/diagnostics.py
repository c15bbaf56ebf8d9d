"""How good is the normal approximation of the sampled-phase increment?

The exact increment law is NIG; the transfer principle replaces it by a
normal with the same mean and variance.  This module measures the gap in
total variation, sweeps it over jitter levels ``h = sqrt(sigma^2 / f)`` and
fits the log-log slope (expected close to 1, i.e. the gap is ``O(h)``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .distributions import (NigParams, NormalParams, nig_cdf, nig_of_pair, nig_pdf, normal_pdf)
from .errors import EstimationFailedError

__all__ = [
    "DiscrepancyPoint",
    "normal_approx_params",
    "tv_distance",
    "discrepancy_sweep",
    "loglog_slope",
    "density_comparison",
    "write_discrepancy_csv",
    "write_density_csv",
    "binned_tv",
]

TV_TOL = 1e-8
WINDOW_SDS = 40.0
_SCAN_SDS = 12.0
_SCAN_POINTS = 4001


@dataclass(frozen=True)
class DiscrepancyPoint:
    jitter_level: float
    tv_distance: float

    def __post_init__(self):
        if not self.jitter_level > 0:
            raise ValueError(f"jitter_level must be positive, got {self.jitter_level!r}")
        if not 0 <= self.tv_distance <= 1:
            raise ValueError(f"tv_distance must lie in [0, 1], got {self.tv_distance!r}")


def normal_approx_params(f0: float, sigma0: float, f1: float, sigma1: float) -> NormalParams:
    """``N(f1/f0, sigma1^2/f0 + f1^2 sigma0^2/f0^3)``, the moment-matched normal."""
    if not (f0 > 0 and f1 > 0):
        raise ValueError("frequencies must be positive")
    if sigma0 < 0 or sigma1 < 0:
        raise ValueError("volatilities must be non-negative")
    return NormalParams(f1 / f0, math.sqrt(sigma1**2 / f0 + f1**2 * sigma0**2 / f0**3))


def _pdf(p):
    if isinstance(p, NigParams):
        return lambda x: nig_pdf(x, p)
    if isinstance(p, NormalParams):
        if p.std == 0:
            raise ValueError("TV distance needs a non-degenerate normal")
        return lambda x: normal_pdf(x, p)
    raise TypeError(f"unsupported distribution {type(p).__name__}")


def tv_distance(exact, approx, tol: float = TV_TOL) -> float:
    """Total variation ``1/2 int |p - q|`` between two densities.

    The integration window spans mean +- 40 standard deviations of both
    laws.  Sign changes of ``p - q`` are located on a scan grid and
    polished with Brent's method, then ``p - q`` is integrated adaptively
    between consecutive crossings, so each piece has a smooth integrand.

    Parameters
    ----------
    exact, approx : NigParams or NormalParams
    tol : float
        Absolute tolerance on the result.

    Raises
    ------
    EstimationFailedError
        If the quadrature reports an error estimate above ``tol``.
    """
    p, q = _pdf(exact), _pdf(approx)
    centres = [(exact.mean, exact.std), (approx.mean, approx.std)]
    lo = min(m - WINDOW_SDS * s for m, s in centres)
    hi = max(m + WINDOW_SDS * s for m, s in centres)

    def diff(x):
        return p(x) - q(x)

    grid = np.unique(np.concatenate([np.linspace(m - _SCAN_SDS * s, m + _SCAN_SDS * s, _SCAN_POINTS)
                                     for m, s in centres]))
    v = diff(grid)
    roots = []
    for k in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
        roots.append(optimize.brentq(diff, grid[k], grid[k + 1], xtol=1e-15 * max(1.0, abs(grid[k]))))
    edges = [lo, *roots, hi]
    total, err_total = 0.0, 0.0
    piece_tol = tol / len(edges)
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(diff, a, b, epsabs=piece_tol, epsrel=0, limit=500)
        total += abs(val)
        err_total += err
    if err_total > tol:
        raise EstimationFailedError("TV quadrature did not converge", {"error_estimate": err_total})
    return float(min(max(0.5 * total, 0.0), 1.0))


def _pair_at_level(level: float, f_ratio: float):
    # f0 = 1, f1 = f_ratio, and both oscillators at the same jitter level
    f0, f1 = 1.0, f_ratio
    s0, s1 = level * math.sqrt(f0), level * math.sqrt(f1)
    return nig_of_pair(f0, s0, f1, s1), normal_approx_params(f0, s0, f1, s1)


def discrepancy_sweep(levels: Sequence[float], f_ratio: float = 1.0) -> list:
    """TV between exact and approximate increment laws at each jitter level.

    Oscillator 0 runs at frequency 1 and oscillator 1 at ``f_ratio``; both
    have ``sigma_i^2 / f_i = level^2``.
    """
    if not f_ratio > 0:
        raise ValueError(f"f_ratio must be positive, got {f_ratio!r}")
    out = []
    for h in levels:
        if not 0 < h < 0.5:
            raise ValueError(f"jitter levels must lie in (0, 0.5), got {h!r}")
        out.append(DiscrepancyPoint(float(h), tv_distance(*_pair_at_level(h, f_ratio))))
    return out


def loglog_slope(points: Sequence[DiscrepancyPoint]) -> float:
    """OLS slope of ``log tv`` against ``log level``."""
    x = np.log([p.jitter_level for p in points])
    y = np.log([p.tv_distance for p in points])
    if len(x) < 2:
        raise ValueError("need at least two points")
    return float(np.polyfit(x, y, 1)[0])


def density_comparison(level: float, f_ratio: float = 1.0, n_points: int = 401, width: float = 5.0):
    """Phase grid with the exact and approximate densities on it (three arrays)."""
    exact, approx = _pair_at_level(level, f_ratio)
    x = np.linspace(exact.mean - width * exact.std, exact.mean + width * exact.std, n_points)
    return x, nig_pdf(x, exact), normal_pdf(x, approx)


def write_discrepancy_csv(points: Sequence[DiscrepancyPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["jitter", "discrepancy"])
        for p in points:
            w.writerow([repr(p.jitter_level), repr(p.tv_distance)])


def write_density_csv(phase, pdf_exact, pdf_approx, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "pdfexact", "pdfapprox"])
        for row in zip(phase, pdf_exact, pdf_approx):
            w.writerow([repr(float(v)) for v in row])


def binned_tv(samples, exact: NigParams, n_bins: int = 100, width: float = 5.0) -> float:
    """TV between a histogram of ``samples`` and the NIG bin probabilities.

    Bins cover the mean +- ``width`` standard deviations; both tails outside
    form one extra bin each.  Sampling noise alone contributes roughly
    ``sqrt(n_bins / n)`` / 2 or less.
    """
    samples = np.asarray(samples, dtype=float)
    m, s = exact.mean, exact.std
    inner = np.linspace(m - width * s, m + width * s, n_bins + 1)
    counts, _ = np.histogram(samples, bins=inner)
    below = np.count_nonzero(samples < inner[0])
    above = np.count_nonzero(samples > inner[-1])
    emp = np.concatenate([[below], counts, [above]]) / len(samples)
    cdf = np.array([nig_cdf(x, exact) for x in inner])
    prob = np.concatenate([[cdf[0]], np.diff(cdf), [1.0 - cdf[-1]]])
    return float(0.5 * np.abs(emp - prob).sum())
