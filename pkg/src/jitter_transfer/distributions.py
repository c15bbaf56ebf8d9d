"""Inverse Gaussian, normal-inverse Gaussian and normal laws.

The clock edges of a Wiener-phase oscillator are first hitting times of a
drifted Brownian motion, hence inverse Gaussian.  The phase increment of a
second oscillator sampled on those edges is a normal variance-mean mixture
with inverse Gaussian mixing, which is exactly a normal-inverse Gaussian (NIG)
law.  Densities are evaluated in log space because realistic oscillator
parameters put ``alpha`` and ``beta`` in the 1e5..1e12 range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DegenerateDistributionError, DomainError

__all__ = [
    "InverseGaussianParams",
    "NigParams",
    "NormalParams",
    "PointMass",
    "ig_pdf",
    "ig_logpdf",
    "ig_sample",
    "nig_pdf",
    "nig_logpdf",
    "nig_cdf",
    "nig_of_pair",
    "normal_pdf",
    "log_mgf_ig",
    "log_mgf_nig",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class InverseGaussianParams:
    """IG(mean_mu, shape_lambda)."""

    mean_mu: float
    shape_lambda: float

    def __post_init__(self):
        if not (self.mean_mu > 0 and math.isfinite(self.mean_mu)):
            raise ValueError(f"mean_mu must be positive, got {self.mean_mu!r}")
        if not (self.shape_lambda > 0 and math.isfinite(self.shape_lambda)):
            raise ValueError(f"shape_lambda must be positive, got {self.shape_lambda!r}")

    @property
    def mean(self) -> float:
        return self.mean_mu

    @property
    def variance(self) -> float:
        return self.mean_mu**3 / self.shape_lambda


@dataclass(frozen=True)
class NigParams:
    """NIG(alpha, beta, location_mu, delta) in the Barndorff-Nielsen parameterization."""

    alpha: float
    beta: float
    location_mu: float
    delta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta!r}")
        if not abs(self.beta) < self.alpha:
            raise ValueError(f"need |beta| < alpha, got beta={self.beta!r}, alpha={self.alpha!r}")

    @property
    def gamma(self) -> float:
        # sqrt(alpha^2 - beta^2) without squaring huge numbers
        return math.sqrt((self.alpha - self.beta) * (self.alpha + self.beta))

    @property
    def mean(self) -> float:
        return self.location_mu + self.delta * self.beta / self.gamma

    @property
    def variance(self) -> float:
        g = self.gamma
        return self.delta * (self.alpha / g) ** 2 / g

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class NormalParams:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError(f"std must be non-negative, got {self.std!r}")

    @property
    def variance(self) -> float:
        return self.std**2


@dataclass(frozen=True)
class PointMass:
    """Degenerate law concentrated at ``value`` (zero-volatility limit)."""

    value: float

    @property
    def mean(self) -> float:
        return self.value

    @property
    def variance(self) -> float:
        return 0.0


def ig_logpdf(x, p: InverseGaussianParams):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("inverse Gaussian density is defined for x > 0 only")
    mu, lam = p.mean_mu, p.shape_lambda
    out = 0.5 * (math.log(lam) - _LOG_2PI - 3.0 * np.log(x)) - lam * (x - mu) ** 2 / (2.0 * mu**2 * x)
    return out if out.ndim else float(out)


def ig_pdf(x, p: InverseGaussianParams):
    """Inverse Gaussian density ``sqrt(lam / (2 pi x^3)) exp(-lam (x-mu)^2 / (2 mu^2 x))``.

    Raises
    ------
    DomainError
        If any ``x <= 0``.
    """
    out = np.exp(ig_logpdf(x, p))
    return out if np.ndim(out) else float(out)


def ig_sample(p: InverseGaussianParams, rng: np.random.Generator, size=None):
    """Draw from IG(mu, lam) with the Michael-Schucany-Haas transformation.

    A chi-square(1) variate ``y`` is mapped to the smaller root ``x1`` of the
    quadratic ``lam (x - mu)^2 / (mu^2 x) = y``; the larger root ``mu^2 / x1``
    is taken with probability ``x1 / (mu + x1)``.  The root is computed in the
    conjugate form ``mu / (1 + w/2 + sqrt(w (4 + w))/2)`` with ``w = mu y / lam``,
    which has no cancellation for either tiny or huge ``w``.

    Parameters
    ----------
    p : InverseGaussianParams
    rng : numpy.random.Generator
        Caller-owned stream; two normals-worth of state are consumed per draw
        (one standard normal and one uniform).
    size : int or tuple, optional
        Output shape.  ``None`` returns a Python float.
    """
    mu, lam = p.mean_mu, p.shape_lambda
    nu = rng.standard_normal(size)
    u = rng.random(size)
    w = mu * nu * nu / lam
    x1 = mu / (1.0 + 0.5 * w + 0.5 * np.sqrt(w * (4.0 + w)))
    out = np.where(u <= mu / (mu + x1), x1, mu * mu / x1)
    return float(out) if size is None else out


def nig_logpdf(x, p: NigParams):
    x = np.asarray(x, dtype=float)
    a, b, mu, d = p.alpha, p.beta, p.location_mu, p.delta
    dx = x - mu
    q = np.hypot(d, dx)
    z = a * q
    # K1(z) = kve(1, z) * exp(-z)
    out = (math.log(a * d / math.pi) - np.log(q) + np.log(special.kve(1, z))
           + (d * p.gamma - z + b * dx))
    return out if out.ndim else float(out)


def nig_pdf(x, p: NigParams):
    """NIG density ``a d K1(a q) exp(d g + b (x - mu)) / (pi q)``, ``q = sqrt(d^2 + (x-mu)^2)``."""
    out = np.exp(nig_logpdf(x, p))
    return out if np.ndim(out) else float(out)


def _nig_window(p: NigParams, width: float = 40.0):
    m, s = p.mean, p.std
    return m - width * s, m + width * s


def nig_cdf(x: float, p: NigParams, tol: float = 1e-9) -> float:
    """NIG distribution function by adaptive quadrature of the density."""
    lo, hi = _nig_window(p)
    m, s = p.mean, p.std
    f = lambda t: nig_pdf(t, p)  # noqa: E731
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    if x <= m:
        pts = [t for t in (m - 5 * s, m - s) if lo < t < x]
        val, _ = integrate.quad(f, lo, x, points=pts or None, epsabs=tol, epsrel=0, limit=200)
        return min(max(val, 0.0), 1.0)
    pts = [t for t in (m + s, m + 5 * s) if x < t < hi]
    val, _ = integrate.quad(f, x, hi, points=pts or None, epsabs=tol, epsrel=0, limit=200)
    return min(max(1.0 - val, 0.0), 1.0)


def nig_of_pair(f0: float, sigma0: float, f1: float, sigma1: float) -> NigParams:
    """Law of the sampled-phase increment over one period of the sampling clock.

    Oscillator 0 (frequency ``f0``, volatility ``sigma0``) samples oscillator 1.
    The increment is ``N(f1 Z, sigma1^2 Z)`` with ``Z ~ IG(1/f0, 1/sigma0^2)``,
    i.e. NIG with

    * ``alpha = sqrt(f0^2 / (sigma0^2 sigma1^2) + f1^2 / sigma1^4)``
    * ``beta = f1 / sigma1^2``
    * ``mu = 0``
    * ``delta = sigma1 / sigma0``

    Raises
    ------
    DegenerateDistributionError
        If either volatility is zero; use :func:`normal_approx_params` or the
        deterministic limit instead.
    """
    for name, v in (("f0", f0), ("f1", f1)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    if sigma0 < 0 or sigma1 < 0:
        raise ValueError("volatilities must be non-negative")
    if sigma0 == 0 or sigma1 == 0:
        raise DegenerateDistributionError(
            "NIG law needs both volatilities positive; zero volatility gives a degenerate mixture",
            value=f1 / f0 if sigma0 == 0 and sigma1 == 0 else None,
        )
    beta = f1 / sigma1**2
    alpha = math.hypot(f0 / (sigma0 * sigma1), beta)
    return NigParams(alpha=alpha, beta=beta, location_mu=0.0, delta=sigma1 / sigma0)


def normal_pdf(x, p: NormalParams):
    if p.std == 0:
        raise DegenerateDistributionError("normal density undefined for std = 0", value=p.mean)
    x = np.asarray(x, dtype=float)
    z = (x - p.mean) / p.std
    out = np.exp(-0.5 * z * z - 0.5 * _LOG_2PI) / p.std
    return out if out.ndim else float(out)


def log_mgf_ig(s, p: InverseGaussianParams):
    """``(lam/mu) (1 - sqrt(1 - 2 mu^2 s / lam))``; defined for ``s <= lam / (2 mu^2)``."""
    s = np.asarray(s, dtype=float)
    mu, lam = p.mean_mu, p.shape_lambda
    u = 2.0 * mu * mu * s / lam
    if np.any(u > 1.0):
        raise DomainError(f"IG MGF diverges for s > {lam / (2 * mu * mu)!r}")
    out = (lam / mu) * u / (1.0 + np.sqrt(1.0 - u))
    return out if out.ndim else float(out)


def log_mgf_nig(s, p: NigParams):
    """``mu s + delta (gamma - sqrt(alpha^2 - (beta + s)^2))``; needs ``|beta + s| <= alpha``."""
    s = np.asarray(s, dtype=float)
    a, b = p.alpha, p.beta
    bs = b + s
    if np.any(np.abs(bs) > a):
        raise DomainError("NIG MGF diverges for |beta + s| > alpha")
    root = np.sqrt((a - bs) * (a + bs))
    out = p.location_mu * s + p.delta * s * (2.0 * b + s) / (p.gamma + root)
    return out if out.ndim else float(out)
