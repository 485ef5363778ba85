"""Skew-normal distribution kernel.

Density 2*phi(z)*Phi(lambda*z), its log-gradient, random variates via the
half-normal convolution, and the analytic mean/variance/skewness. Everything
here is a pure function; vectorized over numpy arrays where it matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)

# Supremum of |skewness| for the skew-normal family, reached as |lambda| -> inf.
SKEWNESS_BOUND = 0.9952719

# Below this argument the inverse Mills ratio switches to its asymptotic series.
_MILLS_ASYMPTOTIC_CUTOFF = -30.0


class InvalidParams(ValueError):
    """Raised when distribution parameters violate their constraints."""


@dataclass(frozen=True)
class SkewNormalParams:
    """Location/scale/shape triple; scale must be strictly positive."""

    xi: float
    omega: float
    lam: float

    def __post_init__(self):
        for name in ("xi", "omega", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidParams(f"{name} must be finite, got {v!r}")
        if self.omega <= 0.0:
            raise InvalidParams(f"omega must be > 0, got {self.omega!r}")


@dataclass(frozen=True)
class SkewNormalMoments:
    mean: float
    variance: float
    skewness_gamma: float


def delta(lam):
    """Shape transform lam / sqrt(1 + lam^2), in (-1, 1)."""
    lam = np.asarray(lam, dtype=float)
    out = lam / np.sqrt(1.0 + lam * lam)
    return out.item() if out.ndim == 0 else out


def _log_phi(z):
    return -0.5 * (LOG_2PI + z * z)


def log_pdf_standard(z, lam):
    """log of 2*phi(z)*Phi(lam*z), stable for lam*z down to -40 and beyond."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = LOG_2 + _log_phi(z) + log_ndtr(lam * z)
    return out.item() if out.ndim == 0 else out


def log_pdf(x, params: SkewNormalParams):
    """Log density with location and scale: log_pdf_standard((x-xi)/omega) - log omega."""
    z = (np.asarray(x, dtype=float) - params.xi) / params.omega
    out = log_pdf_standard(z, params.lam) - math.log(params.omega)
    return float(out) if np.ndim(out) == 0 else out


def inverse_mills(u):
    """phi(u)/Phi(u); asymptotic series -u - 1/u + 2/u^3 for u < -30."""
    u = np.asarray(u, dtype=float)
    safe = np.where(u < _MILLS_ASYMPTOTIC_CUTOFF, 0.0, u)
    direct = np.exp(_log_phi(safe) - log_ndtr(safe))
    tail_u = np.where(u < _MILLS_ASYMPTOTIC_CUTOFF, u, -1.0)
    tail = -tail_u - 1.0 / tail_u + 2.0 / tail_u**3
    out = np.where(u < _MILLS_ASYMPTOTIC_CUTOFF, tail, direct)
    return out.item() if out.ndim == 0 else out


def grad_log_pdf_standard(z, lam):
    """Gradient of log_pdf_standard w.r.t. (z, lam).

    d/dz = -z + lam * r(lam z), d/dlam = z * r(lam z), with r the inverse
    Mills ratio.
    """
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    r = inverse_mills(lam * z)
    d_z = -z + lam * r
    d_lam = z * r
    if d_z.ndim == 0:
        return d_z.item(), d_lam.item()
    return d_z, d_lam


def sample(lam, rng: np.random.Generator, size=None):
    """Draw from SN(lam) as delta*|U0| + sqrt(1-delta^2)*U1.

    size defaults to the shape of lam (one draw per shape value).
    """
    d = delta(lam)
    if size is None and np.ndim(lam) > 0:
        size = np.shape(lam)
    u0 = rng.standard_normal(size)
    u1 = rng.standard_normal(size)
    return d * np.abs(u0) + np.sqrt(1.0 - d * d) * u1


def gamma_of_lambda(lam):
    """Skewness index gamma as a function of the shape lambda alone.

    Monotone increasing, odd, bounded by SKEWNESS_BOUND in absolute value.
    """
    d = np.asarray(delta(lam), dtype=float)
    m = d * math.sqrt(2.0 / math.pi)
    out = (4.0 - math.pi) / 2.0 * m**3 / (1.0 - 2.0 * d * d / math.pi) ** 1.5
    return out.item() if out.ndim == 0 else out


def moments(params: SkewNormalParams) -> SkewNormalMoments:
    """Analytic mean, variance and skewness under the scale convention.

    mean = xi + omega*delta*sqrt(2/pi); variance = omega^2*(1 - 2 delta^2/pi).
    """
    d = delta(params.lam)
    mean = params.xi + params.omega * d * math.sqrt(2.0 / math.pi)
    variance = params.omega**2 * (1.0 - 2.0 * d * d / math.pi)
    return SkewNormalMoments(
        mean=mean,
        variance=variance,
        skewness_gamma=gamma_of_lambda(params.lam),
    )
