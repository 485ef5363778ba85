"""Joint posterior of the stochastic-volatility model with dynamic skewness.

The latent log-variance follows a stationary AR(1); the observation shape
parameter follows a random walk started at alpha_0. Both paths enter the
posterior through a non-centered parameterization: the unconstrained vector
carries i.i.d. standard-normal innovations, and the paths are rebuilt
deterministically inside every evaluation. Sparsity on alpha_0 and
sigma_lambda comes from double-exponential priors whose rates kappa carry
Gamma hyperpriors.

Unconstrained layout, dimension 7 + (T+1) + T:

    [mu_h, atanh(phi_h), log sigma_h, alpha_0, sigma_lambda,
     log kappa_alpha, log kappa_sigma,
     e_h[0..T]  (T+1 log-variance innovations, e_h[0] drives h_0),
     e_l[1..T]  (T skewness-walk innovations)]

sigma_lambda is kept as an unrestricted real (its sign is unidentified);
reporting uses |sigma_lambda|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammaln, log_ndtr

from . import skew_normal
from .data_io import TimeSeries, monthly_dates
from .skew_normal import LOG_2, LOG_2PI, inverse_mills

N_STATIC = 7
IDX_MU, IDX_TPHI, IDX_TSIG, IDX_A0, IDX_SL, IDX_TKA, IDX_TKS = range(N_STATIC)

STATIC_NAMES = ("mu_h", "phi_h", "sigma_h", "alpha_0", "sigma_lambda",
                "kappa_alpha", "kappa_sigma")

SKEW_MODES = ("dynamic", "static", "none")


class ModelError(ValueError):
    """Raised for invalid parameters, configs, or inconsistent dimensions."""


@dataclass(frozen=True)
class StaticParams:
    mu_h: float
    phi_h: float
    sigma_h: float
    alpha_0: float
    sigma_lambda: float
    kappa_alpha: float = 1.0
    kappa_sigma: float = 1.0

    def __post_init__(self):
        if not -1.0 < self.phi_h < 1.0:
            raise ModelError(f"phi_h must be in (-1, 1), got {self.phi_h}")
        if self.sigma_h <= 0.0:
            raise ModelError(f"sigma_h must be > 0, got {self.sigma_h}")
        if self.kappa_alpha <= 0.0 or self.kappa_sigma <= 0.0:
            raise ModelError("kappa rates must be > 0")
        for name in ("mu_h", "phi_h", "sigma_h", "alpha_0", "sigma_lambda"):
            if not math.isfinite(getattr(self, name)):
                raise ModelError(f"{name} must be finite")


@dataclass
class LatentPaths:
    """h holds h_0..h_T (length T+1); lam holds lambda_1..lambda_T."""

    h: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if len(self.h) != len(self.lam) + 1:
            raise ModelError(
                f"h has {len(self.h)} entries, expected {len(self.lam) + 1}"
            )
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.lam))):
            raise ModelError("latent paths must be finite")


@dataclass(frozen=True)
class ModelConfig:
    """Prior hyperparameters plus the skew-mode switch.

    sigma_h2_* parameterize the inverse-gamma prior on sigma_h squared.
    kappa_* pairs are (shape, rate) of the Gamma hyperpriors.
    """

    mu_h_mean: float = 4.0
    mu_h_sd: float = 10.0
    phi_h_mean: float = 0.95
    phi_h_sd: float = 0.5
    sigma_h2_shape: float = 0.1
    sigma_h2_scale: float = 0.1
    kappa_sigma_shape: float = 0.1
    kappa_sigma_rate: float = 0.1
    kappa_alpha_shape: float = 0.1
    kappa_alpha_rate: float = 0.1
    skew_mode: str = "dynamic"

    def __post_init__(self):
        if self.skew_mode not in SKEW_MODES:
            raise ModelError(f"unknown skew_mode {self.skew_mode!r}")
        for name in ("mu_h_sd", "phi_h_sd", "sigma_h2_shape", "sigma_h2_scale",
                     "kappa_sigma_shape", "kappa_sigma_rate",
                     "kappa_alpha_shape", "kappa_alpha_rate"):
            if getattr(self, name) <= 0.0:
                raise ModelError(f"{name} must be > 0")


# Shipped prior profiles; they differ only in the inverse-gamma pair.
PROFILES = {
    "bonds": ModelConfig(sigma_h2_shape=0.1, sigma_h2_scale=0.1),
    "fx": ModelConfig(sigma_h2_shape=2.0, sigma_h2_scale=2.0),
}


def default_config(profile: str = "bonds", **overrides) -> ModelConfig:
    if profile not in PROFILES:
        raise ModelError(f"unknown profile {profile!r}")
    return replace(PROFILES[profile], **overrides)


def dim_for(T: int) -> int:
    return N_STATIC + (T + 1) + T


def frozen_mask(T: int, config: ModelConfig) -> np.ndarray:
    """Boolean mask over the unconstrained vector; True = coordinate frozen.

    Static mode pins sigma_lambda (and its hyperrate and the walk
    innovations); none mode additionally pins alpha_0 and its hyperrate.
    """
    mask = np.zeros(dim_for(T), dtype=bool)
    if config.skew_mode in ("static", "none"):
        mask[IDX_SL] = True
        mask[IDX_TKS] = True
        mask[N_STATIC + T + 1:] = True
    if config.skew_mode == "none":
        mask[IDX_A0] = True
        mask[IDX_TKA] = True
    return mask


def _split(x: np.ndarray, T: int):
    if len(x) != dim_for(T):
        raise ModelError(f"vector has {len(x)} entries, expected {dim_for(T)}")
    e_h = x[N_STATIC:N_STATIC + T + 1]
    e_l = x[N_STATIC + T + 1:]
    return x[:N_STATIC], e_h, e_l


def _build_h(mu, phi, sigma, e_h):
    """Non-centered AR(1) path: h_0 stationary, then the recursion."""
    c0 = sigma / math.sqrt(1.0 - phi * phi)
    d0 = c0 * e_h[0]
    if len(e_h) > 1:
        dev = lfilter([1.0], [1.0, -phi], sigma * e_h[1:],
                      zi=np.array([phi * d0]))[0]
    else:
        dev = np.empty(0)
    return mu + np.concatenate(([d0], dev))


def constrain(x: np.ndarray, T: int, config: ModelConfig):
    """Map an unconstrained vector to (StaticParams, LatentPaths)."""
    x = np.asarray(x, dtype=float)
    stat, e_h, e_l = _split(x, T)
    mu = stat[IDX_MU]
    phi = math.tanh(stat[IDX_TPHI])
    sigma = math.exp(stat[IDX_TSIG])
    a0 = 0.0 if config.skew_mode == "none" else stat[IDX_A0]
    sl = 0.0 if config.skew_mode != "dynamic" else stat[IDX_SL]
    ka = math.exp(stat[IDX_TKA])
    ks = math.exp(stat[IDX_TKS])
    h = _build_h(mu, phi, sigma, e_h)
    lam = a0 + sl * np.cumsum(e_l) if config.skew_mode == "dynamic" \
        else np.full(T, a0)
    params = StaticParams(mu, phi, sigma, a0, sl, ka, ks)
    return params, LatentPaths(h=h, lam=lam)


def unconstrain(params: StaticParams, paths: LatentPaths,
                config: ModelConfig) -> np.ndarray:
    """Inverse of constrain (innovations recovered from the paths)."""
    T = len(paths.lam)
    x = np.zeros(dim_for(T))
    x[IDX_MU] = params.mu_h
    x[IDX_TPHI] = math.atanh(params.phi_h)
    x[IDX_TSIG] = math.log(params.sigma_h)
    x[IDX_A0] = params.alpha_0
    x[IDX_SL] = params.sigma_lambda
    x[IDX_TKA] = math.log(params.kappa_alpha)
    x[IDX_TKS] = math.log(params.kappa_sigma)
    h = paths.h
    c0 = params.sigma_h / math.sqrt(1.0 - params.phi_h**2)
    e_h = np.empty(T + 1)
    e_h[0] = (h[0] - params.mu_h) / c0
    e_h[1:] = (h[1:] - params.mu_h
               - params.phi_h * (h[:-1] - params.mu_h)) / params.sigma_h
    x[N_STATIC:N_STATIC + T + 1] = e_h
    if config.skew_mode == "dynamic" and params.sigma_lambda != 0.0:
        steps = np.diff(paths.lam, prepend=params.alpha_0)
        x[N_STATIC + T + 1:] = steps / params.sigma_lambda
    return x


def simulate(params: StaticParams, T: int, rng: np.random.Generator,
             skew_mode: str = "dynamic", label: str = "simulated"):
    """Generate (y, latent paths) from the model.

    h_0 comes from the stationary AR(1) distribution; lambda starts at
    alpha_0 and random-walks with sd sigma_lambda; observations are
    exp(h_t/2) times a skew-normal variate with shape lambda_t.
    """
    if T < 1:
        raise ModelError(f"T must be >= 1, got {T}")
    if skew_mode not in SKEW_MODES:
        raise ModelError(f"unknown skew_mode {skew_mode!r}")
    e_h = rng.standard_normal(T + 1)
    h = _build_h(params.mu_h, params.phi_h, params.sigma_h, e_h)
    a0 = 0.0 if skew_mode == "none" else params.alpha_0
    sl = 0.0 if skew_mode != "dynamic" else params.sigma_lambda
    lam = a0 + sl * np.cumsum(rng.standard_normal(T))
    z = skew_normal.sample(lam, rng)
    y = np.exp(h[1:] / 2.0) * z
    series = TimeSeries(monthly_dates(T), y, label=label)
    return series, LatentPaths(h=h, lam=lam)



def _exp(v):
    """exp that saturates to inf instead of raising OverflowError."""
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf

def _log_gamma_pdf(x, shape, rate):
    return shape * math.log(rate) - gammaln(shape) \
        + (shape - 1.0) * math.log(x) - rate * x


def log_posterior(x: np.ndarray, y, config: ModelConfig,
                  explain_nonfinite: bool = False) -> float:
    """Unnormalized log posterior on the unconstrained space.

    Includes the likelihood, the standard-normal innovation priors, the
    static-parameter priors and all change-of-variable Jacobians. Frozen
    coordinates (per skew_mode) contribute nothing.

    With explain_nonfinite=True a non-finite total raises ModelError naming
    the offending term; otherwise the (possibly non-finite) value is
    returned and the caller treats it as a rejected region.
    """
    yv = y.values if isinstance(y, TimeSeries) else np.asarray(y, dtype=float)
    T = len(yv)
    x = np.asarray(x, dtype=float)
    stat, e_h, e_l = _split(x, T)

    mu = stat[IDX_MU]
    tphi = stat[IDX_TPHI]
    tsig = stat[IDX_TSIG]
    phi = math.tanh(tphi)
    if abs(phi) >= 1.0:
        raise ModelError("phi_h transform saturated (|atanh arg| too large)")
    sigma = _exp(tsig)
    a0 = 0.0 if config.skew_mode == "none" else stat[IDX_A0]
    sl = 0.0 if config.skew_mode != "dynamic" else stat[IDX_SL]
    ka = _exp(stat[IDX_TKA])
    ks = _exp(stat[IDX_TKS])

    terms = {}

    if T > 0:
        h = _build_h(mu, phi, sigma, e_h)
        ht = h[1:]
        lam = a0 + sl * np.cumsum(e_l) if config.skew_mode == "dynamic" \
            else np.full(T, a0)
        z = yv * np.exp(-ht / 2.0)
        terms["likelihood"] = float(
            np.sum(LOG_2 - 0.5 * (LOG_2PI + z * z) - ht / 2.0
                   + log_ndtr(lam * z))
        )

    terms["h_innovations"] = float(
        -0.5 * np.sum(e_h * e_h) - 0.5 * len(e_h) * LOG_2PI
    )
    if config.skew_mode == "dynamic" and T > 0:
        terms["lambda_innovations"] = float(
            -0.5 * np.sum(e_l * e_l) - 0.5 * len(e_l) * LOG_2PI
        )

    terms["mu_h_prior"] = (
        -0.5 * ((mu - config.mu_h_mean) / config.mu_h_sd) ** 2
        - math.log(config.mu_h_sd) - 0.5 * LOG_2PI
    )
    # truncation normalizer over (-1, 1) is constant and dropped
    terms["phi_h_prior"] = (
        -0.5 * ((phi - config.phi_h_mean) / config.phi_h_sd) ** 2
        - math.log(config.phi_h_sd) - 0.5 * LOG_2PI
        + math.log1p(-phi * phi)  # Jacobian of tanh
    )
    a_s, b_s = config.sigma_h2_shape, config.sigma_h2_scale
    # inverse-gamma on sigma_h^2 = exp(2 tsig), Jacobian log(2) + 2 tsig
    terms["sigma_h_prior"] = (
        a_s * math.log(b_s) - gammaln(a_s)
        - (a_s + 1.0) * 2.0 * tsig - b_s * _exp(-2.0 * tsig)
        + LOG_2 + 2.0 * tsig
    )
    if config.skew_mode != "none":
        terms["alpha_0_prior"] = math.log(ka / 2.0) - ka * abs(a0)
        terms["kappa_alpha_prior"] = (
            _log_gamma_pdf(ka, config.kappa_alpha_shape,
                           config.kappa_alpha_rate) + stat[IDX_TKA]
        )
    if config.skew_mode == "dynamic":
        terms["sigma_lambda_prior"] = math.log(ks / 2.0) - ks * abs(sl)
        terms["kappa_sigma_prior"] = (
            _log_gamma_pdf(ks, config.kappa_sigma_shape,
                           config.kappa_sigma_rate) + stat[IDX_TKS]
        )

    total = sum(terms.values())
    if explain_nonfinite and not math.isfinite(total):
        for name, val in terms.items():
            if not math.isfinite(np.sum(val)):
                raise ModelError(f"non-finite log posterior: term {name!r}")
        raise ModelError("non-finite log posterior")
    return total


def log_posterior_grad(x: np.ndarray, y, config: ModelConfig) -> np.ndarray:
    """Analytic gradient of log_posterior on the unconstrained space.

    The double-exponential kink at alpha_0 = 0 or sigma_lambda = 0 uses the
    subgradient 0 for that prior contribution. Frozen coordinates get
    exactly 0.
    """
    yv = y.values if isinstance(y, TimeSeries) else np.asarray(y, dtype=float)
    T = len(yv)
    x = np.asarray(x, dtype=float)
    stat, e_h, e_l = _split(x, T)

    mu = stat[IDX_MU]
    tphi = stat[IDX_TPHI]
    tsig = stat[IDX_TSIG]
    phi = math.tanh(tphi)
    if abs(phi) >= 1.0:
        raise ModelError("phi_h transform saturated (|atanh arg| too large)")
    sigma = _exp(tsig)
    a0 = 0.0 if config.skew_mode == "none" else stat[IDX_A0]
    sl = 0.0 if config.skew_mode != "dynamic" else stat[IDX_SL]
    ka = _exp(stat[IDX_TKA])
    ks = _exp(stat[IDX_TKS])

    g = np.zeros_like(x)
    d_mu = d_phi = d_sigma = 0.0
    d_a0 = d_sl = 0.0

    if T > 0:
        h = _build_h(mu, phi, sigma, e_h)
        ht = h[1:]
        lam = a0 + sl * np.cumsum(e_l) if config.skew_mode == "dynamic" \
            else np.full(T, a0)
        z = yv * np.exp(-ht / 2.0)
        r = inverse_mills(lam * z)
        q = z * r                                   # dL/dlambda_t
        g_h = 0.5 * (z * z - 1.0 - lam * q)         # dL/dh_t, t=1..T

        # adjoint of the AR(1) recursion: ghat_t = g_t + phi * ghat_{t+1},
        # run backwards over t = T..0 (h_0 has no direct likelihood term)
        ghat = lfilter([1.0], [1.0, -phi],
                       np.concatenate(([0.0], g_h))[::-1])[::-1]
        ghat0 = ghat[0]                             # adjoint of h_0
        ghat_path = ghat[1:]                        # adjoints of h_1..h_T

        one_m_phi2 = 1.0 - phi * phi
        c0 = sigma / math.sqrt(one_m_phi2)
        hlag = h[:-1]
        d_mu += (1.0 - phi) * float(np.sum(ghat_path)) + ghat0
        d_phi += float(np.sum(ghat_path * (hlag - mu))) \
            + ghat0 * e_h[0] * sigma * phi * one_m_phi2 ** -1.5
        d_sigma += float(np.sum(ghat_path * e_h[1:])) \
            + ghat0 * e_h[0] / math.sqrt(one_m_phi2)
        g[N_STATIC] += ghat0 * c0
        g[N_STATIC + 1:N_STATIC + T + 1] += ghat_path * sigma

        if config.skew_mode != "none":
            d_a0 += float(np.sum(q))
        if config.skew_mode == "dynamic":
            S = np.cumsum(e_l)
            d_sl += float(np.sum(q * S))
            g[N_STATIC + T + 1:] += sl * np.cumsum(q[::-1])[::-1]

    # innovation priors
    g[N_STATIC:N_STATIC + T + 1] += -e_h
    if config.skew_mode == "dynamic" and T > 0:
        g[N_STATIC + T + 1:] += -e_l

    # static priors
    d_mu += -(mu - config.mu_h_mean) / config.mu_h_sd**2
    d_phi += -(phi - config.phi_h_mean) / config.phi_h_sd**2

    g[IDX_MU] = d_mu
    g[IDX_TPHI] = d_phi * (1.0 - phi * phi) - 2.0 * phi
    a_s, b_s = config.sigma_h2_shape, config.sigma_h2_scale
    g[IDX_TSIG] = d_sigma * sigma - 2.0 * (a_s + 1.0) \
        + 2.0 * b_s * _exp(-2.0 * tsig) + 2.0

    if config.skew_mode != "none":
        g[IDX_A0] = d_a0 - ka * np.sign(a0)
        g[IDX_TKA] = config.kappa_alpha_shape + 1.0 \
            - config.kappa_alpha_rate * ka - ka * abs(a0)
    if config.skew_mode == "dynamic":
        g[IDX_SL] = d_sl - ks * np.sign(sl)
        g[IDX_TKS] = config.kappa_sigma_shape + 1.0 \
            - config.kappa_sigma_rate * ks - ks * abs(sl)

    g[frozen_mask(T, config)] = 0.0
    return g
