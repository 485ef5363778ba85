"""Posterior simulation: leapfrog HMC with dual-averaging step-size
adaptation, a random-walk Metropolis baseline, chain orchestration, and
split-R-hat / ESS convergence diagnostics.

Chains are independent given their seeds, so running them in a process pool
or sequentially yields bit-identical output.
"""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model
from .data_io import TimeSeries
from .model import ModelConfig, StaticParams, STATIC_NAMES

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    """Raised when a run cannot produce usable draws."""


@dataclass(frozen=True)
class HmcConfig:
    n_iter: int = 30000
    n_burnin: int = 15000
    leapfrog_steps: int = 24
    jitter_steps: bool = True           # uniform over [0.8 L, 1.2 L]
    initial_step_size: float = 0.1
    target_accept: float = 0.8
    mass_diag: object = "adapted"       # "adapted", None (identity), or array
    seed: int = 0
    n_chains: int = 4
    thin: int = 1
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.n_burnin < self.n_iter:
            raise ValueError("need 0 < n_burnin < n_iter")
        if not 0.5 < self.target_accept < 0.99:
            raise ValueError("target_accept must be in (0.5, 0.99)")
        if self.initial_step_size <= 0:
            raise ValueError("initial_step_size must be > 0")
        if self.n_chains < 1 or self.thin < 1 or self.leapfrog_steps < 1:
            raise ValueError("counts must be >= 1")


@dataclass
class PosteriorDraws:
    """Retained draws in the constrained space, all chains concatenated."""

    statics: np.ndarray          # (n, 7) columns = STATIC_NAMES
    h: np.ndarray                # (n, T+1) log-variance paths h_0..h_T
    lam: np.ndarray              # (n, T) skewness paths lambda_1..lambda_T
    chain_id: np.ndarray         # (n,)
    param_names: tuple = STATIC_NAMES
    accept_rate: np.ndarray = None      # per chain
    divergences: np.ndarray = None      # per chain, retained phase
    step_size: np.ndarray = None        # per chain, frozen value

    @property
    def T(self):
        return self.lam.shape[1]

    @property
    def n_chains(self):
        return len(np.unique(self.chain_id))

    def by_chain(self, column: int) -> np.ndarray:
        """Static-parameter column reshaped to (n_chains, n_per_chain)."""
        chains = [self.statics[self.chain_id == c, column]
                  for c in np.unique(self.chain_id)]
        n = min(len(c) for c in chains)
        return np.vstack([c[:n] for c in chains])


@dataclass
class Diagnostics:
    ess: dict
    rhat: dict
    mean_accept: float
    divergence_count: int


# ---------------------------------------------------------------------------
# core transitions

def leapfrog(position, momentum, step_size, n_steps, grad_fn, mass_diag=None):
    """Half-kick / drift / half-kick integration of the Hamiltonian flow.

    Returns (position', momentum', diverged). A non-finite gradient flags a
    divergence instead of raising.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    inv_mass = 1.0 if mass_diag is None else 1.0 / np.asarray(mass_diag)
    g = grad_fn(q)
    if not np.all(np.isfinite(g)):
        return q, p, True
    for _ in range(n_steps):
        p = p + 0.5 * step_size * g
        q = q + step_size * inv_mass * p
        g = grad_fn(q)
        if not np.all(np.isfinite(g)):
            return q, p, True
        p = p + 0.5 * step_size * g
    return q, p, False


def _kinetic(p, mass_diag):
    inv_mass = 1.0 if mass_diag is None else 1.0 / np.asarray(mass_diag)
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * float(np.sum(p * p * inv_mass))


def hmc_step(position, logpost_fn, grad_fn, step_size, n_steps, rng,
             mass_diag=None, lp_current=None, frozen=None):
    """One HMC transition.

    Returns (position', lp', accepted, energy_error, accept_prob). The
    energy error is H(proposal) - H(current); |error| beyond the divergence
    threshold (or any non-finite quantity) auto-rejects.
    """
    q = np.asarray(position, dtype=float)
    if lp_current is None:
        lp_current = logpost_fn(q)
    scale = 1.0 if mass_diag is None else np.sqrt(np.asarray(mass_diag))
    p = rng.standard_normal(len(q)) * scale
    if frozen is not None:
        p = np.where(frozen, 0.0, p)
    h_current = -lp_current + _kinetic(p, mass_diag)

    if n_steps == 0:
        return q, lp_current, True, 0.0, 1.0

    q_new, p_new, diverged = leapfrog(q, p, step_size, n_steps, grad_fn,
                                      mass_diag)
    if diverged:
        return q, lp_current, False, math.inf, 0.0
    lp_new = logpost_fn(q_new)
    h_new = -lp_new + _kinetic(p_new, mass_diag)
    energy_error = h_new - h_current
    if not math.isfinite(energy_error) or abs(energy_error) > DIVERGENCE_THRESHOLD:
        return q, lp_current, False, energy_error, 0.0
    accept_prob = min(1.0, math.exp(min(0.0, -energy_error)))
    if rng.random() < accept_prob:
        return q_new, lp_new, True, energy_error, accept_prob
    return q, lp_current, False, energy_error, accept_prob


def rwmh_step(position, proposal_sd, logpost_fn, rng, lp_current=None):
    """Gaussian random-walk Metropolis transition (symmetric proposal)."""
    if np.any(np.asarray(proposal_sd) <= 0):
        raise ValueError("proposal_sd must be > 0")
    q = np.asarray(position, dtype=float)
    if lp_current is None:
        lp_current = logpost_fn(q)
    prop = q + proposal_sd * rng.standard_normal(len(q))
    lp_prop = logpost_fn(prop)
    log_acc = min(0.0, lp_prop - lp_current)
    if math.isfinite(lp_prop) and rng.random() < math.exp(log_acc):
        return prop, lp_prop, True
    return q, lp_current, False


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, initial_step_size, target_accept,
                 gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * initial_step_size)
        self.target = target_accept
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.log_eps = math.log(initial_step_size)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_prob):
        self.count += 1
        w = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** -self.kappa
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar

    @property
    def step_size(self):
        return math.exp(self.log_eps)

    @property
    def adapted_step_size(self):
        return math.exp(self.log_eps_bar)


# ---------------------------------------------------------------------------
# chain orchestration

def _safe_logpost(yv, config):
    def lp(x):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                v = model.log_posterior(x, yv, config)
        except (OverflowError, FloatingPointError, model.ModelError):
            return -math.inf
        return v if math.isfinite(v) else -math.inf
    return lp


def _safe_grad(yv, config):
    dim = model.dim_for(len(yv))
    def grad(x):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                g = model.log_posterior_grad(x, yv, config)
        except (OverflowError, FloatingPointError, model.ModelError):
            return np.full(dim, np.nan)
        return g
    return grad


def _initial_position(yv, config, rng, init_statics=None):
    """Dispersed start around a data-informed center.

    The shrinkage hyperpriors are so diffuse that raw prior draws routinely
    land in the kappa -> 0 funnel tail; chains started there need far more
    warmup than the run budget. The spread below keeps chains over-dispersed
    relative to the posterior while staying inside the well-behaved region.
    """
    T = len(yv)
    x = np.zeros(model.dim_for(T))
    if init_statics is not None:
        p = init_statics
        x[model.IDX_MU] = p.mu_h
        x[model.IDX_TPHI] = math.atanh(np.clip(p.phi_h, -0.995, 0.995))
        x[model.IDX_TSIG] = math.log(p.sigma_h)
        x[model.IDX_A0] = p.alpha_0
        x[model.IDX_SL] = p.sigma_lambda
        x[model.IDX_TKA] = math.log(p.kappa_alpha)
        x[model.IDX_TKS] = math.log(p.kappa_sigma)
    else:
        level = math.log(max(float(np.var(yv)), 1e-8))
        x[model.IDX_MU] = level + rng.normal(0.0, 1.0)
        phi = rng.uniform(0.5, 0.97)
        x[model.IDX_TPHI] = math.atanh(phi)
        x[model.IDX_TSIG] = rng.normal(math.log(0.3), 0.5)
        x[model.IDX_TKA] = rng.normal(0.0, 0.5)
        x[model.IDX_TKS] = rng.normal(0.0, 0.5)
        x[model.IDX_A0] = rng.normal(0.0, 0.3)
        x[model.IDX_SL] = rng.normal(0.0, 0.3)
    x[model.N_STATIC:] = 0.1 * rng.standard_normal(2 * T + 1)
    x[model.frozen_mask(T, config)] = 0.0
    return x


def _run_single_chain(args):
    (yv, m_config, h_config, chain_id, init_statics) = args
    T = len(yv)
    rng = np.random.default_rng([h_config.seed, chain_id])
    lp_fn = _safe_logpost(yv, m_config)
    grad_fn = _safe_grad(yv, m_config)
    frozen = model.frozen_mask(T, m_config)

    q = _initial_position(yv, m_config, rng, init_statics)
    lp = lp_fn(q)
    if not math.isfinite(lp):
        q[model.N_STATIC:] = 0.0
        q[frozen] = 0.0
        lp = lp_fn(q)

    mass = None if h_config.mass_diag in ("adapted", None) \
        else np.asarray(h_config.mass_diag, dtype=float)
    adapt_mass = h_config.mass_diag == "adapted"
    da = DualAveraging(h_config.initial_step_size, h_config.target_accept)
    step_size = h_config.initial_step_size

    n_burn = h_config.n_burnin
    mass_window_start = n_burn // 2
    mass_update_at = (3 * n_burn) // 4
    window = []

    retained = []
    accepts = 0
    divergences = 0
    n_retained_target = 0
    L = h_config.leapfrog_steps

    for it in range(h_config.n_iter):
        if h_config.jitter_steps:
            lo = max(1, int(math.ceil(0.8 * L)))
            hi = max(lo, int(math.floor(1.2 * L)))
            n_steps = int(rng.integers(lo, hi + 1))
        else:
            n_steps = L
        q, lp, accepted, e_err, a_prob = hmc_step(
            q, lp_fn, grad_fn, step_size, n_steps, rng,
            mass_diag=mass, lp_current=lp, frozen=frozen)

        if it < n_burn:
            da.update(a_prob)
            step_size = da.step_size
            if adapt_mass and mass_window_start <= it < mass_update_at:
                window.append(q.copy())
            if adapt_mass and it == mass_update_at - 1 and window:
                var = np.var(np.asarray(window), axis=0)
                var[frozen] = 1.0
                mass = 1.0 / np.clip(var, 1e-6, 1e6)
                # retune the step size for the new metric
                da = DualAveraging(da.adapted_step_size,
                                   h_config.target_accept)
                step_size = da.adapted_step_size
                window = []
            if it == n_burn - 1:
                step_size = da.adapted_step_size
        else:
            if accepted:
                accepts += 1
            if not math.isfinite(e_err) or abs(e_err) > DIVERGENCE_THRESHOLD:
                divergences += 1
            n_retained_target += 1
            if (it - n_burn) % h_config.thin == 0:
                retained.append(q.copy())

    kept = np.asarray(retained)
    n = len(kept)
    statics = np.empty((n, model.N_STATIC))
    h_draws = np.empty((n, T + 1))
    lam_draws = np.empty((n, T))
    for i, xi in enumerate(kept):
        params, paths = model.constrain(xi, T, m_config)
        statics[i] = [params.mu_h, params.phi_h, params.sigma_h,
                      params.alpha_0, params.sigma_lambda,
                      params.kappa_alpha, params.kappa_sigma]
        h_draws[i] = paths.h
        lam_draws[i] = paths.lam

    accept_rate = accepts / max(1, n_retained_target)
    return statics, h_draws, lam_draws, accept_rate, divergences, step_size


def run_chains(y, model_config: ModelConfig, hmc_config: HmcConfig,
               init_statics: StaticParams = None):
    """Run n_chains independent HMC chains and pool the retained draws.

    init_statics, when given, seeds chain 0 (the remaining chains stay
    dispersed). Raises SamplerError if any chain spends its entire retained
    phase diverging.
    """
    yv = y.values if isinstance(y, TimeSeries) else np.asarray(y, dtype=float)
    if len(yv) == 0:
        raise SamplerError("cannot fit an empty series")
    jobs = [(yv, model_config, hmc_config, c,
             init_statics if c == 0 else None)
            for c in range(hmc_config.n_chains)]
    if hmc_config.threads > 1 and hmc_config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=hmc_config.threads) as pool:
            results = list(pool.map(_run_single_chain, jobs))
    else:
        results = [_run_single_chain(j) for j in jobs]

    n_retained = (hmc_config.n_iter - hmc_config.n_burnin
                  + hmc_config.thin - 1) // hmc_config.thin
    for c, res in enumerate(results):
        if res[4] >= hmc_config.n_iter - hmc_config.n_burnin:
            raise SamplerError(
                f"chain {c} diverged on every retained iteration "
                f"(step_size={res[5]:.3g}, accept_rate={res[3]:.3f})")

    draws = PosteriorDraws(
        statics=np.concatenate([r[0] for r in results]),
        h=np.concatenate([r[1] for r in results]),
        lam=np.concatenate([r[2] for r in results]),
        chain_id=np.concatenate([
            np.full(len(r[0]), c) for c, r in enumerate(results)]),
        accept_rate=np.array([r[3] for r in results]),
        divergences=np.array([r[4] for r in results]),
        step_size=np.array([r[5] for r in results]),
    )
    assert len(draws.statics) == hmc_config.n_chains * n_retained
    return draws, diagnostics(draws)


# ---------------------------------------------------------------------------
# diagnostics

def split_rhat(chains: np.ndarray) -> float:
    """Split potential-scale-reduction over a (n_chains, n_draws) array."""
    arr = np.asarray(chains, dtype=float)
    m, n = arr.shape
    half = n // 2
    split = np.vstack([arr[:, :half], arr[:, n - half:]])
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean()
    B_over_n = np.var(means, ddof=1)
    if W <= 1e-300:
        return 1.0 if B_over_n <= 1e-300 else math.inf
    var_hat = (half - 1) / half * W + B_over_n
    # sampling noise in B can pull the ratio slightly below 1; floor it
    return float(max(math.sqrt(var_hat / W), 1.0 - 1e-3))


def _autocovariance(x):
    n = len(x)
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    return acov


def ess(chains: np.ndarray) -> float:
    """Autocorrelation-based effective sample size (Geyer initial positive
    monotone sequence, combined across chains), capped at the draw count."""
    arr = np.asarray(chains, dtype=float)
    m, n = arr.shape
    total = m * n
    W = arr.var(axis=1, ddof=1).mean()
    if W <= 1e-300:
        return float(total)
    var_hat = (n - 1) / n * W
    if m > 1:
        var_hat += np.var(arr.mean(axis=1), ddof=1)
    acov = np.mean([_autocovariance(arr[c]) for c in range(m)], axis=0)
    rho = 1.0 - (W - acov) / var_hat
    rho[0] = 1.0
    tau = 0.0
    prev_pair = math.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)
        tau += pair
        prev_pair = pair
        k += 1
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(min(total, total / tau))


def diagnostics(draws: PosteriorDraws) -> Diagnostics:
    """Split-R-hat and ESS per static parameter, plus acceptance stats."""
    if draws.n_chains < 2:
        raise SamplerError("diagnostics need at least 2 chains")
    per_chain = len(draws.statics) // draws.n_chains
    if per_chain < 100:
        raise SamplerError("diagnostics need >= 100 retained draws per chain")
    ess_d, rhat_d = {}, {}
    for j, name in enumerate(draws.param_names):
        col = draws.by_chain(j)
        if name == "sigma_lambda":
            col = np.abs(col)   # sign-unidentified; report |sigma_lambda|
        rhat_d[name] = split_rhat(col)
        ess_d[name] = ess(col)
    return Diagnostics(
        ess=ess_d,
        rhat=rhat_d,
        mean_accept=float(np.mean(draws.accept_rate)),
        divergence_count=int(np.sum(draws.divergences)),
    )


# ---------------------------------------------------------------------------
# persistence

def _column_names(T):
    return (list(STATIC_NAMES)
            + [f"h_{t}" for t in range(T + 1)]
            + [f"lam_{t}" for t in range(1, T + 1)])


def save_draws(draws: PosteriorDraws, outdir, config_hash: str) -> list:
    """One delimited-text file per chain with a self-describing header,
    plus a compact .npz twin. Returns the list of files written."""
    os.makedirs(outdir, exist_ok=True)
    cols = _column_names(draws.T)
    written = []
    for c in np.unique(draws.chain_id):
        sel = draws.chain_id == c
        mat = np.hstack([draws.statics[sel], draws.h[sel], draws.lam[sel]])
        path = os.path.join(outdir, f"chain_{int(c):02d}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# skewsv draws v1\n")
            fh.write(f"# config_hash: {config_hash}\n")
            fh.write(f"# T: {draws.T}\n")
            fh.write(f"# chain: {int(c)}\n")
            fh.write(f"# accept_rate: {draws.accept_rate[int(c)]:.6f}\n")
            fh.write(f"# divergences: {int(draws.divergences[int(c)])}\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, mat, delimiter=",", fmt="%.17g")
        np.savez_compressed(path[:-4] + ".npz", draws=mat,
                            columns=np.array(cols))
        written.extend([path, path[:-4] + ".npz"])
    return written


def load_draws(outdir):
    """Read chain files back; all chains must share one config hash."""
    files = sorted(f for f in os.listdir(outdir)
                   if re.fullmatch(r"chain_\d+\.csv", f))
    if not files:
        raise SamplerError(f"no chain files in {outdir}")
    statics, hs, lams, ids = [], [], [], []
    hashes = set()
    T = None
    for f in files:
        path = os.path.join(outdir, f)
        meta = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
        hashes.add(meta.get("config_hash", ""))
        T = int(meta["T"])
        mat = np.loadtxt(path, delimiter=",", skiprows=len(meta) + 1,
                         ndmin=2)
        n_static = len(STATIC_NAMES)
        statics.append(mat[:, :n_static])
        hs.append(mat[:, n_static:n_static + T + 1])
        lams.append(mat[:, n_static + T + 1:])
        ids.append(np.full(len(mat), int(meta["chain"])))
    if len(hashes) != 1:
        raise SamplerError(f"mixed config hashes in {outdir}: {hashes}")
    draws = PosteriorDraws(
        statics=np.concatenate(statics),
        h=np.concatenate(hs),
        lam=np.concatenate(lams),
        chain_id=np.concatenate(ids),
        accept_rate=np.zeros(len(files)),
        divergences=np.zeros(len(files), dtype=int),
        step_size=np.zeros(len(files)),
    )
    return draws, hashes.pop()
