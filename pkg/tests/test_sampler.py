import math

import numpy as np
import pytest

from skewsv.model import StaticParams, default_config, simulate
from skewsv.sampler import (
    Diagnostics,
    HmcConfig,
    PosteriorDraws,
    SamplerError,
    diagnostics,
    ess,
    hmc_step,
    leapfrog,
    load_draws,
    run_chains,
    rwmh_step,
    save_draws,
    split_rhat,
)


def _gauss_lp(x):
    return -0.5 * float(np.sum(np.asarray(x) ** 2))


def _gauss_grad(x):
    return -np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# leapfrog

def test_leapfrog_hand_example():
    # H = theta^2/2 + p^2/2, start (1, 0), eps 0.1, one step, by hand:
    # p -> -0.05; theta -> 0.995; p -> -0.05 + 0.05*(-0.995) = -0.09975
    q, p, div = leapfrog(np.array([1.0]), np.array([0.0]), 0.1, 1, _gauss_grad)
    assert not div
    assert q[0] == pytest.approx(0.995, abs=1e-15)
    assert p[0] == pytest.approx(-0.09975, abs=1e-15)


def test_leapfrog_energy_conservation():
    q0, p0 = np.array([1.0]), np.array([0.5])
    h0 = 0.5 * (q0[0] ** 2 + p0[0] ** 2)
    q, p, div = leapfrog(q0, p0, 0.01, 1000, _gauss_grad)
    assert not div
    h1 = 0.5 * (q[0] ** 2 + p[0] ** 2)
    assert abs(h1 - h0) < 1e-4


def test_leapfrog_reversibility():
    rng = np.random.default_rng(0)
    q0 = rng.standard_normal(3)
    p0 = rng.standard_normal(3)
    q1, p1, _ = leapfrog(q0, p0, 0.15, 30, _gauss_grad)
    q2, p2, _ = leapfrog(q1, -p1, 0.15, 30, _gauss_grad)
    np.testing.assert_allclose(q2, q0, rtol=0, atol=1e-8)
    np.testing.assert_allclose(-p2, p0, rtol=0, atol=1e-8)


def test_leapfrog_volume_preservation():
    # Jacobian of one step on a correlated 2-d Gaussian, by finite
    # differences of the (q, p) -> (q', p') map
    prec = np.array([[2.0, 0.6], [0.6, 1.0]])

    def grad(x):
        return -prec @ x

    def step(v):
        q, p, _ = leapfrog(v[:2], v[2:], 0.2, 1, grad)
        return np.concatenate([q, p])

    v0 = np.array([0.3, -0.5, 0.7, 0.1])
    h = 1e-6
    J = np.empty((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        J[:, i] = (step(v0 + e) - step(v0 - e)) / (2 * h)
    assert abs(np.linalg.det(J) - 1.0) < 1e-6


def test_leapfrog_nonfinite_gradient_flags_divergence():
    def bad_grad(x):
        return np.full_like(x, np.nan)

    q, p, div = leapfrog(np.array([1.0]), np.array([0.0]), 0.1, 5, bad_grad)
    assert div


def test_leapfrog_mass_matrix_scales_drift():
    # with mass m the drift is eps * p / m
    q, p, _ = leapfrog(np.array([0.0]), np.array([1.0]), 0.1, 1,
                       lambda x: np.zeros_like(x), mass_diag=np.array([4.0]))
    assert q[0] == pytest.approx(0.025, abs=1e-15)


# ---------------------------------------------------------------------------
# hmc_step

def test_hmc_zero_steps_accepts_in_place():
    rng = np.random.default_rng(1)
    q0 = np.array([0.7, -0.2])
    q, lp, accepted, e_err, a_prob = hmc_step(
        q0, _gauss_lp, _gauss_grad, 0.1, 0, rng)
    np.testing.assert_array_equal(q, q0)
    assert accepted
    assert e_err == 0.0
    assert a_prob == 1.0


def test_hmc_near_exact_integration_accepts():
    # exact Hamiltonian flow conserves energy and is always accepted; a
    # tiny leapfrog step approximates it to O(eps^2)
    rng = np.random.default_rng(2)
    q = np.array([1.0, -1.0])
    probs = []
    for _ in range(50):
        q, _, _, _, a_prob = hmc_step(q, _gauss_lp, _gauss_grad, 1e-3, 1, rng)
        probs.append(a_prob)
    assert min(probs) > 1.0 - 1e-4


def test_hmc_known_two_dim_target():
    rng = np.random.default_rng(3)
    q = np.zeros(2)
    lp = _gauss_lp(q)
    draws = []
    for it in range(5000):
        # jittered trajectory length avoids near-periodic orbits on the
        # harmonic target
        n_steps = int(rng.integers(5, 12))
        q, lp, _, _, _ = hmc_step(q, _gauss_lp, _gauss_grad, 0.4, n_steps,
                                  rng, lp_current=lp)
        draws.append(q.copy())
    arr = np.asarray(draws[500:])
    assert np.all(np.abs(arr.mean(axis=0)) < 0.05)
    cov = np.cov(arr.T)
    assert abs(cov[0, 0] - 1.0) < 0.1
    assert abs(cov[1, 1] - 1.0) < 0.1
    assert abs(cov[0, 1]) < 0.1


def test_hmc_divergence_auto_rejects():
    # a huge step on a narrow target explodes the energy
    def narrow_lp(x):
        return -0.5e8 * float(np.sum(x ** 2))

    def narrow_grad(x):
        return -1e8 * np.asarray(x)

    rng = np.random.default_rng(4)
    q0 = np.array([1.0])
    q, lp, accepted, e_err, a_prob = hmc_step(
        q0, narrow_lp, narrow_grad, 1.0, 10, rng)
    assert not accepted
    assert a_prob == 0.0
    np.testing.assert_array_equal(q, q0)
    assert not math.isfinite(e_err) or abs(e_err) > 1000


def test_hmc_frozen_coordinates_never_move():
    # contract: frozen coordinates have zero gradient (as model.frozen_mask
    # guarantees) and zeroed momentum, so they stay put exactly
    def lp(x):
        return -0.5 * x[0] ** 2

    def grad(x):
        return np.array([-x[0], 0.0])

    rng = np.random.default_rng(5)
    frozen = np.array([False, True])
    q = np.array([0.5, 3.25])
    for _ in range(50):
        q, _, _, _, _ = hmc_step(q, lp, grad, 0.3, 5, rng, frozen=frozen)
        assert q[1] == 3.25


# ---------------------------------------------------------------------------
# rwmh_step

def test_rwmh_equal_density_always_accepts():
    rng = np.random.default_rng(6)
    q = np.array([0.0])
    for _ in range(100):
        q, _, accepted = rwmh_step(q, 1.0, lambda x: 0.0, rng)
        assert accepted


def test_rwmh_half_density_accepts_half_the_time():
    # lp = log 1 on x<0, log 0.5 on x>=0; from just below zero the
    # acceptance rate among sign-crossing proposals must be ~0.5
    def lp(x):
        return math.log(0.5) if x[0] >= 0 else 0.0

    rng = np.random.default_rng(7)
    q0 = np.array([-1e-9])
    accepted_crossings = 0
    for _ in range(40000):
        q, _, acc = rwmh_step(q0, 1.0, lp, rng)
        if acc and q[0] >= 0:
            accepted_crossings += 1
    # half of the proposals cross the boundary; those are accepted with
    # probability 0.5, so accepted crossings happen at rate 0.25
    assert accepted_crossings / 40000 == pytest.approx(0.25, abs=0.015)


def test_rwmh_known_normal_target():
    rng = np.random.default_rng(8)
    q = np.array([0.0])
    lp = _gauss_lp(q)
    draws = np.empty(100_000)
    for it in range(100_000):
        q, lp, _ = rwmh_step(q, 2.4, _gauss_lp, rng, lp_current=lp)
        draws[it] = q[0]
    tail = draws[5000:]
    assert abs(tail.mean()) < 0.03
    assert abs(tail.var() - 1.0) < 0.05


def test_rwmh_rejects_bad_proposal_sd():
    with pytest.raises(ValueError):
        rwmh_step(np.zeros(1), 0.0, _gauss_lp, np.random.default_rng(0))


def test_rwmh_detailed_balance_smoke():
    # discretized 1-d double-exponential target: transition counts between
    # bins must be symmetric under stationarity (pi_i P_ij = pi_j P_ji and
    # the chain counts both sides of each edge equally)
    def lp(x):
        return -abs(float(x[0]))

    rng = np.random.default_rng(9)
    edges = np.linspace(-2.0, 2.0, 9)
    counts = np.zeros((10, 10))
    q = np.array([0.0])
    cur_lp = lp(q)
    prev_bin = int(np.digitize(q[0], edges))
    for _ in range(200_000):
        q, cur_lp, _ = rwmh_step(q, 1.0, lp, rng, lp_current=cur_lp)
        b = int(np.digitize(q[0], edges))
        counts[prev_bin, b] += 1
        prev_bin = b
    for i in range(10):
        for j in range(i + 1, 10):
            n_ij, n_ji = counts[i, j], counts[j, i]
            if n_ij + n_ji < 100:
                continue
            z = abs(n_ij - n_ji) / math.sqrt(n_ij + n_ji)
            assert z < 5.0, f"balance violated between bins {i}, {j}: z={z:.1f}"


def test_acceptance_rate_monotone_in_step_size():
    # halving the step size never decreases mean acceptance (within MC
    # error over 10 seeds) on the Gaussian fixture
    def mean_accept(eps, seed):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(5)
        probs = []
        for _ in range(200):
            q, _, _, _, a = hmc_step(q, _gauss_lp, _gauss_grad, eps, 8, rng)
            probs.append(a)
        return float(np.mean(probs))

    for eps in (1.6, 0.8, 0.4):
        big = np.mean([mean_accept(eps, s) for s in range(10)])
        small = np.mean([mean_accept(eps / 2, s) for s in range(10)])
        assert small >= big - 0.02


# ---------------------------------------------------------------------------
# run_chains on the vanilla fixture

@pytest.fixture(scope="module")
def vanilla_fit():
    truth = StaticParams(mu_h=1.0, phi_h=0.9, sigma_h=0.3,
                         alpha_0=0.0, sigma_lambda=0.0)
    series, _ = simulate(truth, 200, np.random.default_rng(77),
                         skew_mode="none")
    cfg = default_config(skew_mode="none")
    hmc = HmcConfig(n_iter=1600, n_burnin=800, leapfrog_steps=16,
                    n_chains=2, seed=5)
    draws, diag = run_chains(series, cfg, hmc)
    return series, cfg, hmc, draws, diag


def test_run_chains_converges_on_vanilla_fixture(vanilla_fit):
    _, _, _, draws, diag = vanilla_fit
    for name in ("mu_h", "phi_h", "sigma_h"):
        assert diag.rhat[name] < 1.05, f"{name}: rhat={diag.rhat[name]:.3f}"
    assert diag.mean_accept > 0.5
    assert draws.statics.shape == (1600, 7)


def test_run_chains_deterministic(vanilla_fit):
    series, cfg, hmc, draws, _ = vanilla_fit
    draws2, _ = run_chains(series, cfg, hmc)
    np.testing.assert_array_equal(draws.statics, draws2.statics)
    np.testing.assert_array_equal(draws.h, draws2.h)


def test_run_chains_rejects_empty_series():
    with pytest.raises(SamplerError):
        run_chains(np.empty(0), default_config(), HmcConfig(
            n_iter=20, n_burnin=10))


def test_hmc_config_validation():
    with pytest.raises(ValueError):
        HmcConfig(n_iter=10, n_burnin=20)
    with pytest.raises(ValueError):
        HmcConfig(n_iter=10, n_burnin=5, initial_step_size=0.0)
    with pytest.raises(ValueError):
        HmcConfig(n_iter=10, n_burnin=5, n_chains=0)


# ---------------------------------------------------------------------------
# diagnostics

def _fake_draws(cols, chain_id):
    n = len(chain_id)
    return PosteriorDraws(
        statics=cols, h=np.zeros((n, 2)), lam=np.zeros((n, 1)),
        chain_id=np.asarray(chain_id),
        accept_rate=np.array([0.8, 0.8]),
        divergences=np.array([0, 0]),
        step_size=np.array([0.1, 0.1]),
    )


def test_diagnostics_iid_oracle():
    rng = np.random.default_rng(10)
    n = 500
    statics = rng.standard_normal((2 * n, 7))
    draws = _fake_draws(statics, np.repeat([0, 1], n))
    d = diagnostics(draws)
    for name, r in d.rhat.items():
        assert 0.99 <= r <= 1.01, f"{name}: {r}"
    for name, e in d.ess.items():
        assert e >= 0.8 * 2 * n, f"{name}: {e}"


def test_split_rhat_detects_non_mixing():
    chains = np.vstack([np.zeros(200), np.ones(200)])
    assert split_rhat(chains) > 1.5


def test_ess_capped_for_anticorrelated_chain():
    x = np.array([(-1.0) ** i for i in range(400)])
    chains = np.vstack([x, -x])
    assert ess(chains) <= 800.0


def test_split_rhat_near_one_for_iid():
    rng = np.random.default_rng(11)
    chains = rng.standard_normal((4, 500))
    r = split_rhat(chains)
    assert 1.0 - 1e-3 <= r <= 1.01


def test_diagnostics_requires_enough_draws():
    rng = np.random.default_rng(12)
    with pytest.raises(SamplerError):
        diagnostics(_fake_draws(rng.standard_normal((60, 7)),
                                np.repeat([0, 1], 30)))
    one_chain = PosteriorDraws(
        statics=rng.standard_normal((300, 7)), h=np.zeros((300, 2)),
        lam=np.zeros((300, 1)), chain_id=np.zeros(300),
        accept_rate=np.array([0.8]), divergences=np.array([0]),
        step_size=np.array([0.1]))
    with pytest.raises(SamplerError):
        diagnostics(one_chain)


# ---------------------------------------------------------------------------
# persistence

def test_save_load_round_trip(vanilla_fit, tmp_path):
    _, _, _, draws, _ = vanilla_fit
    save_draws(draws, tmp_path, "deadbeefcafe0123")
    loaded, h = load_draws(tmp_path)
    assert h == "deadbeefcafe0123"
    np.testing.assert_array_equal(loaded.statics, draws.statics)
    np.testing.assert_array_equal(loaded.h, draws.h)
    np.testing.assert_array_equal(loaded.lam, draws.lam)
    np.testing.assert_array_equal(loaded.chain_id, draws.chain_id)


def test_load_rejects_mixed_config_hashes(vanilla_fit, tmp_path):
    _, _, _, draws, _ = vanilla_fit
    save_draws(draws, tmp_path, "hash_a")
    # rewrite one chain under a different hash
    p = tmp_path / "chain_01.csv"
    text = p.read_text().replace("hash_a", "hash_b")
    p.write_text(text)
    with pytest.raises(SamplerError, match="mixed config hashes"):
        load_draws(tmp_path)


def test_load_empty_dir_errors(tmp_path):
    with pytest.raises(SamplerError):
        load_draws(tmp_path)
