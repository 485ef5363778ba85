import math

import numpy as np
import pytest
from scipy.integrate import quad

from skewsv import skew_normal as sn
from skewsv.skew_normal import (
    InvalidParams,
    SkewNormalParams,
    delta,
    gamma_of_lambda,
    grad_log_pdf_standard,
    inverse_mills,
    log_pdf,
    log_pdf_standard,
    moments,
    sample,
)


def test_delta_examples():
    assert delta(0.0) == 0.0
    assert delta(1.0) == pytest.approx(0.70710678, abs=1e-8)
    # -2/sqrt(5), worked by hand
    assert delta(-2.0) == pytest.approx(-0.89442719, abs=1e-8)


def test_delta_odd_monotone_bounded():
    lams = np.linspace(-50, 50, 401)
    d = delta(lams)
    assert np.all(np.abs(d) < 1.0)
    assert np.all(np.diff(d) > 0)
    np.testing.assert_allclose(delta(-lams), -d, rtol=0, atol=1e-15)


def test_log_pdf_standard_at_origin():
    assert log_pdf_standard(0.0, 0.0) == pytest.approx(-0.91893853, abs=1e-8)
    # Phi(0) = 1/2 regardless of lambda
    assert log_pdf_standard(0.0, 7.3) == pytest.approx(-0.91893853, abs=1e-8)


def test_log_pdf_standard_oracle_value():
    # log(2 phi(1) Phi(2)) via erfc-based normal CDF, independent of log_ndtr
    phi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
    Phi2 = 0.5 * math.erfc(-2 / math.sqrt(2))
    expected = math.log(2 * phi1 * Phi2)
    assert log_pdf_standard(1.0, 2.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-0.748805, abs=1e-6)


def test_log_pdf_standard_deep_tail_no_underflow():
    # lambda*z = -40 must stay finite and match the asymptotic log-CDF
    v = log_pdf_standard(4.0, -10.0)
    assert math.isfinite(v)
    assert v < -800  # dominated by log Phi(-40) ~ -804


def test_log_pdf_location_scale():
    p = SkewNormalParams(xi=1.0, omega=2.0, lam=1.0)
    assert log_pdf(2.0, p) == pytest.approx(
        log_pdf_standard(0.5, 1.0) - math.log(2.0), abs=1e-14)
    # at the center with lam=0 the density is the scaled normal peak
    for omega in (0.5, 1.0, 3.7):
        p0 = SkewNormalParams(xi=0.3, omega=omega, lam=0.0)
        assert log_pdf(0.3, p0) == pytest.approx(
            -0.91893853 - math.log(omega), abs=1e-7)
    p_neg = SkewNormalParams(xi=0.0, omega=1.0, lam=-3.0)
    assert log_pdf(0.0, p_neg) == pytest.approx(-0.91893853, abs=1e-7)


def test_invalid_params_rejected():
    with pytest.raises(InvalidParams):
        SkewNormalParams(0.0, 0.0, 1.0)
    with pytest.raises(InvalidParams):
        SkewNormalParams(0.0, -1.0, 1.0)
    with pytest.raises(InvalidParams):
        SkewNormalParams(math.nan, 1.0, 1.0)
    with pytest.raises(InvalidParams):
        SkewNormalParams(0.0, 1.0, math.inf)


def test_grad_examples():
    assert grad_log_pdf_standard(0.0, 0.0) == (0.0, 0.0)
    dz, dlam = grad_log_pdf_standard(1.0, 0.0)
    assert dz == pytest.approx(-1.0, abs=1e-12)
    assert dlam == pytest.approx(0.79788456, abs=1e-8)  # r(0) = 2 phi(0)


@pytest.mark.parametrize("z,lam", [
    (0.3, 1.2), (-2.0, 4.0), (5.0, -6.0), (1.5, 0.0), (-0.7, -0.3),
    (4.0, -9.0),
])
def test_grad_matches_finite_differences(z, lam):
    h = 1e-5
    dz, dlam = grad_log_pdf_standard(z, lam)
    fd_z = (log_pdf_standard(z + h, lam) - log_pdf_standard(z - h, lam)) / (2 * h)
    fd_l = (log_pdf_standard(z, lam + h) - log_pdf_standard(z, lam - h)) / (2 * h)
    assert dz == pytest.approx(fd_z, rel=1e-6, abs=1e-9)
    assert dlam == pytest.approx(fd_l, rel=1e-6, abs=1e-9)


def test_inverse_mills_tail_finite_and_continuous():
    assert math.isfinite(inverse_mills(-500.0))
    assert inverse_mills(-500.0) == pytest.approx(500.0, rel=1e-4)
    # series and direct branches agree at the switch point
    x = 30.0
    series = x + 1.0 / x - 2.0 / x ** 3
    assert inverse_mills(-30.0) == pytest.approx(series, rel=1e-6)
    assert inverse_mills(-29.9999999) == pytest.approx(series, rel=1e-6)


def test_sample_gaussian_case():
    rng = np.random.default_rng(123)
    x = sample(0.0, rng, size=1_000_000)
    assert abs(x.mean()) < 3e-3
    assert abs(x.var() - 1.0) < 0.01


def test_sample_matches_analytic_mean():
    rng = np.random.default_rng(7)
    n = 1_000_000
    x = sample(5.0, rng, size=n)
    m = moments(SkewNormalParams(0.0, 1.0, 5.0))
    se = math.sqrt(m.variance / n)
    assert abs(x.mean() - m.mean) < 3 * se


def test_sample_deterministic():
    a = sample(1.5, np.random.default_rng(99), size=10)
    b = sample(1.5, np.random.default_rng(99), size=10)
    np.testing.assert_array_equal(a, b)


def test_moments_gaussian_and_half_normal_limits():
    m0 = moments(SkewNormalParams(0.0, 1.0, 0.0))
    assert (m0.mean, m0.variance, m0.skewness_gamma) == (0.0, 1.0, 0.0)
    m_inf = moments(SkewNormalParams(0.0, 1.0, 1e6))
    assert m_inf.mean == pytest.approx(math.sqrt(2 / math.pi), abs=1e-6)
    assert m_inf.variance == pytest.approx(1 - 2 / math.pi, abs=1e-6)
    assert abs(m_inf.skewness_gamma) < sn.SKEWNESS_BOUND


def test_gamma_of_lambda_one_matches_numerical_integration():
    # standardized third moment of SN(1) by quadrature
    pdf = lambda z: math.exp(log_pdf_standard(z, 1.0))
    mean = quad(lambda z: z * pdf(z), -12, 12)[0]
    var = quad(lambda z: (z - mean) ** 2 * pdf(z), -12, 12)[0]
    third = quad(lambda z: (z - mean) ** 3 * pdf(z), -12, 12)[0]
    gamma_ref = third / var ** 1.5
    assert gamma_of_lambda(1.0) == pytest.approx(gamma_ref, abs=1e-8)
    assert gamma_of_lambda(1.0) == pytest.approx(0.1369, abs=1e-3)


@pytest.mark.parametrize("lam", [-5.0, -1.0, 0.0, 1.0, 5.0])
def test_density_normalizes(lam):
    total, err = quad(lambda z: math.exp(log_pdf_standard(z, lam)),
                      -12, 12, limit=200)
    assert abs(total - 1.0) < 1e-8


def test_reflection_symmetry():
    zs = np.linspace(-6, 6, 41)
    for lam in (-4.0, -0.5, 0.0, 1.3, 7.0):
        np.testing.assert_allclose(
            log_pdf_standard(zs, lam), log_pdf_standard(-zs, -lam),
            rtol=0, atol=1e-12)


@pytest.mark.parametrize("lam", [-3.0, -1.0, 0.0, 0.5, 2.0, 8.0])
def test_moments_agree_with_monte_carlo(lam):
    rng = np.random.default_rng(2024)
    n = 1_000_000
    x = sample(lam, rng, size=n)
    m = moments(SkewNormalParams(0.0, 1.0, lam))
    se_mean = math.sqrt(m.variance / n)
    assert abs(x.mean() - m.mean) < 4 * se_mean
    # variance and skewness with rough standard errors
    se_var = m.variance * math.sqrt(2.0 / n) * 2
    assert abs(x.var() - m.variance) < 4 * se_var
    g = ((x - x.mean()) ** 3).mean() / x.var() ** 1.5
    assert abs(g - m.skewness_gamma) < 4 * math.sqrt(15.0 / n) * 3


def test_gaussian_case_is_exact():
    # lambda = 0 must collapse to the normal, not approximately
    zs = np.linspace(-5, 5, 21)
    expected = -0.5 * (math.log(2 * math.pi) + zs ** 2)
    np.testing.assert_array_equal(log_pdf_standard(zs, 0.0), expected)
    m = moments(SkewNormalParams(0.0, 1.0, 0.0))
    assert m.skewness_gamma == 0.0


def test_skewness_bound():
    lams = np.array([-1e8, -100.0, -5.0, 0.0, 5.0, 100.0, 1e8])
    g = gamma_of_lambda(lams)
    assert np.all(np.abs(g) < sn.SKEWNESS_BOUND)
    assert gamma_of_lambda(1e12) == pytest.approx(sn.SKEWNESS_BOUND, abs=1e-6)
