import math

import numpy as np
import pytest
from scipy import special

from shelab.correlation import GaussianKernel, Riesz, WhiteNoise
from shelab.moments import (H_growth_rate, H_renewal, H_series, RhoParams, SeriesTruncationError,
                            growth_rate_bound, h_closed_form, h_sequence, log_H_series,
                            mittag_leffler, mittag_leffler_half, moment_upper_bound,
                            fit_mom_alpha_form, pam_oracle_refinement, pam_second_moment_oracle,
                            product_integration_weights, two_point_bound_check)
from shelab._validation import DomainError


def test_mittag_leffler_half_matches_series():
    for z in (0.0, 0.3, 1.7, 5.0):
        assert mittag_leffler(0.5, z) == pytest.approx(float(mittag_leffler_half(z)), rel=1e-12)
    assert mittag_leffler(1.0, 2.0) == pytest.approx(math.exp(2.0), rel=1e-13)


def test_h_sequence_matches_closed_form_riesz():
    m = Riesz(0.5, 1)
    num = h_sequence(m, 0.7, 6, n_steps=800)
    exact = h_closed_form(m, 0.7, np.arange(7))
    assert np.allclose(num, exact, rtol=1e-4)


def test_h_sequence_error_estimate_shrinks():
    vals, err = h_sequence(GaussianKernel(1.0, 1), 1.0, 4, n_steps=400, full_output=True)
    assert vals[0] == 1.0 and np.all(err[1:] < 1e-4 * vals[1:])


def test_white_H_is_mittag_leffler():
    # k(t) = (2 pi t)^(-1/2) gives H(t; gamma) = E_{1/2}(gamma sqrt(t/2))
    for t, g in ((0.5, 1.0), (2.0, 3.0), (1.0, 10.0)):
        assert H_series(WhiteNoise(1), t, g) == pytest.approx(
            float(mittag_leffler_half(g * math.sqrt(t / 2))), rel=1e-11)


def test_H_series_agrees_with_renewal_for_smooth_kernel():
    m = GaussianKernel(1.0, 1)
    _, H = H_renewal(m, 1.0, 2.0, n_steps=800)
    assert H_series(m, 1.0, 2.0) == pytest.approx(H[-1], rel=1e-4)


def test_log_H_survives_overflow():
    lh = log_H_series(WhiteNoise(1), 100.0, 50.0)
    assert math.isfinite(lh) and lh > 709
    assert H_series(WhiteNoise(1), 100.0, 50.0) == math.inf


def test_H_series_truncation_raises():
    with pytest.raises(SeriesTruncationError):
        log_H_series(WhiteNoise(1), 10.0, 50.0, n_max=5)


def test_growth_rates_white():
    assert growth_rate_bound(WhiteNoise(1), 2.0) == pytest.approx(1.0, rel=1e-10)
    # the exact rate of H is twice the crude Upsilon bound at the same gamma
    assert H_growth_rate(WhiteNoise(1), 2.0) == pytest.approx(2 * growth_rate_bound(WhiteNoise(1), 2.0), rel=1e-10)
    lh = [log_H_series(WhiteNoise(1), t, 2.0) for t in (40.0, 80.0)]
    assert (lh[1] - lh[0]) / 40.0 == pytest.approx(H_growth_rate(WhiteNoise(1), 2.0), rel=1e-3)


def test_growth_rate_riesz_against_closed_upsilon():
    m = Riesz(0.5, 1)
    b = growth_rate_bound(m, 3.0)
    from shelab.correlation import upsilon_closed_form
    assert upsilon_closed_form(m, b) == pytest.approx(1 / 3.0, rel=1e-10)


def test_product_integration_weights_integrate_kernel():
    n, h, a = 64, 1.0 / 64, 0.5
    W = product_integration_weights(n, h, a)
    # sum of weights against g = 1 gives int_0^t (t-s)^(-a) ds
    t = h * np.arange(n + 1)
    assert np.allclose(W.sum(axis=1)[1:], t[1:] ** (1 - a) / (1 - a), rtol=1e-12)


def test_white_pam_oracle_closed_form():
    lam, T = 1.5, 1.0
    sol = pam_second_moment_oracle(WhiteNoise(1), lam, T)
    z = lam ** 2 * np.sqrt(sol.times) / 2
    exact = np.exp(z * z) * special.erfc(-z)
    err = np.abs(sol.values - exact)
    # the sqrt(t) start is only first-order resolved; the error stays below the estimate
    assert err.max() <= sol.error_estimate < 1e-4
    assert err[-1] < 2e-6 * exact[-1]


def test_field_oracle_converges():
    vals, extrap = pam_oracle_refinement(Riesz(0.5, 1), 1.0, 0.5)
    assert abs(vals[-1] - extrap) < 1e-3 * extrap
    assert abs(vals[-1] - vals[-2]) < abs(vals[-2] - vals[-3])


def test_two_point_bound_holds_for_white_pam():
    out = two_point_bound_check(WhiteNoise(1), 1.0, 1.0)
    assert out["all_hold"] and out["intineq_holds"]


def test_moment_bound_shape():
    rho = RhoParams(1.0, 0.5)
    b = moment_upper_bound(2, rho, 1.0, 0.1, WhiteNoise(1))
    assert b.gamma_p == 64.0
    assert b.bound == pytest.approx(math.sqrt(2) * (0.5 + math.sqrt(2)) * math.sqrt(H_series(WhiteNoise(1), 0.1, 64.0)))
    assert moment_upper_bound(4, rho, 1.0, 0.1, WhiteNoise(1)).bound > b.bound
    with pytest.raises(DomainError):
        moment_upper_bound(1.5, rho, 1.0, 0.1, WhiteNoise(1))


def test_moment_bound_is_exponential_in_p_power_t():
    _, _, r2 = fit_mom_alpha_form(WhiteNoise(1), RhoParams(0.1), 1.0, [2, 4, 8], [1.0, 2.0, 4.0])
    assert r2 > 0.99
