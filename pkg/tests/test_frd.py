import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from dglab import frd
from dglab.errors import ChecksumError, DomainError, InvalidParameter, ZeroModeDivergence
from dglab.lattice import (
    TorusGeometry,
    dual_indices,
    multiplier_lambda_J,
    nearest_neighbour,
    standard_range_rho,
)


@pytest.fixture(scope="module")
def profile():
    return frd.build_bump_profile()


def test_kappa_hat_matches_direct_quadrature(profile):
    for x in (0.0, 1.0, 5.0, 20.0, 50.0):
        ref = quad(lambda s: float(frd.bump(np.array(s))) * math.cos(x * s), -0.5, 0.5,
                   limit=400, epsabs=1e-15)[0]
        assert profile.kappa_hat_eval(x) == pytest.approx(ref, rel=1e-9, abs=1e-15)


def test_kappa_hat_stretched_exponential_decay(profile):
    xs = np.linspace(5, 50, 2000)
    assert np.max(np.abs(profile.kappa_hat_eval(xs)) * np.exp(np.sqrt(xs))) < 2.0


def test_gamma_independent_check(profile):
    assert profile.gamma == pytest.approx(profile.gamma_check, rel=1e-12)


@pytest.mark.parametrize("lam", [0.1, 0.5, 1.0, 2.0, 3.0])
def test_P_t_constant_below_one(profile, lam):
    assert frd.P_t(profile, 0.5, lam) == pytest.approx(2 * profile.gamma, rel=1e-12)


def test_P_t_envelope_extrapolates(profile):
    lams = np.array([0.05, 0.1, 0.5, 1.0, 2.0, 3.0])
    c = 0.5
    fit_t = np.geomspace(1, 32, 40)
    test_t = np.geomspace(32, 128, 30)

    def weighted(ts):
        P = np.array([frd.P_t(profile, ts, lam) for lam in lams])
        x = (lams[:, None] * ts[None, :] ** 2) ** 0.25
        return P, np.abs(P) * np.exp(c * x)

    P_fit, w_fit = weighted(fit_t)
    P_test, w_test = weighted(test_t)
    assert P_fit.min() >= 0 and P_test.min() >= 0
    assert w_test.max() <= w_fit.max()


@pytest.mark.parametrize("lam", [0.0, -1.0, 3.5])
def test_P_t_domain(profile, lam):
    with pytest.raises(DomainError):
        frd.P_t(profile, 1.0, lam)


def test_base_kernel_is_rescaled_P(profile):
    J = standard_range_rho(2)
    rho = 2
    p = np.array([[0.3, 0.1], [1.0, 2.0], [0.05, 0.0]])
    t = np.array([1.0, 3.0, 6.0, 9.0, 20.0, 40.0])
    m2 = 0.1
    tab = frd.mode_kernel(profile, J, p, 0.0, m2, t,
                          numerics=frd.FRDNumerics(decomposition="base"))
    Lam = multiplier_lambda_J(J, p[:, 0], p[:, 1]) + m2
    ref = np.array([[tt / rho**2 * frd.P_t(profile, tt / rho, lam) if tt > rho else 0.0
                     for tt in t] for lam in Lam])
    assert np.allclose(tab.values, ref, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("rho", [1, 2])
def test_series_kernel_vanishes_below_five_rho(profile, rho):
    J = standard_range_rho(rho)
    t = np.array([0.5, 3.0 * rho, 5.0 * rho, 6.0 * rho + 1])
    tab = frd.mode_kernel(profile, J, [[0.4, 0.2]], 0.02, 0.1, t)
    assert np.all(tab.values[:, :3] == 0.0)
    assert tab.values[0, 3] > 0


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
       st.floats(-0.5, 0.5), st.floats(0.0, 1.0))
def test_kernel_nonnegative(p1, p2, s_frac, m2):
    J = nearest_neighbour()
    prof = frd.build_bump_profile()
    t = np.array([6.0, 8.0, 12.0, 20.0, 40.0])
    tab = frd.mode_kernel(prof, J, [[p1, p2]], s_frac * J.theta, m2, t)
    assert np.all(tab.values >= -1e-12)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
       st.floats(-0.9, 0.9), st.floats(0.0, 1.0), st.sampled_from([1, 2]))
def test_C_hat_positive(p1, p2, s_frac, m2, rho):
    J = standard_range_rho(rho)
    if p1 == 0 and p2 == 0 and m2 == 0:
        return
    assert frd.covariance_C_hat(J, s_frac * J.theta, m2, p1, p2) > 0


@pytest.mark.parametrize("s,theta", [(0.0, 0.25), (0.02, 0.25), (0.1, 0.125)])
def test_series_order(s, theta):
    tol = 1e-10
    lmax = frd.series_order(s, theta, tol)
    if s:
        assert (abs(s) / theta) ** (2 * lmax) < tol
        assert (abs(s) / theta) ** (2 * (lmax - 1)) >= tol


@pytest.mark.parametrize("s", [0.0, 0.02])
def test_sum_identity_small_torus(profile, s):
    J = nearest_neighbour()
    geo = TorusGeometry(8, 2)
    m2 = 0.5
    total = frd.scale_covariance(0, J, s, m2, geo, profile, position_samples=False).hat_values
    last, t_N = frd.last_covariance_and_zero_mode(2, J, s, m2, geo, profile)
    total = total + last.hat_values
    k = dual_indices(geo.side)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    exact = frd.covariance_C_hat(J, s, m2, 2 * np.pi * k1 / geo.side, 2 * np.pi * k2 / geo.side)
    nz = (k1 != 0) | (k2 != 0)
    assert np.max(np.abs(total - exact)[nz] / exact[nz]) < 1e-4
    assert last.hat_values[0, 0] == 0.0
    assert 0 < t_N < 1 / m2


def test_zero_mode_weight_cross_check(profile):
    J = nearest_neighbour()
    geo = TorusGeometry(8, 3)
    _, t_N = frd.last_covariance_and_zero_mode(3, J, 0.0, 0.5, geo, profile,
                                               frd.FRDNumerics(h=1 / 64))
    ref = frd.zero_mode_t_N_simpson(profile, J, 0.0, 0.5, 8, 3)
    assert t_N == pytest.approx(ref, rel=1e-6)


def test_zero_mode_needs_mass(profile):
    with pytest.raises(ZeroModeDivergence):
        frd.last_covariance_and_zero_mode(2, nearest_neighbour(), 0.0, 0.0,
                                          TorusGeometry(4, 2), profile)


def test_finite_range_one_scale(profile):
    cov = frd.scale_covariance(2, nearest_neighbour(), 0.0, 0.0, TorusGeometry(4, 4), profile)
    assert cov.origin_value() > 0
    assert frd.range_violation(cov) < 1e-8


def test_fractional_single_step_is_scale(profile):
    J = nearest_neighbour()
    geo = TorusGeometry(4, 3)
    a = frd.fractional_covariance(1, 0, 1, J, 0.0, 0.1, geo, profile)
    b = frd.scale_covariance(1, J, 0.0, 0.1, geo, profile, position_samples=False)
    assert np.allclose(a.hat_values, b.hat_values, rtol=1e-12, atol=0)


def test_fractional_pieces_add_up(profile):
    J = nearest_neighbour()
    geo = TorusGeometry(16, 2)
    whole = frd.scale_covariance(0, J, 0.0, 0.1, geo, profile, position_samples=False)
    parts = sum(frd.fractional_covariance(0, k, 2, J, 0.0, 0.1, geo, profile).hat_values
                for k in range(2))
    assert np.allclose(parts, whole.hat_values, rtol=1e-8, atol=1e-12)


def test_scale_index_guard(profile):
    with pytest.raises(InvalidParameter):
        frd.scale_covariance(3, nearest_neighbour(), 0.0, 0.0, TorusGeometry(4, 3), profile)
    with pytest.raises(InvalidParameter):
        frd.scale_slice(2, nearest_neighbour(), 0.0, 0.0, TorusGeometry(4, 3), profile, side=8)


def test_s_outside_theta_rejected(profile):
    J = nearest_neighbour()
    with pytest.raises(InvalidParameter):
        frd.scale_covariance(0, J, 0.3, 0.0, TorusGeometry(4, 2), profile)


def test_covariance_table_roundtrip(profile, tmp_path):
    J = nearest_neighbour()
    cov = frd.scale_covariance(1, J, 0.0, 0.0, TorusGeometry(4, 3), profile,
                               position_samples=False)
    path = tmp_path / "c.dgcov"
    cov.save(path)
    header, hat = frd.load_covariance_table(path, J)
    assert header["j"] == 1 and header["side"] == 64
    assert np.array_equal(hat, cov.hat_values)
    assert cov.to_csv().splitlines()[0] == "p1,p2,j,gamma_hat"


def test_covariance_table_corruption_detected(profile):
    J = nearest_neighbour()
    cov = frd.scale_covariance(1, J, 0.0, 0.0, TorusGeometry(4, 3), profile,
                               position_samples=False)
    data = bytearray(cov.to_bytes())
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(ChecksumError):
        frd.load_covariance_table(bytes(data), J)
    with pytest.raises(ChecksumError):
        frd.load_covariance_table(cov.to_bytes(), standard_range_rho(1))
    with pytest.raises(ChecksumError):
        frd.load_covariance_table(b"garbage")


def test_asymptotic_value():
    J = nearest_neighbour()
    assert frd.gamma_asymptotic(J, 16) == pytest.approx(math.log(16) / (2 * math.pi * 0.25))


def test_flow_gamma_data_extrapolates():
    data = frd.flow_gamma_data(nearest_neighbour(), 8, 12)
    assert len(data) == 13
    assert all(d["gamma0"] >= 0 for d in data)
    asym = frd.gamma_asymptotic(nearest_neighbour(), 8)
    assert abs(data[-1]["gamma0"] / asym - 1) < 1e-3
