import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dglab import potential as pot
from dglab.errors import InvalidParameter, PreconditionViolation
from dglab.lattice import TorusGeometry, multiplier_lambda_J, nearest_neighbour, standard_range_rho

GAMMA = pot.default_gamma()
NN = nearest_neighbour()


def coeffs(beta, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return pot.tilde_z_coefficients(beta, GAMMA, **kw)


@pytest.mark.parametrize("gb", [5.0, 20.0, 60.0, 200.0])
def test_z_bound(gb):
    c = coeffs(gb / GAMMA, q_max=12)
    q = np.arange(1, 13)
    assert np.all(np.abs(c.z_tilde) <= pot.z_bound(c.beta, GAMMA, q))


@pytest.mark.parametrize("gb", [2.0, 20.0, 80.0])
def test_fft_matches_closed_form(gb):
    c = coeffs(gb / GAMMA, q_max=8)
    exact = pot.tilde_z_exact(gb / GAMMA, GAMMA, 8)
    # absolute floor: double rounding on values of size |z1|
    assert np.allclose(c.z_tilde, exact, rtol=1e-9, atol=1e-15 * abs(exact[0]))


def test_leading_coefficient_against_quadrature():
    gb = 40.0
    with mpmath.workdps(40):
        eps = mpmath.exp(-mpmath.mpf(gb) / 2)

        def logF(phi):
            return mpmath.log(1 + 2 * mpmath.nsum(lambda q: eps ** (q * q) * mpmath.cos(q * phi),
                                                   [1, mpmath.inf]))

        ref = mpmath.quad(lambda x: logF(x) * mpmath.cos(x), [0, mpmath.pi]) * 2 / mpmath.pi
    z1 = coeffs(gb / GAMMA, q_max=3).z_tilde[0]
    assert z1 == pytest.approx(float(ref), rel=1e-9)
    assert z1 == pytest.approx(2 * math.exp(-gb / 2), rel=1e-8)


def test_coefficients_decrease_in_q():
    z = np.abs(coeffs(30.0 / GAMMA, q_max=10).z_tilde)
    assert np.all(np.diff(z) < 0)


def test_coefficients_alternate_and_U_is_even():
    c = coeffs(25.0 / GAMMA, q_max=6)
    assert np.all(np.sign(c.z_tilde) == (-1.0) ** np.arange(6))
    phi = np.linspace(0, 2, 7)
    assert np.allclose(c.U(phi), c.U(-phi))


def test_warning_below_threshold():
    with pytest.warns(UserWarning):
        c = pot.tilde_z_coefficients(1.0 / GAMMA, GAMMA, q_max=3)
    assert c.warning and c.c_f == pytest.approx(GAMMA / 4)


def test_log_domain_threshold():
    t = pot.log_domain_threshold()
    assert 0.05 < t < 0.3
    coeffs(1.5 * t / GAMMA, q_max=2)


def test_invalid_beta():
    with pytest.raises(InvalidParameter):
        pot.tilde_z_coefficients(-1.0, GAMMA)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), st.floats(0.0, 2.0),
       st.sampled_from([1, 2]))
def test_mode_identity(p1, p2, m2, rho):
    J = standard_range_rho(rho)
    Lam = float(multiplier_lambda_J(J, p1, p2)) + m2
    if Lam < 1e-6:
        return
    C = float(pot.covariance_C_mode(J, 0.0, m2, p1, p2, GAMMA))
    assert GAMMA + C == pytest.approx(1 / Lam, rel=1e-12)
    Ct = float(pot.covariance_Ctilde_mode(J, 0.0, m2, p1, p2, GAMMA))
    assert Ct == pytest.approx(1 / Lam, rel=1e-12)


@pytest.mark.parametrize("s", [-0.2, 0.0, 0.1, 0.2])
def test_zero_momentum(s):
    m2 = 0.3
    assert float(pot.covariance_C_mode(NN, s, m2, 0.0, 0.0, GAMMA)) == pytest.approx(1 / m2 - GAMMA)
    assert float(pot.covariance_Ctilde_mode(NN, s, m2, 0.0, 0.0, GAMMA)) == pytest.approx(1 / m2)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi), st.floats(-0.9, 0.9),
       st.floats(0.0, 1.0))
def test_C_positive(p1, p2, frac, m2):
    if p1 == p2 == 0 and m2 == 0:
        return
    assert float(pot.covariance_C_mode(NN, frac * NN.theta, m2, p1, p2, GAMMA)) > 0


def test_gamma_too_large_rejected():
    with pytest.raises(PreconditionViolation):
        pot.covariance_C_mode(NN, 0.0, 0.0, math.pi, math.pi, gamma=0.5)


def test_discretisation_zero_sum():
    fN = pot.discretise([{"k": [1, 0], "a": 1.0}, {"k": [2, 3], "b": 0.4}], 32)
    assert abs(fN.sum()) < 1e-15
    with pytest.raises(InvalidParameter):
        pot.discretise([{"k": [0, 0], "a": 1.0}], 8)
    with pytest.raises(InvalidParameter):
        pot.check_zero_mean(lambda x, y: 1.0 + 0 * x)


def test_continuum_single_mode():
    emb = pot.embed_test_function([{"k": [1, 0], "a": 1.0}], TorusGeometry(4, 2), NN)
    assert emb.continuum_form == pytest.approx(1 / (8 * math.pi**2))
    assert abs(np.fft.fft2(emb.u_N)[0, 0]) < 1e-14
    assert emb.regulator_N >= 1.0


@pytest.mark.parametrize("rho", [1, 2])
def test_green_form_converges(rho):
    J = standard_range_rho(rho)
    f = [{"k": [1, 0], "a": 1.0}, {"k": [1, 1], "b": 0.5}]
    rows = pot.green_form_convergence(f, J, 2, [4, 5, 6, 7])
    errs = [r["rel_error"] for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3
    # second-order convergence in the lattice spacing
    assert errs[-2] / errs[-1] == pytest.approx(4.0, rel=0.1)


def test_green_form_half_spectrum_matches_full():
    fN = pot.discretise([{"k": [2, 1], "a": 1.0}, {"k": [0, 3], "b": 0.3}], 16)
    emb = pot.embed_test_function([{"k": [2, 1], "a": 1.0}, {"k": [0, 3], "b": 0.3}],
                                  TorusGeometry(4, 2), NN)
    assert pot.green_form(fN, NN) == pytest.approx(emb.green_form, rel=1e-12)


def test_ctilde_form_limit():
    # at m2 = 0 the C~ form tends to the continuum value over s + v^2
    f = [{"k": [1, 0], "a": 1.0}]
    s = 0.05
    emb = pot.embed_test_function(f, TorusGeometry(2, 8), NN, s=s)
    assert emb.ctilde_form == pytest.approx(emb.continuum_form / (s + NN.v2), rel=1e-3)


@pytest.mark.parametrize("a", [1, 2])
def test_fhat_decay_uniform_in_N(a):
    f = [{"k": [1, 2], "a": 1.0}, {"k": [3, 0], "b": 0.7}]
    sups = []
    for N in (4, 5, 6):
        side = 2**N
        fh = np.abs(pot.fhat_N(pot.discretise(f, side)))
        k = np.fft.fftfreq(side, 1 / side)
        P = 2 * np.pi * np.hypot(*np.meshgrid(k, k, indexing="ij")) / side
        nz = P > 0
        sups.append(float((fh[nz] * P[nz] ** (2 * a)).max() * side ** (2 * a)))
    assert max(sups) / min(sups) < 1.05


def test_grad_u_bounded_in_N():
    f = [{"k": [1, 0], "a": 1.0}]
    vals = [pot.embed_test_function(f, TorusGeometry(2, N), NN, s=0.05).grad_u_sq
            for N in (4, 6, 8)]
    assert max(vals) / min(vals) < 1.05


def test_reformulation_trivial_f():
    r = pot.reformulation_check((2, 1), 50.0, 0.0, 0.5, [0.0, 0.0], gh_points=64)
    assert r.lhs_ratio == pytest.approx(1.0) and r.rhs_ratio == pytest.approx(1.0)


@pytest.mark.parametrize("s", [0.0, 0.02])
def test_reformulation_two_sites(s):
    r = pot.reformulation_check((2, 1), 50.0, s, 0.5, [0.3, -0.3], gh_points=128)
    assert r.rel_diff < 1e-6


def test_reformulation_guards():
    with pytest.raises(InvalidParameter):
        pot.reformulation_check((3, 2), 50.0, 0.0, 0.5, np.zeros(6))
    with pytest.raises(InvalidParameter):
        pot.reformulation_check((2, 1), 50.0, 0.0, 0.0, [0.1, -0.1])
