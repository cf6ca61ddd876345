import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dglab import frd, rgflow as rg
from dglab.errors import DependencyError, InvalidParameter, SubcriticalParameter
from dglab.lattice import nearest_neighbour

NN = nearest_neighbour()
L = 8


@pytest.fixture(scope="module")
def gdata():
    return frd.flow_gamma_data(NN, L, 9)


def test_beta_free_and_eff():
    assert rg.beta_free(NN) == pytest.approx(2 * math.pi)
    assert rg.beta_eff(NN, 7.0, 0.0) == 7.0
    assert rg.beta_eff(NN, 7.0, 0.25) == pytest.approx(3.5)
    with pytest.raises(InvalidParameter):
        rg.beta_eff(NN, 7.0, -0.3)


def test_charge_integral_examples():
    assert rg.charge_integral(0, 3.0, 1.0) == 1.0
    assert rg.charge_integral(1, 2 * math.log(2), 1.0) == pytest.approx(0.5)
    with pytest.raises(InvalidParameter):
        rg.charge_integral(1, 1.0, -0.1)


def test_step_zero_z():
    st0 = rg.CouplingState(0, 0.0, 0.1, (0.0, 0.0))
    d = {"gamma0": 0.3, "gamma_e1": 0.2}
    nxt = rg.step_couplings(st0, d, L, 10.0)
    assert nxt.z == (0.0, 0.0) and nxt.s == 0.1 and nxt.j == 1
    assert nxt.E == pytest.approx(-0.1 * 0.2)


def test_step_missing_data():
    with pytest.raises(DependencyError):
        rg.step_couplings(rg.CouplingState(0, 0.0, 0.0, (1.0,)), None, L, 1.0)
    with pytest.raises(DependencyError):
        rg.step_couplings(rg.CouplingState(0, 0.0, 0.0, (1.0,)), {"gamma0": 1.0}, L, 1.0)


@given(st.floats(0.1, 40.0), st.floats(0.01, 2.0))
def test_contraction_threshold(beta, g0):
    f = rg.contraction_factor(1, L, beta, g0)
    if abs(beta * g0 - 4 * math.log(L)) > 1e-9:
        assert (f < 1) == (beta * g0 > 4 * math.log(L))


@given(st.integers(1, 6), st.floats(0.1, 40.0), st.floats(0.0, 2.0))
def test_higher_charges_contract_faster(q, beta, g0):
    r = rg.contraction_factor(q + 1, L, beta, g0) / rg.contraction_factor(q, L, beta, g0)
    assert r == pytest.approx(math.exp(-beta * (2 * q + 1) * g0 / 2), rel=1e-9)


@given(st.lists(st.floats(0.0, 0.5), min_size=1, max_size=8), st.floats(1.0, 30.0))
def test_flow_matches_closed_form(gammas, beta):
    z0 = (0.3, -0.02, 1e-3)
    state = rg.CouplingState(0, 0.0, 0.0, z0)
    rows = [np.array(z0)]
    for g0 in gammas:
        state = rg.step_couplings(state, {"gamma0": g0, "gamma_e1": 0.5 * g0}, L, beta)
        rows.append(np.array(state.z))
    assert np.allclose(np.array(rows), rg.closed_form_z(z0, gammas, L, beta), rtol=1e-12)


@given(st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(-1, 1), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(-5, 5))
def test_norm_is_a_norm(s1, z1, s2, z2, a):
    beta, c_f = 8.0, 0.03
    n = lambda s, z: rg.state_norm(s, z, beta, c_f)  # noqa: E731
    assert n(a * s1, [a * v for v in z1]) == pytest.approx(abs(a) * n(s1, z1), abs=1e-12)
    tot = n(s1 + s2, [u + v for u, v in zip(z1, z2)])
    assert tot <= n(s1, z1) + n(s2, z2) + 1e-12


def test_alpha_loc_limits():
    base = L**-3 * math.log(L) ** 1.5
    assert rg.alpha_loc(L, 10.0, 1.0, 1.0, 1e6) == pytest.approx(base)
    assert rg.alpha_loc(L, 10.0, 5.0, 1.0, 0.01) == pytest.approx(base + 1.0)
    mid = rg.alpha_loc(L, 10.0, 0.5, 1.0, 0.8)
    assert base < mid < base + 1.0


@pytest.mark.parametrize("L_big,mult", [(32, 10.0), (128, 3.0), (128, 10.0), (256, 3.0)])
def test_alpha_loc_regime(L_big, mult):
    # r beta > (1 + 2 theta) beta_free puts alpha_Loc below L^{-2-theta} once L is large
    theta = 0.25
    beta = mult * (1 + 2 * theta) * rg.beta_free(NN)
    h = rg.h_parameter(NN, beta, 1.0, rg.default_c_f(frd.build_bump_profile().gamma))
    a = rg.alpha_loc(L_big, beta, h, 1.0, frd.gamma_asymptotic(NN, L_big))
    assert a <= L_big ** (-2 - theta)


def test_h_parameter():
    assert rg.h_parameter(NN, 16.0, 1.0, 0.04) == pytest.approx(4.0)
    assert rg.h_parameter(NN, 1e-4, 1.0, 0.04) == pytest.approx(1.0)


def test_j0_guards(gdata):
    with pytest.raises(SubcriticalParameter):
        rg.critical_scale_j0(NN, L, 0.5, rg.beta_free(NN), 1.0, 0.0, gdata)
    with pytest.raises(InvalidParameter):
        rg.critical_scale_j0(NN, L, 0.0, 20.0, 1.0, 0.0, gdata)


def test_j0_monotone_and_bounded(gdata):
    bf = rg.beta_free(NN)
    j0s = []
    for beta in np.linspace(1.6 * bf, 6 * bf, 12):
        j0 = rg.critical_scale_j0(NN, L, 0.5, beta, 1.0, 0.0, gdata)
        # direct re-evaluation of the defining inequality
        ok = [2 * math.log(L) - 0.5 * beta * d["gamma0"] <= -0.5 * math.log(L) for d in gdata]
        assert all(ok[j0:]) and (j0 == 0 or not all(ok[j0 - 1:]))
        j0s.append(j0)
    assert all(b <= a for a, b in zip(j0s, j0s[1:]))
    assert L ** j0s[0] <= 10 * L * 1 * (1 + 1 / 0.5)


def test_flow_contracts_above_beta_free(gdata):
    beta = 2 * rg.beta_free(NN)
    init, _ = rg.initial_state(beta)
    res = rg.run_flow(init, gdata, NN, L, beta)
    assert res.j0 is not None and not res.diverged
    assert res.decreasing_after(res.j0)
    assert res.alpha_fit > 0
    hand = rg.closed_form_z(init.z, [d["gamma0"] for d in gdata], L, beta)
    assert np.allclose([t.z for t in res.trajectory], hand, rtol=1e-12)
    assert res.beta_eff == beta


def test_flow_diverges_below_beta_free(gdata):
    beta = 0.5 * rg.beta_free(NN)
    init, warns = rg.initial_state(beta)
    assert warns
    res = rg.run_flow(init, gdata, NN, L, beta)
    assert res.j0 is None and res.diverged and res.divergence_scale is not None
    assert res.warnings


def test_flow_zero_z():
    init = rg.CouplingState(0, 0.0, 0.05, (0.0, 0.0))
    data = [{"gamma0": 0.2 + 0.01 * k, "gamma_e1": 0.1} for k in range(5)]
    res = rg.run_flow(init, data, NN, L, 20.0, gamma=0.118)
    assert all(t.z == (0.0, 0.0) and t.s == 0.05 for t in res.trajectory)
    assert res.trajectory[-1].E == pytest.approx(-0.05 * sum(2 * d["gamma0"] - 0.2 for d in data))


def test_rows_have_trajectory_columns(gdata):
    init, _ = rg.initial_state(20.0, q_max=3)
    rows = rg.run_flow(init, gdata[:4], NN, L, 20.0).rows()
    assert list(rows[0]) == ["j", "E", "s", "z1", "z2", "z3", "gamma0", "factor", "norm"]
    assert len(rows) == 5


def test_asymptotic_gamma_gives_factor(gdata):
    # Gamma(0) ~ 4 log L / beta_free gives the factor L^{2 - 2 beta/beta_free}
    beta = 1.5 * rg.beta_free(NN)
    g0 = gdata[-1]["gamma0"]
    f = rg.contraction_factor(1, L, beta, g0)
    assert math.log(f) / math.log(L) == pytest.approx(2 - 2 * beta / rg.beta_free(NN), abs=0.05)


def test_non_finite_state_rejected():
    with pytest.raises(InvalidParameter):
        rg.CouplingState(0, float("nan"), 0.0, ())
