import math

import numpy as np
import pytest

from dglab import frd, mc
from dglab.errors import InsufficientSampling, InvalidParameter, SamplingError, SizeLimitError
from dglab.geometry import Polymer, RegulatorParams
from dglab.lattice import TorusGeometry, nearest_neighbour
from dglab.potential import discretise, green_form

NN = nearest_neighbour()


def test_model_guards():
    with pytest.raises(InvalidParameter):
        mc.DGModel((2, 2), 5.0)  # unpinned without mass
    with pytest.raises(InvalidParameter):
        mc.DGModel((1, 1), 5.0, pinned=True)
    with pytest.raises(InvalidParameter):
        mc.DGModel((2, 2), -1.0, pinned=True)


def test_conditional_mode_at_nearest_point():
    a = 1.3
    for v in (0.2, 0.7, -2.9, 5.0):
        cand, p = mc.conditional_table(v, 0.25, a, 8.0)
        assert cand[np.argmax(p)] == round(v / a)
        assert p.sum() == pytest.approx(1.0)


def test_conditional_window_guard():
    model = mc.DGModel((2, 2), 5.0, pinned=True)
    n = mc.initial_config(model, 1)
    with pytest.raises(InvalidParameter):
        mc.heat_bath_sweep(model, n, np.random.default_rng(0), window=5.0)


def test_small_beta_freezes():
    model = mc.DGModel((4, 4), 1e-3, m2=0.1)
    n = mc.initial_config(model, 4)
    rng = np.random.default_rng(0)
    for _ in range(20):
        mc.heat_bath_sweep(model, n, rng)
    assert not n.any()


def test_pinned_site_stays_zero():
    model = mc.DGModel((4, 4), 40.0, pinned=True)
    n = mc.initial_config(model, 3)
    rng = np.random.default_rng(1)
    for _ in range(50):
        mc.heat_bath_sweep(model, n, rng)
    assert not n[:, 0, 0].any() and n.any()


def test_reproducible_bit_for_bit():
    model = mc.DGModel((4, 4), 3.0, m2=0.2)
    obs = {"s2": mc.site_square()}
    _, a = mc.run_chains(model, obs, 200, chains=4, burn_in=10, seed=42, check_tau=False)
    _, b = mc.run_chains(model, obs, 200, chains=4, burn_in=10, seed=42, check_tau=False)
    _, c = mc.run_chains(model, obs, 200, chains=4, burn_in=10, seed=43, check_tau=False)
    assert np.array_equal(a["s2"], b["s2"])
    assert not np.array_equal(a["s2"], c["s2"])


@pytest.mark.parametrize("model", [
    mc.DGModel((2, 1), 2.0, pinned=True),
    mc.DGModel((2, 1), 4.0, m2=0.3),
    mc.DGModel((2, 1), 1.0, m2=1.0),
])
def test_detailed_balance(model):
    d = mc.detailed_balance_defect(model)
    assert d["stationarity"] < 1e-10
    assert d["reversibility"] < 1e-10


def test_two_site_marginal():
    # one site pinned, the other follows a discrete Gaussian with variance 1/diag
    model = mc.DGModel((2, 1), 1.5, pinned=True)
    sig, w, _ = mc.enumerate_states(model, 10.0)
    k = np.rint(sig[:, 1, 0] / model.spacing).astype(int)
    exact = {int(v): float(w[k == v].sum() / w.sum()) for v in np.unique(k)}
    _, series = mc.run_chains(model, {"k": lambda s: s[..., 1, 0] / model.spacing}, 4000,
                              chains=16, burn_in=50, seed=5, check_tau=False)
    ks = np.rint(series["k"]).astype(int).ravel()
    n = ks.size
    for v, p in exact.items():
        if p > 1e-4:
            emp = float((ks == v).mean())
            assert abs(emp - p) < 5 * math.sqrt(p * (1 - p) / n) + 1e-4


def test_brute_force_examples():
    model = mc.DGModel((2, 2), 5.0, m2=0.4)
    assert mc.brute_force_expectation(model, lambda s: np.ones(s.shape[0])).value == 1.0
    assert abs(mc.brute_force_expectation(model, mc.site_value((1, 1))).value) < 1e-14


def test_brute_force_window_independent():
    model = mc.DGModel((2, 2), 30.0, pinned=True)
    a = mc.brute_force_expectation(model, mc.site_square((1, 1)), window=8.0)
    b = mc.brute_force_expectation(model, mc.site_square((1, 1)), window=12.0)
    assert a.value == pytest.approx(b.value, rel=1e-8)
    assert a.tail_bound < 1e-13


def test_brute_force_size_limit():
    with pytest.raises(SizeLimitError):
        mc.brute_force_expectation(mc.DGModel((3, 2), 5.0, pinned=True), mc.site_square())


def test_mc_matches_brute_force():
    model = mc.DGModel((2, 2), 40.0, m2=0.5)
    obs = {"sq": mc.site_square((0, 1)), "prod": mc.site_product((0, 0), (1, 0)),
           "zero": mc.site_is_zero((1, 1))}
    stats, _ = mc.run_chains(model, obs, 20000, chains=8, burn_in=200, seed=7)
    for name, fn in obs.items():
        exact = mc.brute_force_expectation(model, fn, window=10.0).value
        o = stats[name]
        assert abs(o.mean - exact) <= 3 * o.stderr, (name, o.mean, exact, o.stderr)


def test_tau_int_ar1():
    rng = np.random.default_rng(0)
    phi = 0.8
    T, C = 40000, 4
    x = np.zeros((T, C))
    e = rng.standard_normal((T, C))
    for t in range(1, T):
        x[t] = phi * x[t - 1] + e[t]
    expected = 0.5 * (1 + phi) / (1 - phi)
    assert mc.tau_int(x) == pytest.approx(expected, rel=0.1)
    assert mc.tau_int(np.ones(100)) == 0.5


def test_batch_stats_guards():
    rng = np.random.default_rng(1)
    s = mc.batch_stats("x", rng.standard_normal((3200, 1)))
    assert s.n_batches >= mc.MIN_BATCHES
    assert s.stderr == pytest.approx(1 / math.sqrt(3200), rel=0.3)
    with pytest.raises(InsufficientSampling):
        mc.batch_stats("x", np.cumsum(rng.standard_normal(500)))
    with pytest.raises(InsufficientSampling):
        mc.batch_stats("x", rng.standard_normal((10, 1)))
    with pytest.raises(InvalidParameter):
        mc.batch_stats("x", rng.standard_normal((100, 1)), n_batches=8)


def test_smeared_zero_test_function():
    series = np.zeros((1000, 4))
    m = mc.estimate_smeared_moments(series, np.zeros((8, 8)), 10.0, NN, 0.0)
    assert m.stats.variance == 0 and m.variance_ratio_free == 0


def test_smeared_mean_zero_and_free_ratio():
    beta = 4 * 2 * math.pi
    side = 8
    model = mc.DGModel((side, side), beta, m2=0.0, pinned=True)
    fN = discretise([{"k": [1, 0], "a": 1.0}], side)
    X = mc.smeared_observable(fN, beta)
    _, series = mc.run_chains(model, {"X": X}, 3000, chains=16, burn_in=300, seed=3,
                              check_tau=False)
    m = mc.estimate_smeared_moments(series["X"], fN, beta, NN, green_form(fN, NN),
                                    check_tau=False)
    assert abs(m.stats.mean) <= 3 * m.stats.stderr
    assert 0.8 <= m.variance_ratio_free <= 1.2


def test_gaussian_sampler_variance():
    cov = frd.scale_slice(1, NN, 0.0, 0.0, TorusGeometry(4, 2), frd.build_bump_profile(), side=64)
    rng = np.random.default_rng(0)
    s = mc.GaussianFieldSampler(cov.hat_values, rng)
    f = s.draw(200)
    assert f.var() == pytest.approx(s.variance, rel=0.05)
    with pytest.raises(SamplingError):
        mc.GaussianFieldSampler(-np.ones((4, 4)), rng)


def test_charge_integral_sampler():
    cov = frd.scale_slice(1, NN, 0.0, 0.0, TorusGeometry(4, 2), frd.build_bump_profile(), side=64)
    chk = mc.charge_integral_mc(1, 6.0, cov, samples=20000, seed=1)
    assert chk.z_score < 4


def test_regulator_expectation_small_kappa():
    geo = TorusGeometry(4, 3)
    X = Polymer.from_blocks(geo, 1, [(5, 5)])
    cov = frd.scale_slice(1, NN, 0.0, 0.0, geo, frd.build_bump_profile(), side=128)
    params = RegulatorParams(rho=1, L=4, c_kappa=1e-9)
    chk = mc.regulator_expectation_check(X, np.zeros((64, 64)), cov, params, samples=500)
    assert chk.mc_mean >= 1.0
    assert chk.mc_mean == pytest.approx(1.0, abs=1e-4)
    assert chk.passed and chk.bound == 2.0
