import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dglab.errors import InvalidParameter
from dglab.lattice import (
    StepDistribution,
    TorusGeometry,
    apply_multiplier,
    dual_indices,
    laplacian_J,
    laplacian_J_matrix,
    multiplier_lambda,
    multiplier_lambda_J,
    nearest_neighbour,
    regularity_warnings,
    standard_range_rho,
    step_distribution_from_spec,
    symbol_grid,
)

# exhaustive 4096^2 grid minimum of lambda_J/lambda for J_2
THETA_J2 = 0.125

momentum = st.floats(-math.pi, math.pi, allow_nan=False)


@pytest.mark.parametrize("rho", [1, 2, 3, 5])
def test_range_of_standard_distribution(rho):
    assert standard_range_rho(rho).rho == rho


def test_v2_of_J1_is_three_eighths():
    assert standard_range_rho(1).v2 == pytest.approx(3 / 8, abs=1e-15)


def test_nearest_neighbour_constants():
    J = nearest_neighbour()
    assert J.v2 == pytest.approx(0.25)
    assert J.theta == pytest.approx(0.25, abs=1e-12)
    assert J.beta_free == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("rho", [1, 2, 3])
def test_theta_lower_bound(rho):
    assert standard_range_rho(rho).theta >= 1 / 9


def test_theta_J2_matches_exhaustive_grid():
    assert standard_range_rho(2).theta == pytest.approx(THETA_J2, abs=1e-10)


@given(momentum, momentum)
def test_lambda_sandwich(p1, p2):
    lam = float(multiplier_lambda(p1, p2))
    p2sq = p1 * p1 + p2 * p2
    assert 4 / math.pi**2 * p2sq * (1 - 1e-12) <= lam <= p2sq * (1 + 1e-12) + 1e-300


@given(st.integers(1, 3), st.floats(1e-3, 0.3), st.floats(0, 2 * math.pi))
def test_lambda_J_small_momentum(rho, r, angle):
    J = standard_range_rho(rho)
    p1, p2 = r * math.cos(angle), r * math.sin(angle)
    lam = float(multiplier_lambda_J(J, p1, p2))
    # Taylor remainder of 1 - cos is at most (p.x)^4/24 <= (2 rho^2 |p|^2)^2/24
    assert abs(lam - J.v2 * r * r) <= rho**4 * r**4 / 6 + 1e-15


@given(st.integers(1, 3), momentum, momentum)
def test_lambda_J_symmetries(rho, p1, p2):
    J = standard_range_rho(rho)
    v = multiplier_lambda_J(J, p1, p2)
    for q1, q2 in ((-p1, -p2), (p2, p1), (-p1, p2)):
        assert multiplier_lambda_J(J, q1, q2) == pytest.approx(v, rel=1e-12, abs=1e-14)


@given(st.integers(2, 12), st.integers(1, 2), st.integers(0, 2**31))
def test_symbol_matches_stencil(side, rho, seed):
    J = standard_range_rho(rho)
    f = np.random.default_rng(seed).normal(size=(side, side))
    via_fft = apply_multiplier(f, symbol_grid(J, side))
    assert np.allclose(via_fft, -laplacian_J(J, f), atol=1e-12)


def test_dense_matrix_spectrum_matches_symbol():
    J = standard_range_rho(1)
    M = laplacian_J_matrix(J, (4, 4))
    ev = np.sort(np.linalg.eigvalsh(M))
    assert np.allclose(ev, np.sort(symbol_grid(J, 4).ravel()), atol=1e-12)


@pytest.mark.parametrize("side", [1, 2, 5, 8, 16])
def test_dual_indices_cover_half_open_interval(side):
    k = dual_indices(side)
    assert sorted(k % side) == list(range(side))
    assert np.all(k > -side / 2) and np.all(k <= side / 2)


@pytest.mark.parametrize("offsets", [
    [(1, 0), (-1, 0), (0, 1)],
    [(1, 0), (-1, 0), (0, 1), (0, -1), (0, 0)],
    [(1, 0), (-1, 0), (0, 1), (0, -1), (2, 1)],
    [(2, 0), (-2, 0), (0, 2), (0, -2)],
])
def test_bad_offsets_rejected(offsets):
    with pytest.raises(InvalidParameter):
        StepDistribution(tuple(offsets))


def test_spec_parsing():
    assert step_distribution_from_spec("nn") == nearest_neighbour()
    assert step_distribution_from_spec({"rho": 2}) == standard_range_rho(2)
    J = step_distribution_from_spec({"offsets": [[1, 0], [-1, 0], [0, 1], [0, -1]]})
    assert J == nearest_neighbour()
    with pytest.raises(InvalidParameter):
        step_distribution_from_spec({"bogus": 1})


def test_digest_is_order_independent():
    a = StepDistribution(((1, 0), (0, 1), (-1, 0), (0, -1)))
    assert a.digest() == nearest_neighbour().digest()
    assert a.digest() != standard_range_rho(1).digest()


@pytest.mark.parametrize("L,N", [(1, 3), (4, 0), (2.5, 2)])
def test_geometry_guards(L, N):
    with pytest.raises(InvalidParameter):
        TorusGeometry(L, N)


def test_geometry_sizes():
    g = TorusGeometry(4, 3)
    assert g.side == 64 and g.volume == 4096
    assert g.blocks_per_axis(1) == 16 and g.block_side(2) == 16


def test_regularity_warnings():
    J = standard_range_rho(3)
    assert regularity_warnings(J, None) == []
    assert regularity_warnings(J, 100.0) == []
    assert len(regularity_warnings(J, 1.0)) == 2
