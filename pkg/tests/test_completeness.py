import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvmarket.completeness import (CompletenessReport, VandermondeCase, default_grid, left_inverse,
                                   scan, scan_matrices, two_factor_analytic_check, vandermonde_det)
from gvmarket.errors import DomainError, IncompletenessError, PreconditionError
from gvmarket.kernels import ConstantKernel, FbmLowKernel, RiemannLiouvilleKernel, StdOUKernel
from gvmarket.market import KernelMatrix, MarketSpec


def cofactor_det(a, x):
    """Laplace expansion in 50-digit arithmetic; independent of any LU code."""
    mpmath.mp.dps = 50
    M = [[mpmath.mpf(float(xj)) ** mpmath.mpf(float(ai)) for ai in a] for xj in x]

    def det(rows, cols):
        if len(cols) == 1:
            return M[rows[0]][cols[0]]
        total = mpmath.mpf(0)
        for k, c in enumerate(cols):
            total += (-1) ** k * M[rows[0]][c] * det(rows[1:], cols[:k] + cols[k + 1:])
        return total

    return det(list(range(len(x))), list(range(len(a))))


def random_case(rng, n):
    # strictly increasing with gaps of at least 1/4 (see the decisions ledger)
    a = np.cumsum(rng.uniform(0.25, 1.0, n)) - 0.25
    x = np.cumsum(rng.uniform(0.25, 1.0, n))
    return VandermondeCase(a, x)


def test_vandermonde_small_closed_form():
    # classical Vandermonde: exponents 0..n-1 gives prod (x_j - x_i)
    x = np.array([0.5, 1.0, 2.0, 3.5])
    ref = np.prod([x[j] - x[i] for i in range(4) for j in range(i + 1, 4)])
    assert vandermonde_det(VandermondeCase([0, 1, 2, 3], x)) == pytest.approx(ref, rel=1e-12)


def test_vandermonde_against_cofactor_oracle():
    rng = np.random.default_rng(5)
    for _ in range(30):
        case = random_case(rng, int(rng.integers(1, 6)))
        ref = float(cofactor_det(case.exponents, case.points))
        assert vandermonde_det(case) == pytest.approx(ref, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 6))
def test_vandermonde_positive(seed, n):
    assert vandermonde_det(random_case(np.random.default_rng(seed), n)) > 0


def test_vandermonde_validation():
    with pytest.raises(DomainError):
        VandermondeCase([1, 0], [1, 2])
    with pytest.raises(DomainError):
        VandermondeCase([0, 1], [0, 2])
    with pytest.raises(DomainError):
        VandermondeCase([0, 1], [1])


def test_left_inverse_errors_carry_time():
    with pytest.raises(IncompletenessError) as err:
        left_inverse(KernelMatrix(0.3, np.array([[1.0, 2.0], [2.0, 4.0]])))
    assert err.value.t == 0.3
    with pytest.raises(IncompletenessError):
        left_inverse(np.ones((1, 2)))


def test_two_rl_complete():
    m = MarketSpec([RiemannLiouvilleKernel(0.25), RiemannLiouvilleKernel(0.75)], (1.0, 2.0))
    rep = scan(m)
    assert rep.verdict == "complete" and rep.zero_crossings == 0
    assert min(rep.determinant) > 0.3


def test_default_grid_avoids_singular_end():
    m = MarketSpec([FbmLowKernel(0.3), ConstantKernel()], (1.0, 2.0))
    g = default_grid(m, 16)
    assert g[-1] < 1.0 and g[0] > 0
    m2 = MarketSpec([ConstantKernel()], (1.0,))
    assert default_grid(m2, 16)[-1] == 1.0


def test_scan_rejects_singular_grid():
    m = MarketSpec([FbmLowKernel(0.3)], (1.0,))
    with pytest.raises(DomainError):
        scan(m, grid=np.linspace(0.1, 1.0, 10))
    with pytest.raises(DomainError):
        scan(m, grid=np.linspace(0.0, 0.9, 10))


def test_fbm_low_pair_single_crossing():
    m = MarketSpec([FbmLowKernel(0.2), FbmLowKernel(0.4)], (1.0, 1.7))
    rep = scan(m, n_points=512)
    assert rep.zero_crossings <= 1
    assert rep.is_complete


def test_more_factors_than_maturities_is_incomplete():
    m = MarketSpec([ConstantKernel(), StdOUKernel(-1.0)], (1.0,))
    assert scan(m, n_points=16).verdict == "incomplete"


def test_identical_factors_incomplete():
    m = MarketSpec([StdOUKernel(-1.0), StdOUKernel(-1.0)], (1.0, 2.0))
    assert scan(m, n_points=32).verdict == "incomplete"


def test_isolated_zero_is_null_set():
    grid = np.linspace(0.0, 1.0, 11)
    # det(t) = t - 0.35 changes sign once between grid points
    mats = np.array([[[1.0, 0.0], [0.0, t - 0.35]] for t in grid])
    rep = scan_matrices(grid, mats, det_fn=lambda t: t - 0.35)
    assert rep.verdict == "complete-except-null-set"
    assert rep.zero_crossings == 1
    assert rep.degenerate_times[0] == pytest.approx(0.35, abs=1e-8)


def test_report_serialisation():
    m = MarketSpec([RiemannLiouvilleKernel(0.25), RiemannLiouvilleKernel(0.75)], (1.0, 2.0))
    rep = scan(m, n_points=8)
    again = CompletenessReport.from_dict(json.loads(rep.to_json()))
    assert again.to_json() == rep.to_json()
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t,det_or_min_sv" and len(lines) == 9


@pytest.mark.parametrize("family,params", [
    ("fou", {"alpha": 0.7, "H1": 0.6, "H2": 0.8}),
    ("rl_ou", {"alpha": -0.4, "H1": 0.55, "H2": 0.9}),
    ("mixed", {"alpha1": 0.2, "alpha2": 0.9, "H": 0.7}),
])
def test_analytic_checks(family, params):
    res = two_factor_analytic_check(family, params, n_samples=20, seed=3)
    assert res.passed and res.min_abs_det > 0 and res.samples == 20


def test_analytic_check_preconditions():
    with pytest.raises(PreconditionError):
        two_factor_analytic_check("fou", {"alpha": 0.1, "H1": 0.8, "H2": 0.6})
    with pytest.raises(PreconditionError):
        two_factor_analytic_check("mixed", {"alpha1": 1.0, "alpha2": 0.5, "H": 0.7})
    with pytest.raises(DomainError):
        two_factor_analytic_check("bessel", {})
