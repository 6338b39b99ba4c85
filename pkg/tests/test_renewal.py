import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.special import erfcx

from fracblow.errors import DomainError, NumericalAccuracyError
from fracblow.renewal import (
    RenewalProblem,
    analytic_solution,
    blowup_time_power,
    blowup_time_singular,
    linear_trajectory,
    reduce_exponent,
    solve_volterra_numeric,
    threshold_A0,
)


def test_closed_form_examples():
    assert blowup_time_singular(2.0, 1.0, 1.0, 2.0, 1.0) == 0.5
    assert math.isclose(blowup_time_singular(1.0, 2.0, 0.5, 1.0, 4.0), 4.0)
    assert math.isclose(threshold_A0(1.0, 1.0, 2.0, 1.0, 0.5), 2.0)
    assert blowup_time_power(1.0, 1.0, 0.5, 2.0) == 5.0625


def test_threshold_is_sharp():
    a0 = threshold_A0(1.0, 1.5, 1.5, 2.0, 0.7)
    assert math.isclose(blowup_time_singular(a0, 1.0, 1.5, 1.5, 2.0), 0.7, rel_tol=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        threshold_A0(1.0, 1.0, 2.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        blowup_time_power(1.0, 1.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        blowup_time_singular(0.0, 1.0, 1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        RenewalProblem(1.0, 0.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        RenewalProblem(1.0, 1.0, 1.0, 2.0, kernel_form="weird")
    with pytest.raises(DomainError):
        solve_volterra_numeric(RenewalProblem(1.0, 1.0, 1.0, 1.0))


def test_reduce_exponent():
    assert reduce_exponent(0.2, 3.0, 1.5) == (0.2, 1.0)
    g0, mult = reduce_exponent(2.0, 3.0, 1.5)
    assert g0 == 0.25 and math.isclose(mult, 3.0**1.75)
    assert (1 + g0) / 1.5 < 1
    with pytest.raises(DomainError):
        reduce_exponent(1.0, 2.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(
    A=st.floats(0.1, 10), B=st.floats(0.1, 10), g=st.floats(0.1, 3), a=st.floats(0.5, 2), f=st.floats(1.01, 3)
)
def test_analytic_monotone_in_A_and_B(A, B, g, a, f):
    t = blowup_time_singular(A, B, g, a, 1.0)
    assert blowup_time_singular(A * f, B, g, a, 1.0) < t
    assert blowup_time_singular(A, B * f, g, a, 1.0) < t


@settings(max_examples=40, deadline=None)
@given(A=st.floats(1.0, 10), g=st.floats(0.1, 3), dg=st.floats(0.01, 1))
def test_analytic_monotone_in_gamma_when_A_at_least_one(A, g, dg):
    assume(A ** (g + dg) * (g + dg) > A**g * g)
    assert blowup_time_singular(A, 1.0, g + dg, 1.5, 1.0) < blowup_time_singular(A, 1.0, g, 1.5, 1.0)


@settings(max_examples=8, deadline=None)
@given(A=st.floats(2.0, 5.0), f=st.floats(1.1, 2.0))
def test_numeric_monotone_in_A(A, f):
    lo = solve_volterra_numeric(RenewalProblem(A, 1.0, 1.0, 2.0, 1.0, "constant"))
    hi = solve_volterra_numeric(RenewalProblem(A * f, 1.0, 1.0, 2.0, 1.0, "constant"), horizon=1.5 * lo.t_star)
    assert hi.t_star < lo.t_star


@pytest.mark.parametrize("A,g", [(4.0, 1.0), (2.0, 1.0), (8.0, 0.5)])
def test_singular_blows_up_no_later_than_constant(A, g):
    # (t-s)^{-1/alpha} >= T^{-1/alpha} on [0, T], so the singular solution dominates
    const = blowup_time_singular(A, 1.0, g, 2.0, 1.0)
    sing = solve_volterra_numeric(RenewalProblem(A, 1.0, g, 2.0, 1.0, "singular"), horizon=const)
    assert sing.blows_up and sing.t_star <= const


def test_constant_kernel_numeric_matches_analytic():
    sol = solve_volterra_numeric(RenewalProblem(2.0, 1.0, 1.0, 2.0, 1.0, "constant"))
    assert math.isclose(sol.t_star, 0.5, rel_tol=1e-3)
    assert math.isclose(sol.t_star_extrapolated, 0.5, rel_tol=1e-3)
    assert np.all(np.diff(sol.trajectory) >= 0)


def test_power_kernel_numeric_matches_analytic():
    sol = solve_volterra_numeric(RenewalProblem(1.0, 1.0, 0.5, 2.0, kernel_form="power"))
    assert math.isclose(sol.t_star, 5.0625, rel_tol=1e-2)


def test_zero_data_never_blows_up():
    sol = solve_volterra_numeric(RenewalProblem(0.0, 1.0, 1.0, 2.0, 1.0, "constant"), horizon=2.0)
    assert not sol.blows_up and np.all(sol.trajectory == 0)
    assert not analytic_solution(RenewalProblem(0.0, 1.0, 1.0, 2.0)).blows_up


def test_linear_constant_kernel_is_exponential():
    times = np.linspace(0, 2, 9)
    vals, change = linear_trajectory(RenewalProblem(1.5, 0.7, 0.0, 2.0, 1.0, "constant"), times, 1e-3)
    assert np.allclose(vals, 1.5 * np.exp(0.7 * times), rtol=1e-5)
    assert change < 1e-3


def test_linear_singular_kernel_is_mittag_leffler():
    # g = A + B int_0^t g(s) (t-s)^{-1/2} ds  =>  g = A E_{1/2}(B sqrt(pi t)) = A erfcx(-B sqrt(pi t))
    times = np.array([0.1, 0.5, 1.0])
    vals, _ = linear_trajectory(RenewalProblem(1.0, 0.8, 0.0, 2.0, 1.0, "singular"), times, 1e-4)
    want = erfcx(-0.8 * np.sqrt(np.pi * times))
    assert np.allclose(vals, want, rtol=2e-4)


def test_certification_flag():
    assert not analytic_solution(RenewalProblem(1.0, 1.0, 0.5, 2.0, 1.0)).certified
    assert analytic_solution(RenewalProblem(4.0, 1.0, 1.0, 2.0, 1.0)).certified


def test_power_form_supercritical_uses_reduction():
    sol = analytic_solution(RenewalProblem(2.0, 1.0, 2.0, 1.5, kernel_form="power"))
    assert sol.info["gamma0"] == 0.25 and sol.blows_up


def test_coarse_mesh_is_rejected():
    with pytest.raises(NumericalAccuracyError):
        solve_volterra_numeric(RenewalProblem(4.0, 1.0, 2.0, 2.0, 1.0, "constant"), mesh=0.02, horizon=1.0)
