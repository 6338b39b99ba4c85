import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fracblow.errors import DomainError, HypothesisNotMet
from fracblow.lattice import ScalarField, make_lattice
from fracblow.stable_kernel import (
    StableKernelSpec,
    apply_semigroup,
    check_dirichlet_comparison,
    check_product_bound,
    check_scaling,
    check_two_sided_bound,
    deterministic_lower_bound_check,
    estimate_killed_kernel,
    eval_kernel,
    kernel_at_origin,
    tail_mass_width,
)

alphas = st.floats(0.5, 2.0)


def series_density(alpha: float, x: float, terms: int = 200) -> float:
    """1-d stable density at t=1 by the convergent series about the origin (alpha > 1)."""
    mpmath.mp.dps = 40
    x = mpmath.mpf(x)
    s = mpmath.mpf(0)
    for k in range(terms):
        s += (-1) ** k * mpmath.gamma((2 * k + 1) / mpmath.mpf(alpha)) * x ** (2 * k) / mpmath.factorial(2 * k)
    return float(s / (mpmath.pi * alpha))


def test_gaussian_and_cauchy_closed_forms_in_higher_dim():
    x = np.array([[0.0, 0.0], [0.3, -1.2], [2.0, 1.0]])
    r2 = np.sum(x**2, axis=1)
    g = np.exp(-r2 / 8) / (8 * np.pi)
    assert np.allclose(eval_kernel(StableKernelSpec(2.0, 2), 2.0, x), g, rtol=1e-6)
    c = 0.5 / (2 * np.pi * (0.25 + r2) ** 1.5)
    assert np.allclose(eval_kernel(StableKernelSpec(1.0, 2), 0.5, x), c, rtol=1e-6)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_matches_series_oracle(alpha):
    xs = [0.0, 0.4, 1.0, 1.7]
    got = eval_kernel(StableKernelSpec(alpha), 1.0, np.array(xs))
    want = [series_density(alpha, x) for x in xs]
    assert np.allclose(got, want, atol=5e-9)


@pytest.mark.parametrize("alpha", [0.7, 1.3])
def test_matches_scipy_levy_stable(alpha):
    xs = np.array([0.0, 0.5, 2.0, 6.0])
    want = stats.levy_stable.pdf(xs, alpha, 0.0)
    assert np.allclose(eval_kernel(StableKernelSpec(alpha), 1.0, xs), want, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("alpha,dim", [(0.8, 1), (1.5, 1), (1.5, 2), (1.2, 3), (2.0, 3)])
def test_origin_value_formula(alpha, dim):
    spec = StableKernelSpec(alpha, dim)
    zero = 0.0 if dim == 1 else np.zeros(dim)
    assert math.isclose(float(eval_kernel(spec, 0.7, zero)), kernel_at_origin(spec, 0.7), rel_tol=1e-6)
    want = 2 * math.gamma(dim / alpha) / (alpha * (4 * math.pi) ** (dim / 2) * math.gamma(dim / 2)) * 0.7 ** (-dim / alpha)
    assert math.isclose(kernel_at_origin(spec, 0.7), want, rel_tol=1e-14)


def test_origin_value_frozen():
    # Gamma(5/3)/pi for alpha = 1.5, d = 1, t = 1
    assert math.isclose(kernel_at_origin(StableKernelSpec(1.5), 1.0), 0.28735275145216, rel_tol=1e-10)


@settings(max_examples=25, deadline=None)
@given(alpha=alphas, s=st.floats(0.05, 20.0), x=st.floats(-8, 8))
def test_scaling_identity(alpha, s, x):
    assert check_scaling(StableKernelSpec(alpha), s, 1.0, [x]) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(alpha=alphas, t=st.floats(0.05, 5.0))
def test_radially_decreasing_and_positive(alpha, t):
    xs = np.linspace(0, 10, 60)
    p = eval_kernel(StableKernelSpec(alpha), t, xs)
    assert np.all(p > 0)
    assert np.all(np.diff(p) <= 1e-12)


@pytest.mark.parametrize("alpha", [0.9, 1.5])
def test_unit_mass(alpha):
    from scipy.integrate import quad

    f = lambda x: float(eval_kernel(StableKernelSpec(alpha), 1.0, x))
    mass = 2 * (quad(f, 0, 1)[0] + quad(f, 1, np.inf, limit=200)[0])
    assert math.isclose(mass, 1.0, rel_tol=1e-5)


def test_bad_inputs():
    with pytest.raises(DomainError):
        StableKernelSpec(2.5)
    with pytest.raises(DomainError):
        StableKernelSpec(1.5, 0)
    with pytest.raises(DomainError):
        eval_kernel(StableKernelSpec(1.5), 0.0, 1.0)
    with pytest.raises(DomainError):
        eval_kernel(StableKernelSpec(1.5), 1.0, np.nan)
    with pytest.raises(DomainError):
        check_product_bound(StableKernelSpec(1.5), 1.0, 1.5, [0.0, 1.0])


def test_product_bound_flags_large_origin_value():
    rep = check_product_bound(StableKernelSpec(1.5), 0.01, 2.0, np.linspace(-1, 1, 21))
    assert not rep.hypothesis_met and rep.advisory


def test_product_bound_2d():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4, 4, size=(30, 2))
    rep = check_product_bound(StableKernelSpec(1.3, 2), 2.0, 3.0, pts)
    assert rep.hypothesis_met and rep.holds


def test_two_sided_bound_gaussian_is_advisory():
    rep = check_two_sided_bound(StableKernelSpec(2.0), (0.5, 2.0), 3.0, 10)
    assert rep.advisory
    assert len(rep.grid["rows"]) == 100


def test_semigroup_preserves_constants_and_mass():
    lat = make_lattice(1, 8.0, 256)
    spec = StableKernelSpec(1.5)
    out = apply_semigroup(spec, 0.5, ScalarField.constant(lat, 3.0))
    assert np.allclose(out.values, 3.0)
    bump = ScalarField.ball_indicator(lat, 1.0)
    spread = apply_semigroup(spec, 0.2, bump)
    assert math.isclose(spread.values.sum(), bump.values.sum(), rel_tol=1e-10)
    with pytest.raises(DomainError):
        apply_semigroup(spec, 0.2, ScalarField(lat, -bump.values))


def test_semigroup_property():
    lat = make_lattice(1, 8.0, 256)
    spec = StableKernelSpec(1.2)
    u = ScalarField.ball_indicator(lat, 1.0)
    two = apply_semigroup(spec, 0.1, apply_semigroup(spec, 0.2, u))
    one = apply_semigroup(spec, 0.3, u)
    assert np.allclose(two.values, one.values, atol=1e-12)


def test_tail_mass_width():
    spec = StableKernelSpec(1.5)
    w = tail_mass_width(spec, 1.0, 1e-3)
    from scipy.integrate import quad

    tail = 2 * quad(lambda x: float(eval_kernel(spec, 1.0, x)), w, np.inf, limit=200)[0]
    assert tail <= 1.01e-3


def test_deterministic_lower_bound_positive():
    lat = make_lattice(1, 8.0, 256)
    u0 = ScalarField.ball_indicator(lat, 1.0, 2.0)
    assert deterministic_lower_bound_check(StableKernelSpec(1.5), u0, 1.0, [0.1, 0.5, 1.0]) > 0


def test_killed_kernel_below_free_kernel():
    spec = StableKernelSpec(1.5)
    t = 0.1
    est = estimate_killed_kernel(spec, 1.0, t, 0.0, 0.2, n_paths=40_000, seed=1)
    free = float(eval_kernel(spec, t, 0.2))
    assert est.estimate - 3 * est.stderr <= free * 1.02
    assert 0 < est.survival < 1


def test_dirichlet_comparison_guards():
    spec = StableKernelSpec(1.5)
    with pytest.raises(HypothesisNotMet):
        check_dirichlet_comparison(spec, 1.0, 0.25, 0.2, [[0.0]], n_paths=100)
    with pytest.raises(DomainError):
        check_dirichlet_comparison(spec, 1.0, 0.0, 0.1, [[0.0]], n_paths=100)
    with pytest.raises(DomainError):
        check_dirichlet_comparison(spec, 1.0, 0.25, 0.1, [[0.9]], n_paths=100)
