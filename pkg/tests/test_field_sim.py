import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracblow.correlation import exponential_type, ornstein_uhlenbeck, riesz
from fracblow.errors import ContractError, DomainError, HypothesisNotMet, UnsupportedVariant
from fracblow.field_sim import (
    FieldState,
    SigmaSpec,
    SimulationConfig,
    covariance_row,
    dirichlet_deterministic_check,
    riesz_cell_average,
    run_path,
    sample_noise,
    simulate_ensemble,
    step_mild,
)
from fracblow.lattice import ScalarField, make_lattice
from fracblow.parallel import stream
from fracblow.stable_kernel import StableKernelSpec, apply_semigroup

SPEC = StableKernelSpec(1.5)
LAT = make_lattice(1, 8.0, 64)


def _cfg(sigma=SigmaSpec.power(1.0), noise="white", kappa=1.0, N=10.0, radius=None, snaps=(0.1, 0.2, 0.5), lat=LAT, dt=0.01):
    return SimulationConfig(SPEC, sigma, noise, lat, ScalarField.constant(lat, kappa), dt, 0.5, N, radius, snaps)


def test_lattice_geometry():
    lat = make_lattice(2, 4.0, 16)
    assert lat.spacing == 0.5 and lat.shape == (16, 16) and lat.cell_volume == 0.25
    assert lat.coords.shape == (16, 16, 2)
    assert lat.ball_mask(1.0).sum() == np.sum(lat.radius < 1.0)
    assert lat.site_index([0.0, 0.0]) == (8, 8)


def test_sigma_forms():
    assert SigmaSpec.power(1.0)(-2.0) == 4.0
    assert SigmaSpec.linear(0.5)(-2.0) == -1.0
    assert SigmaSpec.zero().is_zero
    good = SigmaSpec("custom", gamma=1.0, table=((0.0, 1.0, 2.0), (0.0, 1.5, 9.0)))
    bad = SigmaSpec("custom", gamma=1.0, table=((0.0, 1.0, 2.0), (0.0, 0.5, 9.0)))
    assert good.compliant and not bad.compliant
    assert not SigmaSpec.linear(1.0).compliant
    with pytest.raises(DomainError):
        SigmaSpec("custom", table=((1.0, 0.0), (0.0, 1.0)))


def test_noise_edge_cases():
    rng = stream(0, 0)
    assert np.all(sample_noise(LAT, "white", 0.0, rng).values == 0)
    with pytest.raises(UnsupportedVariant):
        sample_noise(LAT, exponential_type(1), 0.01, rng)
    with pytest.raises(DomainError):
        sample_noise(LAT, "white", -1.0, rng)


def test_white_noise_variance():
    rng = stream(1, 0)
    draws = np.stack([sample_noise(LAT, "white", 0.01, rng).values for _ in range(20_000)])
    assert np.allclose(draws.var(axis=0), 0.01 / LAT.spacing, rtol=0.06)


def test_colored_noise_covariance():
    kern = ornstein_uhlenbeck(1.0)
    rng = stream(2, 0)
    draws = np.stack([sample_noise(LAT, kern, 0.1, rng).values for _ in range(20_000)])
    row = covariance_row(LAT, kern)
    for lag in (0, 1, 3, 8):
        emp = np.mean(draws[:, 5] * draws[:, 5 + lag])
        assert abs(emp - 0.1 * row[lag]) < 0.05 * 0.1


def test_riesz_diagonal_is_cell_average():
    beta = 0.5
    assert math.isclose(riesz_cell_average(beta, 1), 2 / ((1 - beta) * (2 - beta)))
    row = covariance_row(LAT, riesz(beta))
    h = LAT.spacing
    assert math.isclose(row[0], h**-beta * riesz_cell_average(beta, 1))
    assert math.isclose(row[2], (2 * h) ** -beta)


def test_zero_sigma_reduces_to_semigroup():
    lat = make_lattice(1, 8.0, 128)
    u0 = ScalarField.ball_indicator(lat, 1.0, 2.0)
    rec = run_path(SPEC, SigmaSpec.zero(), "white", lat, u0, 0.01, 0.3, 10.0, seed=0, snapshot_times=(0.3,))
    ref = u0
    for _ in range(30):
        ref = apply_semigroup(SPEC, 0.01, ref, clip=False)
    assert np.allclose(rec.snapshots[-1], ref.values, atol=1e-13)
    assert rec.hit_time is None


def test_linear_sigma_mean_follows_semigroup():
    lat = make_lattice(1, 8.0, 64)
    u0 = ScalarField.ball_indicator(lat, 2.0, 1.0)
    cfg = SimulationConfig(SPEC, SigmaSpec.linear(1.0), "white", lat, u0, 0.01, 0.2, 1e6, snapshot_times=(0.2,))
    ens = simulate_ensemble(cfg, 2000, seed=3, probes=[[0.0], [1.5]])
    want = apply_semigroup(SPEC, 0.2, u0, clip=False).values
    for j, p in enumerate((0.0, 1.5)):
        vals = ens.probe_values[:, -1, j]
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - want[lat.site_index([p])]) < 4 * se


def test_run_path_is_deterministic_and_matches_ensemble():
    cfg = _cfg()
    a = run_path(SPEC, cfg.sigma, "white", LAT, cfg.u0, 0.01, 0.5, 10.0, seed=5, snapshot_times=cfg.snapshot_times, path_index=3)
    b = run_path(SPEC, cfg.sigma, "white", LAT, cfg.u0, 0.01, 0.5, 10.0, seed=5, snapshot_times=cfg.snapshot_times, path_index=3)
    assert np.array_equal(a.snapshots, b.snapshots)
    ens = simulate_ensemble(cfg, 6, seed=5, probes=[[0.0]], block=4)
    k = LAT.site_index([0.0])
    assert np.array_equal(ens.probe_values[3, :, 0], a.snapshots[:, k[0]])


def test_ensemble_independent_of_block_and_workers():
    cfg = _cfg(noise=riesz(0.5))
    a = simulate_ensemble(cfg, 12, seed=1, probes=[[0.0]], block=5)
    b = simulate_ensemble(cfg, 12, seed=1, probes=[[0.0]], block=12, workers=2)
    assert np.array_equal(a.probe_values, b.probe_values)
    assert np.array_equal(a.hit_times, b.hit_times, equal_nan=True)


def test_dead_path_contract():
    u0 = ScalarField.constant(LAT, 5.0)
    state = FieldState(u0, 0.0, 6.0)
    rng = stream(0, 0)
    while state.alive:
        state = step_mild(state, SPEC, SigmaSpec.power(1.0), LAT, 0.01, rng)
    assert state.hit_time is not None
    with pytest.raises(ContractError):
        step_mild(state, SPEC, SigmaSpec.power(1.0), LAT, 0.01, rng)


def test_initial_sup_above_truncation_rejected():
    with pytest.raises(DomainError):
        FieldState(ScalarField.constant(LAT, 3.0), 0.0, 2.0)
    with pytest.raises(DomainError):
        _cfg(kappa=3.0, N=2.0)


def test_killed_domain_is_zero_outside_ball():
    cfg = _cfg(radius=1.0)
    rec = run_path(SPEC, cfg.sigma, "white", LAT, cfg.u0, 0.01, 0.5, 10.0, seed=2, radius=1.0, snapshot_times=(0.1,))
    assert np.all(rec.snapshots[-1][~LAT.ball_mask(1.0)] == 0)


def test_killed_below_free_without_noise():
    lat = make_lattice(1, 8.0, 128)
    u0 = ScalarField.ball_indicator(lat, 1.5, 1.0)
    args = (SPEC, SigmaSpec.zero(), "white", lat, u0, 0.01, 0.3, 10.0, 0)
    killed = run_path(*args, radius=1.0, snapshot_times=(0.1, 0.3))
    free = run_path(*args, snapshot_times=(0.1, 0.3))
    assert np.all(killed.snapshots <= free.snapshots + 1e-12)


def test_killed_mean_below_free_mean():
    lat = make_lattice(1, 8.0, 64)
    base = _cfg(sigma=SigmaSpec.power(1.0), kappa=0.5, lat=lat)
    killed = simulate_ensemble(dataclasses.replace(base, radius=1.0), 400, 4)
    free = simulate_ensemble(base, 400, 4)
    inside = lat.ball_mask(1.0)

    def mean_se(ens, M=400):
        m = ens.field_sum[:, inside] / M
        return m, np.sqrt(np.maximum(ens.field_sumsq[:, inside] / M - m * m, 0) / (M - 1))

    (mk, sk), (mf, sf) = mean_se(killed), mean_se(free)
    assert np.all(mk <= mf + 3 * np.hypot(sk, sf))
    assert np.mean(mk) < np.mean(mf)


def test_truncation_kills_and_freezes():
    cfg = _cfg(kappa=2.0, N=3.0, snaps=(0.25, 0.5))
    ens = simulate_ensemble(cfg, 50, seed=8, probes=[[0.0]])
    dead = ~ens.alive[:, -1]
    assert dead.any()
    assert np.all(np.isfinite(ens.hit_times[dead]))
    died_early = ~ens.alive[:, 0]
    assert np.array_equal(ens.probe_values[died_early, 0], ens.probe_values[died_early, 1])


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 5.0))
def test_dirichlet_check_is_linear_in_data(c):
    lat = make_lattice(1, 4.0, 128)
    u0 = ScalarField.ball_indicator(lat, 1.0, 1.0)
    one = dirichlet_deterministic_check(SPEC, 1.0, u0, [0.1], [[0.0], [0.25]], n_paths=2000, seed=1)
    scaled = dirichlet_deterministic_check(SPEC, 1.0, ScalarField(lat, c * u0.values), [0.1], [[0.0], [0.25]], n_paths=2000, seed=1)
    assert math.isclose(scaled.estimate, c * one.estimate, rel_tol=1e-12)


def test_dirichlet_check_bounds_and_guards():
    lat = make_lattice(1, 4.0, 128)
    u0 = ScalarField.ball_indicator(lat, 1.0, 1.0)
    res = dirichlet_deterministic_check(SPEC, 1.0, u0, [0.05, 0.3], [[0.0], [0.4]], n_paths=5000)
    assert 0 < res.lower <= res.estimate <= 1
    with pytest.raises(HypothesisNotMet):
        dirichlet_deterministic_check(SPEC, 1.0, u0, [0.5], [[0.0]], n_paths=100)
    with pytest.raises(DomainError):
        dirichlet_deterministic_check(SPEC, 1.0, u0, [0.1], [[0.6]], n_paths=100)
