"""Acceptance suite: one test per primary criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the recorded lines are
repeated in the terminal summary under "acceptance criteria".
"""
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fracblow import cli
from fracblow.correlation import infimum_on_ball, riesz
from fracblow.field_sim import SigmaSpec, SimulationConfig, covariance_row, sample_noise
from fracblow.lattice import ScalarField, make_lattice
from fracblow.moments import (
    dirichlet_experiment,
    estimate_moments,
    horizon_sweep_riesz,
    kappa_sweep,
    linear_moment_oracle,
)
from fracblow.renewal import (
    RenewalProblem,
    blowup_time_power,
    blowup_time_singular,
    solve_volterra_numeric,
    threshold_A0,
)
from fracblow.parallel import stream
from fracblow.stable_kernel import (
    StableKernelSpec,
    check_dirichlet_comparison,
    check_product_bound,
    check_scaling,
    check_two_sided_bound,
    eval_kernel,
)

SWEEP = [(A, g) for A in (1.0, 2.0, 4.0) for g in (0.5, 1.0, 2.0)]


def test_kernel_closed_forms(report):
    xs = np.linspace(-10, 10, 100)
    worst = 0.0
    for t in (0.25, 1.0, 4.0):
        gauss = np.exp(-xs**2 / (4 * t)) / np.sqrt(4 * np.pi * t)
        cauchy = t / (np.pi * (t * t + xs**2))
        worst = max(
            worst,
            np.max(np.abs(eval_kernel(StableKernelSpec(2.0), t, xs) - gauss)),
            np.max(np.abs(eval_kernel(StableKernelSpec(1.0), t, xs) - cauchy)),
        )
    scale = max(
        check_scaling(StableKernelSpec(a), s, 1.0, np.linspace(-6, 6, 41))
        for a in (0.6, 1.3, 1.5, 1.8)
        for s in (0.3, 2.5)
    )
    ok = worst <= 1e-8 and scale <= 1e-5
    assert report("kernel closed forms", ok, f"max abs err {worst:.2e} (tol 1e-8), scaling err {scale:.2e} (tol 1e-5)")


def test_product_bound_mono(report):
    xs = np.linspace(-10, 10, 200)
    counts = {}
    for a in (1.0, 1.5, 2.0):
        rep = check_product_bound(StableKernelSpec(a), 1.0, 2.0, xs)
        assert rep.hypothesis_met and rep.grid["n_pairs"] == 200 * 200
        counts[a] = len(rep.violations)
    ok = all(v == 0 for v in counts.values())
    assert report("product bound, tau=2", ok, f"violations per alpha {counts}")


def test_two_sided_heat_bound(report):
    detail = []
    ok = True
    for a in (1.2, 1.5, 1.8):
        spec = StableKernelSpec(a)
        coarse = check_two_sided_bound(spec, (0.1, 10.0), 10.0, 40)
        fine = check_two_sided_bound(spec, (0.1, 10.0), 10.0, 80)
        d1 = abs(fine.c1_hat / coarse.c1_hat - 1)
        d2 = abs(fine.c2_hat / coarse.c2_hat - 1)
        good = coarse.c1_hat > 0 and math.isfinite(coarse.c2_hat) and d1 <= 0.1 and d2 <= 0.1
        ok &= good
        detail.append(f"a={a}: c1={fine.c1_hat:.3f} ({d1:.1%}), c2={fine.c2_hat:.3f} ({d2:.1%})")
    assert report("two-sided heat bound constants", ok, "; ".join(detail))


def test_volterra_constant_kernel_sweep(report):
    worst = 0.0
    for A, g in SWEEP:
        exact = blowup_time_singular(A, 1.0, g, 2.0, 1.0)
        sol = solve_volterra_numeric(RenewalProblem(A, 1.0, g, 2.0, 1.0, "constant"))
        worst = max(worst, abs(sol.t_star / exact - 1))
    assert report("constant-kernel Volterra sweep", worst <= 0.02, f"max rel err {worst:.2e} (tol 2e-2)")


def test_threshold_property(report):
    fails = []
    for A, g in SWEEP:
        a0 = threshold_A0(1.0, g, 2.0, 1.0, 0.5)
        t = blowup_time_singular(1.01 * a0, 1.0, g, 2.0, 1.0)
        if not t < 0.5:
            fails.append((A, g, t))
    assert report("threshold A0 gives t* < T/2", not fails, f"{len(SWEEP)} points, failures {fails}")


def test_power_form_closed_form_and_ode(report):
    t = blowup_time_power(1.0, 1.0, 0.5, 2.0)
    # g' = B g^{1+gamma} t^{-p} with p = (1+gamma)/alpha, g(1) = A
    p = 0.75
    blow = lambda s, g: g[0] - 1e8
    blow.terminal = True
    ode = solve_ivp(lambda s, g: [g[0] ** 1.5 * s**-p], (1.0, 50.0), [1.0], events=blow, rtol=1e-10, atol=1e-12)
    t_ode = float(ode.t_events[0][0])
    rel = abs(t_ode / t - 1)
    ok = t == 5.0625 and rel <= 0.01
    assert report("power-form blow-up time", ok, f"t*={t!r} (exact 5.0625), ODE {t_ode:.5f} rel {rel:.1e}")


def test_noise_covariance(report):
    lat = make_lattice(1, 8.0, 256)
    dt = 1e-3
    rng = stream(7, 0)
    draws = np.stack([sample_noise(lat, "white", dt, rng).values for _ in range(100_000)])
    var = draws.var(axis=0)
    target = dt / lat.spacing
    white_err = float(np.max(np.abs(var / target - 1)))
    del draws

    kern = riesz(0.5, 1)
    rng = stream(8, 0)
    draws = np.stack([sample_noise(lat, kern, dt, rng).values for _ in range(10_000)])
    row = covariance_row(lat, kern) * dt
    zs = []
    for lag in (1, 2, 4, 8, 16):
        prod = draws[:, 0] * draws[:, lag]
        zs.append(abs(prod.mean() - row[lag]) / (prod.std(ddof=1) / math.sqrt(prod.size)))
    ok = white_err <= 0.05 and max(zs) <= 3
    assert report(
        "noise covariance",
        ok,
        f"white max per-site rel err {white_err:.2%} (tol 5%), Riesz lag z-scores {[round(float(z), 2) for z in zs]} (tol 3)",
    )


@pytest.mark.slow
def test_linear_sigma_cross_validation(report):
    spec = StableKernelSpec(2.0)
    lat = make_lattice(1, 16.0, 512)
    times = (0.1, 0.2, 0.3, 0.4, 0.5)
    cfg = SimulationConfig(
        spec, SigmaSpec.linear(1.0), "white", lat, ScalarField.constant(lat, 1.0),
        dt=1e-3, t_end=0.5, trunc_level=1e6, snapshot_times=times,
    )
    series = estimate_moments(cfg, [[0.0]], M=10_000, seed=11)
    oracle = linear_moment_oracle(1.0, spec, 1.0, times)
    z = np.abs(series.second_moment[:, 0] - oracle.values) / series.second_stderr[:, 0]
    ok = bool(np.all(z <= 3))
    pairs = ", ".join(f"{m:.4f}/{o:.4f}" for m, o in zip(series.second_moment[:, 0], oracle.values))
    assert report("linear sigma cross-validation", ok, f"MC/oracle {pairs}; z {np.round(z, 2).tolist()} (tol 3)")


def _power_cfg(sigma, snapshots):
    lat = make_lattice(1, 8.0, 128)
    return SimulationConfig(
        StableKernelSpec(1.5), sigma, "white", lat, ScalarField.constant(lat, 1.0),
        dt=1e-3, t_end=1.0, trunc_level=10.0, snapshot_times=snapshots,
    )


@pytest.mark.slow
def test_kappa_sweep(report):
    snaps = tuple(np.round(np.arange(1, 501) * 2e-3, 10))
    sweep = kappa_sweep(_power_cfg(SigmaSpec.power(1.0), snaps), [1.0, 4.0, 16.0], M=1000, seed=3)
    control = kappa_sweep(_power_cfg(SigmaSpec.zero(), snaps), [1.0, 4.0, 16.0], M=1000, seed=3)
    none_in_control = all(r[1] is None for r in control.rows)
    ok = sweep.nonincreasing and sweep.bootstrap_confidence >= 0.95 and none_in_control
    rows = [(k, t0) for k, t0, *_ in sweep.rows]
    assert report(
        "kappa sweep blow-up proxy",
        ok,
        f"t0_hat {rows}, bootstrap {sweep.bootstrap_confidence:.3f} (tol 0.95), sigma=0 control silent: {none_in_control}",
    )


@pytest.mark.slow
def test_riesz_growth_slope(report):
    lat = make_lattice(1, 8.0, 256)
    cfg = SimulationConfig(
        StableKernelSpec(1.5), SigmaSpec.power(1.0), riesz(0.5, 1), lat, ScalarField.constant(lat, 0.1),
        dt=1e-3, t_end=1.0, trunc_level=1.0,
    )
    sweep = horizon_sweep_riesz(cfg, 0.1, [0.5, 1.0], M=500, seed=5)
    target = (1.5 - 0.5) / 1.5 - 0.15
    ok = sweep.slope >= target
    assert report("Riesz growth diagnostic slope", ok, f"slope {sweep.slope:.3f} over t in [0.1, 1] (target >= {target:.4f})")


@pytest.mark.slow
def test_dirichlet_comparison(report):
    spec = StableKernelSpec(1.5)
    eps = 0.25
    grid = [[-0.7], [-0.35], [0.0], [0.35], [0.7]]
    comp = check_dirichlet_comparison(spec, 1.0, eps, eps**1.5, grid, n_paths=100_000, seed=2)

    lat = make_lattice(1, 4.0, 256)
    cfg = SimulationConfig(
        spec, SigmaSpec.power(1.0), "white", lat, ScalarField.ball_indicator(lat, 1.0, 2.0),
        dt=1e-3, t_end=0.2, trunc_level=20.0, radius=1.0,
        snapshot_times=tuple(np.round(np.arange(1, 201) * 1e-3, 10)),
    )
    exp = dirichlet_experiment(cfg, eps, [[0.0], [0.5]], M=1000, seed=4)
    ok = comp.c_lower > 0 and exp.killed_not_earlier
    assert report(
        "Dirichlet comparison",
        ok,
        f"c_hat {comp.c_hat:.3f}, 99% lower {comp.c_lower:.3f}; t0_hat killed {exp.killed.t0_hat} vs free {exp.free.t0_hat}",
    )


def test_infimum_on_ball_exact(report):
    worst_unit = worst_scale = 0.0
    for beta in (0.1, 0.5, 0.9):
        for d in (1, 2, 3):
            if not beta < d:
                continue
            k = riesz(beta, d)
            k1 = infimum_on_ball(k, 1.0)
            worst_unit = max(worst_unit, abs(k1 - 2.0**-beta) / 2.0**-beta)
            for R in (0.1, 3.0, 17.5):
                worst_scale = max(worst_scale, abs(infimum_on_ball(k, R) - R**-beta * k1) / (R**-beta * k1))
    eps = np.finfo(float).eps
    ok = worst_unit <= 2 * eps and worst_scale <= 4 * eps
    assert report("Riesz infimum on the ball", ok, f"unit rel err {worst_unit:.1e}, scaling rel err {worst_scale:.1e}")


CLI_CASES = {
    "verify-kernel": "alpha = 1.5\nn_points = 50\nresolution = 20\n",
    "verify-correlation": "kernel = riesz\nbeta = 0.5\nalpha = 1.5\n",
    "renewal": "A = 2\nB = 1\ngamma = 1\nalpha = 2\nform = constant\ntrajectory = true\n",
    "simulate": "alpha = 1.5\nkernel = white\nL = 8\nn = 64\ndt = 0.01\nt_end = 0.5\npaths = 20\nkappa = 1\n",
    "moments": "alpha = 1.5\nkernel = riesz\nbeta = 0.5\nL = 8\nn = 64\ndt = 0.01\nt_end = 0.5\npaths = 100\nkappa = 1\nprobes = 0, 0.5\n",
}


def _run_cli(tmp: Path, cmd: str, text: str, name: str) -> dict[str, bytes]:
    conf = tmp / f"{cmd}.cfg"
    conf.write_text(text)
    out = tmp / name
    assert cli.main([cmd, "--config", str(conf), "--seed", "9", "--out", str(out)]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_cli_determinism(report, tmp_path):
    differ = []
    for cmd, text in CLI_CASES.items():
        a = _run_cli(tmp_path, cmd, text, f"{cmd}-a")
        b = _run_cli(tmp_path, cmd, text, f"{cmd}-b")
        if not a or a != b:
            differ.append(cmd)
    assert report("CLI determinism", not differ, f"{len(CLI_CASES)} subcommands, differing: {differ}")
