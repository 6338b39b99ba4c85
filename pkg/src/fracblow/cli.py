"""Command-line entry point.

Subcommands: ``verify-kernel``, ``verify-correlation``, ``renewal``,
``simulate`` and ``moments``. Settings come from a flat ``key = value`` file
(``--config``) and may be overridden by flags. Every run writes its CSV and
JSON artifacts and then ``manifest.json``; the manifest exists only for runs
that completed.

Exit codes: 0 success, 2 a mathematical hypothesis is not met, 1 any other
error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, snapshot_grid, validate_config
from .correlation import (
    CorrelationKernel,
    ball_convolution_lower_bound,
    check_dalang,
    grid_infimum,
    infimum_on_ball,
)
from .errors import ConfigError, FracBlowError, HypothesisNotMet
from .field_sim import SigmaSpec, SimulationConfig, simulate_ensemble
from .lattice import ScalarField, make_lattice
from .moments import (
    detect_blowup_proxy,
    dirichlet_experiment,
    horizon_sweep_riesz,
    kappa_sweep,
    series_from_ensemble,
)
from .renewal import (
    RenewalProblem,
    analytic_solution,
    solve_volterra_numeric,
    threshold_A0,
)
from .stable_kernel import (
    StableKernelSpec,
    check_product_bound,
    check_scaling,
    check_two_sided_bound,
    eval_kernel,
    kernel_at_origin,
)

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2


def fmt(x) -> str:
    """Shortest round-trip text for a number; ``nan``/``inf`` spelled out."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


@dataclass
class RunManifest:
    config: dict
    artifacts: list
    wall_clock: float
    versions: dict
    seed: int
    status: str = "completed"


class Run:
    """Artifact writer for one invocation; remembers what it wrote."""

    def __init__(self, out: str):
        self.dir = Path(out)
        self.written: list[Path] = []

    def open(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        probe = self.dir / ".write-test"
        probe.write_text("")
        probe.unlink()

    def csv(self, name: str, header: list[str], rows) -> None:
        path = self.dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
        self.written.append(path)

    def json(self, name: str, payload: dict) -> None:
        path = self.dir / name
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        self.written.append(path)

    def manifest(self, cfg: ExperimentConfig, wall: float) -> RunManifest:
        arts = [
            {"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()} for p in self.written
        ]
        m = RunManifest(
            config=cfg.echo(),
            artifacts=arts,
            wall_clock=wall,
            versions={
                "package": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            seed=cfg["seed"],
        )
        (self.dir / "manifest.json").write_text(json.dumps(_jsonable(m.__dict__), indent=2, sort_keys=True) + "\n")
        return m


def _spec(v) -> StableKernelSpec:
    return StableKernelSpec(v["alpha"], v["dim"])


def _kernel(v):
    k = v["kernel"]
    if k == "white":
        return "white"
    return CorrelationKernel(k, v["dim"], beta=v["beta"] if k == "riesz" else None,
                             alpha_c=v["alpha_c"] if k == "ou" else None)


def _sigma(v) -> SigmaSpec:
    if v["sigma_form"] == "zero":
        return SigmaSpec.zero()
    if v["sigma_form"] == "linear":
        return SigmaSpec.linear(v["lambda"])
    return SigmaSpec.power(v["gamma"])


def _sim_config(v) -> SimulationConfig:
    lat = make_lattice(v["dim"], v["L"], v["n"])
    if v["u0_file"]:
        vals = np.loadtxt(v["u0_file"], dtype=float).reshape(lat.shape)
        u0 = ScalarField(lat, vals)
    else:
        u0 = ScalarField.constant(lat, v["kappa"])
    N = v["trunc_N"] if v["trunc_N"] is not None else 10.0 * u0.sup()
    return SimulationConfig(
        _spec(v), _sigma(v), _kernel(v), lat, u0, v["dt"], v["t_end"], N,
        radius=v["radius"] if v["domain"] == "ball" else None,
        snapshot_times=snapshot_grid(v),
    )


def cmd_verify_kernel(cfg: ExperimentConfig, run: Run, workers: int) -> dict:
    v = cfg.values
    spec = _spec(v)
    t = v["t"]
    xs = np.linspace(-v["x_max"], v["x_max"], v["n_points"])
    pts = xs if spec.dim == 1 else np.c_[xs, np.zeros((xs.size, spec.dim - 1))]
    p = eval_kernel(spec, t, pts)
    closed = None
    if spec.dim == 1 and spec.alpha == 2.0:
        closed = np.exp(-xs**2 / (4 * t)) / math.sqrt(4 * math.pi * t)
    elif spec.dim == 1 and spec.alpha == 1.0:
        closed = t / (math.pi * (t * t + xs**2))
    rows = []
    for i, x in enumerate(xs):
        c = closed[i] if closed is not None else math.nan
        rows.append((t, x, p[i], c, abs(p[i] - c) if closed is not None else math.nan))
    run.csv("kernel.csv", ["t", "x", "p", "closed_form", "abs_err"], rows)
    scaling = check_scaling(spec, 2.0, t, pts[:: max(1, len(pts) // 20)])
    t_mono = t
    while kernel_at_origin(spec, t_mono) > 1.0:
        t_mono *= 2
    mono = check_product_bound(spec, t_mono, v["tau"], pts[:: max(1, len(pts) // 50)])
    heat = check_two_sided_bound(spec, (v["t_min"], v["t_max"]), (-v["x_max"], v["x_max"]), v["resolution"])
    report = {
        "max_abs_err_closed_form": float(np.nanmax([r[4] for r in rows])) if closed is not None else None,
        "scaling_error": scaling,
        "mono": {"t": t_mono, "tau": v["tau"], "violations": len(mono.violations), "hypothesis_met": mono.hypothesis_met},
        "heat": {"c1_hat": heat.c1_hat, "c2_hat": heat.c2_hat, "advisory": heat.advisory},
    }
    run.json("kernel_checks.json", report)
    return report


def cmd_verify_correlation(cfg: ExperimentConfig, run: Run, workers: int) -> dict:
    v = cfg.values
    spec = _spec(v)
    R = v["radius"] if v["radius"] is not None else 1.0
    report: dict = {"kernel": v["kernel"], "dim": v["dim"], "alpha": v["alpha"], "radius": R}
    kernel = _kernel(v)
    if kernel == "white":
        kernel = CorrelationKernel("white", 1)
    verdict = check_dalang(kernel, spec)
    report["dalang"] = {
        "passes": verdict.passes,
        "inconclusive": verdict.inconclusive,
        "condition_used": verdict.condition_used,
        "partial_integral": verdict.diagnostic.get("partial_integral"),
        "beta_below_alpha_and_d": verdict.beta_below_alpha_and_d,
    }
    if kernel.variant != "white":
        report["K_f"] = infimum_on_ball(kernel, R)
        if kernel.dim <= 2:
            report["K_f_grid"] = grid_infimum(kernel, R)
        if spec.dim == 1 and kernel.dim == 1:
            t = (R / 2) ** spec.alpha
            pairs = [(0.0, 0.0), (0.5 * R, -0.5 * R), (-0.9 * R, 0.9 * R)]
            bound = ball_convolution_lower_bound(spec, kernel, t, [0.0, 0.5 * t], pairs, R=R)
            report["ball_convolution_constant"] = bound.constant
            run.csv(
                "ball_convolution.csv",
                ["t", "s", "x1", "x2", "integral", "ratio_to_K_f"],
                [(t, r[0], r[1][0], r[2][0], r[3], r[5]) for r in bound.rows],
            )
    run.json("correlation.json", report)
    return report


def cmd_renewal(cfg: ExperimentConfig, run: Run, workers: int) -> dict:
    v = cfg.values
    pr = RenewalProblem(v["A"], v["B"], v["gamma"], v["alpha"], v["T"], v["form"])
    ana = analytic_solution(pr)
    report = {"form": v["form"], "t_star_analytic": ana.t_star, "analytic_certified": ana.certified}
    if v["form"] == "singular" and v["alpha"] <= 1:
        num = None
        report["note"] = "numeric solve skipped: (t-s)^(-1/alpha) is not integrable for alpha <= 1"
    else:
        num = solve_volterra_numeric(pr, mesh=v["mesh"])
        finite = math.isfinite(num.t_star) and math.isfinite(ana.t_star)
        report.update(
            t_star_numeric=num.t_star,
            t_star_richardson=num.t_star_extrapolated,
            rel_err=abs(num.t_star - ana.t_star) / ana.t_star if finite else None,
            mesh=num.mesh,
        )
    if v["t0"] is not None:
        report["A0"] = threshold_A0(v["B"], v["gamma"], v["alpha"], v["T"], v["t0"])
    run.json("renewal.json", report)
    if v["trajectory"] and num is not None:
        run.csv("trajectory.csv", ["t", "g"], zip(num.times, num.trajectory))
    return report


def _field_rows(cfg: SimulationConfig, ens, M: int):
    lat = cfg.lattice
    coords = lat.coords.reshape(-1, lat.dim)
    for k, t in enumerate(ens.times):
        mean = (ens.field_sum[k] / M).ravel()
        var = (ens.field_sumsq[k] / M).ravel() - mean**2
        for c, m, s in zip(coords, mean, var):
            yield (t, *c, m, max(s, 0.0))


def cmd_simulate(cfg: ExperimentConfig, run: Run, workers: int) -> dict:
    v = cfg.values
    sim = _sim_config(v)
    M = v["paths"]
    ens = simulate_ensemble(sim, M, v["seed"], block=v["block"], workers=workers)
    run.csv("paths.csv", ["path_id", "hit_time"], ((i, h if not math.isnan(h) else "") for i, h in enumerate(ens.hit_times)))
    xcols = ["x"] if sim.lattice.dim == 1 else [f"x{i + 1}" for i in range(sim.lattice.dim)]
    run.csv("snapshots.csv", ["t", *xcols, "mean", "var"], _field_rows(sim, ens, M))
    report = {
        "config": cfg.echo(),
        "trunc_level": sim.trunc_level,
        "clip_mass": ens.clip_mass,
        "hit_fraction_final": float(np.mean(~np.isnan(ens.hit_times))),
    }
    run.json("run.json", report)
    return report


def cmd_moments(cfg: ExperimentConfig, run: Run, workers: int) -> dict:
    v = cfg.values
    if v["horizons"] and not v["beta"] < min(v["alpha"], v["dim"]):
        raise HypothesisNotMet(f"horizon sweep needs beta < alpha ^ d, got beta={v['beta']}, alpha={v['alpha']}, d={v['dim']}")
    sim = _sim_config(v)
    M, seed = v["paths"], v["seed"]
    probes = [p[0] if sim.lattice.dim == 1 else p for p in (v["probes"] or [[0.0] * sim.lattice.dim])]
    pairs = [(i, j) for i in range(len(probes)) for j in range(i, len(probes))]
    report: dict = {"config": cfg.echo(), "threshold": v["threshold"]}
    if sim.radius is not None:
        ex = dirichlet_experiment(sim, v["eps"], probes, M, seed, v["threshold"], block=v["block"], workers=workers)
        series = ex.killed_series
        report["blowup"] = ex.killed.__dict__
        report["free_blowup"] = ex.free.__dict__
        report["killed_not_earlier"] = ex.killed_not_earlier
    else:
        ens = simulate_ensemble(sim, M, seed, probes=probes, block=v["block"], workers=workers)
        series = series_from_ensemble(ens, probes, pairs, sim.trunc_level)
        report["blowup"] = detect_blowup_proxy(series, v["threshold"], kappa=sim.u0.sup()).__dict__
    rows = []
    for k, t in enumerate(series.times):
        for j, p in enumerate(series.probes):
            rows.append((t, "second", " ".join(fmt(c) for c in p), series.second_moment[k, j], series.second_stderr[k, j], series.hit_fraction[k]))
        for j, (a, b) in enumerate(series.pairs):
            label = " ".join(fmt(c) for c in series.probes[a]) + " | " + " ".join(fmt(c) for c in series.probes[b])
            rows.append((t, "cross", label, series.cross_moment[k, j], series.cross_stderr[k, j], series.hit_fraction[k]))
    run.csv("moments.csv", ["t", "kind", "probe", "estimate", "stderr", "hit_fraction"], rows)
    sweep_rows = []
    if v["kappas"]:
        sw = kappa_sweep(sim, v["kappas"], M, seed, v["threshold"], n_boot=v["n_boot"], block=v["block"], workers=workers)
        sweep_rows += [("kappa", k, t0 if t0 is not None else "", frac) for k, t0, frac in sw.rows]
        report["kappa_sweep"] = {
            "nonincreasing": sw.nonincreasing,
            "bootstrap_confidence": sw.bootstrap_confidence,
            "kappa0_hat": sw.kappa0_hat,
            "trunc_level": sw.trunc_level,
        }
    if v["horizons"]:
        hs = horizon_sweep_riesz(sim, sim.u0.sup(), v["horizons"], M, seed, block=v["block"], workers=workers)
        sweep_rows += [("horizon", T, "", frac) for T, frac in hs.rows]
        report["horizon_sweep"] = {
            "nondecreasing": hs.nondecreasing,
            "slope": hs.slope,
            "slope_target": hs.slope_target,
            "slope_ok": hs.slope_ok,
            "diag_times": hs.diag_times,
            "diagnostic": hs.diagnostic,
        }
    if sweep_rows:
        run.csv("sweep.csv", ["sweep", "value", "t0_hat", "hit_fraction"], sweep_rows)
    run.json("report.json", report)
    return report


HANDLERS = {
    "verify-kernel": cmd_verify_kernel,
    "verify-correlation": cmd_verify_correlation,
    "renewal": cmd_renewal,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracblow", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for path ensembles")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("verify-kernel", parents=[common], help="heat-kernel evaluation and bound checks")
    p.add_argument("--alpha", type=float)
    p.add_argument("--dim", type=int)
    p = sub.add_parser("verify-correlation", parents=[common], help="correlation kernel constants and integrability")
    p.add_argument("--kernel", choices=["riesz", "expo", "ou", "poisson", "cauchy", "white"])
    p.add_argument("--beta", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--radius", type=float)
    p = sub.add_parser("renewal", parents=[common], help="renewal blow-up times, analytic and numeric")
    p.add_argument("--A", type=float)
    p.add_argument("--B", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--form", choices=["singular", "power", "constant"])
    p.add_argument("--mesh", type=float)
    p.add_argument("--trajectory", action="store_true", default=None)
    sub.add_parser("simulate", parents=[common], help="path ensemble of the lattice equation")
    sub.add_parser("moments", parents=[common], help="moments, blow-up proxy and sweeps")
    return parser


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    """Dispatch a validated configuration, write its artifacts, then the manifest."""
    run = Run(cfg.out)
    run.open()
    start = time.perf_counter()
    HANDLERS[cfg.command](cfg, run, workers)
    return run.manifest(cfg, time.perf_counter() - start)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_ERROR
        k, val = item.split("=", 1)
        overrides[k.strip()] = val.strip()
    for key in ("alpha", "dim", "kernel", "beta", "radius", "A", "B", "gamma", "T", "form", "mesh", "trajectory", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    try:
        text = Path(args.config).read_text() if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = validate_config(text, args.command, overrides, out=args.out)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_ERROR
    try:
        manifest = run_experiment(cfg, workers=max(1, args.threads))
    except HypothesisNotMet as exc:
        print(f"hypothesis not met: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (FracBlowError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"note: partial artifacts may remain in {cfg.out}; no manifest was written", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps({"out": cfg.out, "artifacts": [a["file"] for a in manifest.artifacts]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
