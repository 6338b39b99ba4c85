"""Monte Carlo moments, truncation-hit blow-up proxies and the sweeps built on them.

Moments are truncated: an alive path contributes ``min(|u|, N)^2`` and a
path that has hit the truncation level contributes ``N^2``, the most its
truncated value can be. Blow-up is read off the fraction of paths that have
hit the level.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .correlation import CorrelationKernel
from .errors import DomainError, HypothesisNotMet, NumericalAccuracyError, UnsupportedVariant
from .field_sim import Ensemble, SimulationConfig, simulate_ensemble
from .lattice import ScalarField
from .parallel import stream
from .renewal import RenewalProblem, linear_trajectory
from .stable_kernel import StableKernelSpec, eval_kernel

MIN_PATHS = 100


@dataclass
class MomentSeries:
    """Truncated moment estimates at each snapshot time.

    ``second_moment[k, j]`` estimates ``E min(|u_t(x_j)|, N)^2`` at
    ``times[k]``; ``cross_moment[k, j]`` estimates
    ``E min(|u_t(x) u_t(y)|, N^2)`` for the ``j``-th pair.
    """

    times: np.ndarray
    probes: list
    pairs: list
    second_moment: np.ndarray
    second_stderr: np.ndarray
    cross_moment: np.ndarray
    cross_stderr: np.ndarray
    hit_fraction: np.ndarray
    trunc_level: float
    n_paths: int


@dataclass
class BlowupReport:
    """Blow-up proxy verdict: ``detected`` or ``none_within_horizon``."""

    verdict: str
    t0_hat: float | None
    kappa: float | None = None
    threshold: float = 0.5
    config: dict = field(default_factory=dict)

    @property
    def detected(self) -> bool:
        return self.verdict == "detected"


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(m)


def truncated_squares(values: np.ndarray, alive: np.ndarray, N: float) -> np.ndarray:
    """``min(|u|, N)^2`` for alive paths and ``N^2`` for dead ones; ``alive`` broadcasts."""
    out = np.minimum(np.abs(values), N) ** 2
    return np.where(alive, out, N * N)


def series_from_ensemble(ens: Ensemble, probes: Sequence, pairs: Sequence, N: float) -> MomentSeries:
    """Truncated moments from an ensemble whose probe values follow ``probes``.

    ``pairs`` holds index pairs into ``probes``.
    """
    pv = ens.probe_values
    alive = ens.alive[:, :, None]
    sq = truncated_squares(pv, alive, N)
    m2, se2 = _mean_se(sq)
    if pairs:
        i = np.array([p[0] for p in pairs])
        j = np.array([p[1] for p in pairs])
        prod = np.minimum(np.abs(pv[:, :, i] * pv[:, :, j]), N * N)
        prod = np.where(alive, prod, N * N)
        mc, sec = _mean_se(prod)
    else:
        mc = sec = np.empty((len(ens.times), 0))
    return MomentSeries(
        times=np.asarray(ens.times),
        probes=[np.atleast_1d(np.asarray(p, dtype=float)).tolist() for p in probes],
        pairs=[tuple(p) for p in pairs],
        second_moment=m2,
        second_stderr=se2,
        cross_moment=mc,
        cross_stderr=sec,
        hit_fraction=1.0 - ens.alive.mean(axis=0),
        trunc_level=N,
        n_paths=pv.shape[0],
    )


def estimate_moments(
    cfg: SimulationConfig,
    probes: Sequence,
    pairs: Sequence = (),
    M: int = 1000,
    seed: int = 0,
    block: int = 250,
    workers: int = 1,
) -> MomentSeries:
    """Run ``M`` paths and estimate truncated second and cross moments at the snapshots.

    ``probes`` are lattice sites; ``pairs`` index into ``probes``.
    """
    if M < MIN_PATHS:
        raise DomainError(f"need at least {MIN_PATHS} paths, got {M}")
    for a, b in pairs:
        if not (0 <= a < len(probes) and 0 <= b < len(probes)):
            raise DomainError(f"pair {(a, b)} does not index the probe list")
    ens = simulate_ensemble(cfg, M, seed, probes=probes, block=block, workers=workers)
    return series_from_ensemble(ens, probes, pairs, cfg.trunc_level)


@dataclass
class MomentOracle:
    times: np.ndarray
    values: np.ndarray
    mesh: float
    mesh_change: float


def linear_moment_oracle(
    lam: float,
    spec: StableKernelSpec,
    kappa,
    times,
    mesh: float | None = None,
    tol: float = 5e-3,
) -> MomentOracle:
    """Second moment of the linear equation ``sigma(u) = lam u`` driven by white noise.

    With constant initial datum ``kappa`` the second moment is the same at
    every site and solves ``m(t) = kappa^2 + lam^2 int_0^t m(s) q(t-s) ds``
    with ``q(r) = int p_r(y)^2 dy = p_{2r}(0) = p_1(0) (2r)^{-1/alpha}``.
    The equation is solved by product integration at ``mesh`` and
    ``mesh/2`` and Richardson-extrapolated; a relative change above ``tol``
    between the two meshes raises.
    """
    if spec.dim != 1 or not 1.0 < spec.alpha <= 2.0:
        raise DomainError("the white-noise moment equation needs d = 1 and 1 < alpha <= 2")
    if isinstance(kappa, ScalarField):
        vals = kappa.values
        if not np.all(vals == vals.flat[0]):
            raise UnsupportedVariant("the moment oracle needs a constant initial datum")
        kappa = float(vals.flat[0])
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("times must be >= 0")
    if mesh is None:
        mesh = float(times.max()) / 2000 if times.max() > 0 else 1e-3
    if lam == 0 or kappa == 0 or times.max() == 0:
        return MomentOracle(times, np.full(times.shape, kappa * kappa), mesh, 0.0)
    B = lam * lam * float(eval_kernel(spec, 1.0, 0.0)) * 2.0 ** (-1.0 / spec.alpha)
    problem = RenewalProblem(kappa * kappa, B, 0.0, spec.alpha, kernel_form="singular")
    values, change = linear_trajectory(problem, times, mesh)
    if change > tol:
        raise NumericalAccuracyError(f"oracle changed by {change:.2%} under mesh halving (> {tol:.1%})")
    return MomentOracle(times, values, mesh, change)


def first_crossing(times, hit_fraction, threshold: float) -> float | None:
    idx = np.flatnonzero(np.asarray(hit_fraction) >= threshold)
    return float(np.asarray(times)[idx[0]]) if idx.size else None


def detect_blowup_proxy(series: MomentSeries, threshold: float = 0.5, kappa: float | None = None) -> BlowupReport:
    """``t0_hat``: first snapshot where the hit fraction reaches ``threshold``."""
    if not 0 < threshold <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    t0 = first_crossing(series.times, series.hit_fraction, threshold)
    return BlowupReport(
        "detected" if t0 is not None else "none_within_horizon",
        t0,
        kappa,
        threshold,
        {"trunc_level": series.trunc_level, "n_paths": series.n_paths},
    )


def _hit_fraction(hit_times: np.ndarray, times) -> np.ndarray:
    h = np.where(np.isnan(hit_times), np.inf, hit_times)
    return np.array([(h <= t + 1e-12).mean() for t in times])


def _t0_from_hits(hit_times: np.ndarray, times, threshold: float) -> float:
    t0 = first_crossing(times, _hit_fraction(hit_times, times), threshold)
    return math.inf if t0 is None else t0


@dataclass
class KappaSweep:
    """Per-level rows ``(kappa, t0_hat or None, final hit fraction)`` and the ordering verdict."""

    rows: list
    nonincreasing: bool
    bootstrap_confidence: float
    kappa0_hat: float | None
    trunc_level: float
    reports: list = field(default_factory=list)


def _with_level(cfg: SimulationConfig, kappa: float, N: float) -> SimulationConfig:
    u0 = cfg.u0
    sup = u0.sup()
    if sup == 0:
        raise DomainError("initial datum is identically zero")
    vals = u0.values * (kappa / sup)
    return dataclasses.replace(cfg, u0=ScalarField(cfg.lattice, vals), trunc_level=N)


def kappa_sweep(
    cfg: SimulationConfig,
    kappas: Sequence[float],
    M: int,
    seed: int,
    threshold: float = 0.5,
    trunc_factor: float = 10.0,
    n_boot: int = 1000,
    block: int = 250,
    workers: int = 1,
) -> KappaSweep:
    """Blow-up proxy at each initial level ``kappa``.

    The initial datum of ``cfg`` is rescaled to sup ``kappa``; every level
    shares the truncation level ``trunc_factor * max(kappas)`` and the path
    seeds, so the levels are compared on common noise. The ordering of
    ``t0_hat`` is bootstrapped by resampling paths jointly across levels;
    ``bootstrap_confidence`` is the share of replicates in which ``t0_hat``
    is nonincreasing in ``kappa`` (undetected counts as infinite).
    """
    kappas = [float(k) for k in kappas]
    if len(kappas) < 3:
        raise DomainError("a sweep needs at least 3 levels")
    if any(b <= a for a, b in zip(kappas, kappas[1:])):
        raise DomainError("kappas must be strictly increasing")
    if M < MIN_PATHS:
        raise DomainError(f"need at least {MIN_PATHS} paths, got {M}")
    N = trunc_factor * kappas[-1]
    times = cfg.snapshot_times
    hits, rows, reports = [], [], []
    for k in kappas:
        ens = simulate_ensemble(_with_level(cfg, k, N), M, seed, block=block, workers=workers)
        hits.append(ens.hit_times)
        frac = _hit_fraction(ens.hit_times, times)
        t0 = first_crossing(times, frac, threshold)
        rows.append((k, t0, float(frac[-1])))
        reports.append(
            BlowupReport("detected" if t0 is not None else "none_within_horizon", t0, k, threshold, {"trunc_level": N})
        )

    def ordered(seq) -> bool:
        return all(b <= a for a, b in zip(seq, seq[1:]))

    point = [math.inf if r[1] is None else r[1] for r in rows]
    rng = stream(seed, 2**31 - 1)
    hits = np.stack(hits)
    good = 0
    for _ in range(n_boot):
        idx = rng.integers(0, M, M)
        good += ordered([_t0_from_hits(h[idx], times, threshold) for h in hits])
    detected = [r[0] for r in rows if r[1] is not None]
    return KappaSweep(
        rows=rows,
        nonincreasing=ordered(point),
        bootstrap_confidence=good / n_boot,
        kappa0_hat=detected[0] if detected else None,
        trunc_level=N,
        reports=reports,
    )


@dataclass
class RieszSweep:
    """Hit fraction per horizon and the growth diagnostic of the centred cross moment."""

    rows: list
    nondecreasing: bool
    diag_times: np.ndarray
    diagnostic: np.ndarray
    diagnostic_stderr: np.ndarray
    slope: float
    slope_target: float
    slope_ok: bool


def translated_pairs(cfg: SimulationConfig, separation_sites: int, count: int) -> tuple[list, list]:
    """Probe sites and index pairs for ``count`` translates of a pair ``separation_sites`` apart.

    The first translate is centred on the origin; the others are spread
    evenly over the lattice (1-D line of sites along the first axis).
    """
    lat = cfg.lattice
    n, h = lat.n, lat.spacing
    o = n // 2
    probes, pairs = [], []
    step = max(n // count, 1)
    for c in range(count):
        a = (o + c * step) % n
        b = (a + separation_sites) % n
        pa = np.zeros(lat.dim)
        pb = np.zeros(lat.dim)
        pa[0] = lat.axis[a]
        pb[0] = lat.axis[b]
        probes += [pa if lat.dim > 1 else float(pa[0]), pb if lat.dim > 1 else float(pb[0])]
        pairs.append((2 * c, 2 * c + 1))
    return probes, pairs


def centred_cross(ens: Ensemble, pairs: Sequence, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``(u_x - kappa)(u_y - kappa)`` over paths and pair translates, with its stderr.

    Valid for a constant initial datum ``kappa``, where ``G u = kappa``.
    Paths that have hit the truncation level are excluded from the mean.
    """
    pv = ens.probe_values - kappa
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    per_path = (pv[:, :, i] * pv[:, :, j]).mean(axis=2)
    out, se = [], []
    for k in range(per_path.shape[1]):
        v = per_path[ens.alive[:, k], k]
        out.append(v.mean())
        se.append(v.std(ddof=1) / math.sqrt(v.size))
    return np.array(out), np.array(se)


def horizon_sweep_riesz(
    cfg: SimulationConfig,
    kappa: float,
    horizons: Sequence[float],
    M: int,
    seed: int,
    diag_times: Sequence[float] | None = None,
    pair_copies: int = 16,
    block: int = 250,
    workers: int = 1,
) -> RieszSweep:
    """Hit fraction at each horizon, and the growth of the centred cross moment.

    One ensemble up to ``max(horizons)`` serves every horizon. The
    diagnostic is ``E (u_t(x) - kappa)(u_t(y) - kappa)`` at a pair of
    neighbouring sites near the origin (inside ``B(0, t^{1/alpha})`` for every
    diagnostic time), averaged over ``pair_copies`` translates. Its log-log
    slope against ``t`` is compared with ``(alpha - beta)/alpha - 0.15``.
    """
    noise = cfg.noise
    if not (isinstance(noise, CorrelationKernel) and noise.variant == "riesz"):
        raise DomainError("horizon sweep needs Riesz-correlated noise")
    a, d = cfg.spec.alpha, cfg.spec.dim
    if not noise.beta < min(a, d):
        raise HypothesisNotMet(f"needs beta < alpha ^ d, got beta={noise.beta}, alpha={a}, d={d}")
    if not kappa > 0:
        raise DomainError("kappa must be > 0")
    if M < MIN_PATHS:
        raise DomainError(f"need at least {MIN_PATHS} paths, got {M}")
    horizons = sorted(float(t) for t in horizons)
    if diag_times is None:
        diag_times = np.geomspace(horizons[-1] / 10, horizons[-1], 6)
    diag_times = [float(t) for t in diag_times]
    t_end = max(horizons + diag_times)
    steps = sorted({round(t / cfg.dt) for t in horizons + diag_times})
    run = dataclasses.replace(
        cfg,
        u0=ScalarField.constant(cfg.lattice, kappa),
        t_end=t_end,
        snapshot_times=tuple(k * cfg.dt for k in steps),
    )
    probes, pairs = translated_pairs(run, 1, pair_copies)
    ens = simulate_ensemble(run, M, seed, probes=probes, block=block, workers=workers)
    frac = _hit_fraction(ens.hit_times, horizons)
    rows = list(zip(horizons, frac.tolist()))
    cen, se = centred_cross(ens, pairs, kappa)
    pick = [run.snapshot_times.index(round(t / cfg.dt) * cfg.dt) for t in diag_times]
    y = cen[pick]
    tt = np.array([run.snapshot_times[k] for k in pick])
    target = (a - noise.beta) / a - 0.15
    if np.all(y > 0):
        slope = float(np.polyfit(np.log(tt), np.log(y), 1)[0])
    else:
        slope = math.nan
    return RieszSweep(
        rows=rows,
        nondecreasing=bool(np.all(np.diff(frac) >= 0)),
        diag_times=tt,
        diagnostic=y,
        diagnostic_stderr=se[pick],
        slope=slope,
        slope_target=target,
        slope_ok=bool(slope >= target),
    )


@dataclass
class DirichletExperiment:
    killed: BlowupReport
    free: BlowupReport
    killed_series: MomentSeries
    free_series: MomentSeries

    @property
    def killed_not_earlier(self) -> bool:
        tk = math.inf if self.killed.t0_hat is None else self.killed.t0_hat
        tf = math.inf if self.free.t0_hat is None else self.free.t0_hat
        return tk >= tf


def dirichlet_experiment(
    cfg: SimulationConfig,
    eps: float,
    probes: Sequence,
    M: int,
    seed: int,
    threshold: float = 0.5,
    block: int = 250,
    workers: int = 1,
) -> DirichletExperiment:
    """Blow-up proxy for the killed dynamics on ``B(0, R)`` against the free dynamics.

    ``cfg.radius`` is ``R``. Both runs share the initial datum (restricted
    to the ball) and path seeds. Probes must lie in ``B(0, R - eps)``.
    """
    if cfg.radius is None:
        raise DomainError("the Dirichlet experiment needs a ball radius")
    R = cfg.radius
    if not 0 < eps < R:
        raise DomainError(f"eps must lie in (0, R), got {eps}")
    for p in probes:
        if float(np.linalg.norm(np.atleast_1d(p))) >= R - eps:
            raise DomainError(f"probe {p} lies outside B(0, R - eps)")
    u0 = ScalarField(cfg.lattice, cfg.initial_values())
    killed_cfg = dataclasses.replace(cfg, u0=u0)
    free_cfg = dataclasses.replace(cfg, u0=u0, radius=None)
    pairs = [(i, j) for i in range(len(probes)) for j in range(i, len(probes))]
    series = []
    for c in (killed_cfg, free_cfg):
        series.append(estimate_moments(c, probes, pairs, M, seed, block=block, workers=workers))
    reports = [detect_blowup_proxy(s, threshold, kappa=u0.sup()) for s in series]
    return DirichletExperiment(reports[0], reports[1], series[0], series[1])
