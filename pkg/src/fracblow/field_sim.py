"""Lattice simulation of the stochastic heat equation driven by the stable generator.

The mild equation is discretised by the left-endpoint exponential Euler step

    u_{n+1} = P_dt [u_n + sigma(u_n) dF_n]

with ``P_dt`` the spectral stable semigroup on a periodic lattice and
``dF_n`` the noise increment over one step. Paths stop (freeze) at the first
step where the lattice sup-norm exceeds the truncation level ``N``.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .correlation import CorrelationKernel, profile
from .errors import ContractError, DomainError, HypothesisNotMet, UnsupportedVariant
from .lattice import Lattice, ScalarField, make_lattice
from .parallel import chunk_bounds, fan_out, merge_sums, stream
from .stable_kernel import StableKernelSpec, killed_paths

__all__ = [
    "Lattice",
    "make_lattice",
    "SigmaSpec",
    "NoiseIncrement",
    "sample_noise",
    "FieldState",
    "step_mild",
    "PathRecord",
    "run_path",
    "SimulationConfig",
    "Ensemble",
    "simulate_ensemble",
    "DirichletBound",
    "dirichlet_deterministic_check",
]

log = logging.getLogger(__name__)

CLIP_WARN = 1e-3


@dataclass(frozen=True)
class SigmaSpec:
    """Nonlinearity ``sigma``.

    ``form`` is ``power`` (``|u|^{1+gamma}``), ``linear`` (``lam * u``) or
    ``custom`` (piecewise-linear through ``table = (xs, ys)``). A custom table
    is checked against ``|x|^{1+gamma}`` on its own range; ``compliant``
    records the outcome.
    """

    form: str = "power"
    gamma: float = 1.0
    lam: float = 1.0
    table: tuple | None = None

    def __post_init__(self):
        if self.form not in ("power", "linear", "custom"):
            raise DomainError(f"unknown sigma form {self.form!r}")
        if not self.gamma >= 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if self.form == "custom":
            if self.table is None:
                raise DomainError("custom sigma needs a table (xs, ys)")
            xs, ys = (tuple(map(float, a)) for a in self.table)
            if len(xs) != len(ys) or len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise DomainError("custom table needs >= 2 points with increasing xs")
            object.__setattr__(self, "table", (xs, ys))

    @classmethod
    def power(cls, gamma: float) -> "SigmaSpec":
        return cls("power", gamma=gamma)

    @classmethod
    def linear(cls, lam: float) -> "SigmaSpec":
        return cls("linear", gamma=0.0, lam=lam)

    @classmethod
    def zero(cls) -> "SigmaSpec":
        return cls("linear", gamma=0.0, lam=0.0)

    @property
    def is_zero(self) -> bool:
        return self.form == "linear" and self.lam == 0.0

    @property
    def compliant(self) -> bool:
        """Whether ``sigma(x) >= |x|^{1+gamma}`` holds (on the table range for custom)."""
        if self.form == "power":
            return True
        if self.form == "linear":
            return False
        xs, _ = self.table
        x = np.linspace(xs[0], xs[-1], 2001)
        return bool(np.all(self(x) >= np.abs(x) ** (1 + self.gamma) - 1e-12))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.form == "power":
            return np.abs(u) ** (1.0 + self.gamma)
        if self.form == "linear":
            return self.lam * u
        xs, ys = self.table
        return np.interp(u, xs, ys)


@dataclass
class NoiseIncrement:
    """Noise integrated over one time step, one value per site.

    White noise values carry variance ``dt / h^d``; colored noise values have
    covariance ``dt f(x_i, x_j)``.
    """

    values: np.ndarray
    dt: float
    kind: str
    clip_mass: float = 0.0


def _noise_kind(noise) -> str:
    if isinstance(noise, str):
        if noise != "white":
            raise DomainError(f"unknown noise kind {noise!r}")
        return "white"
    if not isinstance(noise, CorrelationKernel):
        raise DomainError(f"noise must be 'white' or a CorrelationKernel, got {noise!r}")
    if noise.variant == "white":
        return "white"
    if not noise.translation_invariant:
        raise UnsupportedVariant(
            f"{noise.variant} correlation is not stationary; no circulant sampler exists"
        )
    return "colored"


@functools.lru_cache(maxsize=None)
def riesz_cell_average(beta: float, dim: int) -> float:
    """``E|U - V|^{-beta}`` for ``U, V`` uniform on the unit cube.

    Used as the diagonal of the lattice Riesz covariance, where the point
    value is infinite. In one dimension it is ``2/((1-beta)(2-beta))``.
    """
    if dim == 1:
        return 2.0 / ((1.0 - beta) * (2.0 - beta))
    # coordinate differences have the triangular density 2(1 - z) on [0, 1]
    def f(*z):
        return math.prod(2.0 * (1.0 - zi) for zi in z) * math.fsum(zi * zi for zi in z) ** (-beta / 2)

    val, _ = integrate.nquad(f, [[0.0, 1.0]] * dim, opts={"limit": 200, "epsrel": 1e-9})
    return float(val)


def covariance_row(lattice: Lattice, kernel: CorrelationKernel) -> np.ndarray:
    """Covariance of site 0 with every site, in FFT order (minimum-image offsets)."""
    if kernel.dim != lattice.dim:
        raise DomainError(f"kernel dim {kernel.dim} does not match lattice dim {lattice.dim}")
    z = lattice.periodic_offsets
    if kernel.variant == "riesz":
        origin = (0,) * lattice.dim
        zz = z.copy()
        zz[origin] = 1.0
        c = profile(kernel, zz)
        c[origin] = riesz_cell_average(kernel.beta, lattice.dim) * lattice.spacing ** (-kernel.beta)
        return c
    return profile(kernel, z)


@functools.lru_cache(maxsize=32)
def _spectral_root(lattice: Lattice, kernel: CorrelationKernel) -> tuple[np.ndarray, float]:
    """Square root of the circulant eigenvalues on the ``rfftn`` grid, and the clipped fraction."""
    eig = np.fft.rfftn(covariance_row(lattice, kernel), axes=tuple(range(lattice.dim))).real
    full = np.fft.fftn(covariance_row(lattice, kernel)).real
    neg = full[full < 0]
    clip = float(-neg.sum() / np.abs(full).sum()) if neg.size else 0.0
    if clip > CLIP_WARN:
        log.warning("circulant embedding clipped %.3g of spectral mass (> %g)", clip, CLIP_WARN)
    return np.sqrt(np.clip(eig, 0.0, None)), clip


def colored_from_white(lattice: Lattice, kernel: CorrelationKernel, w: np.ndarray, dt: float) -> np.ndarray:
    """Map standard normal site values ``w`` (leading batch axes allowed) to colored increments."""
    root, _ = _spectral_root(lattice, kernel)
    axes = tuple(range(-lattice.dim, 0))
    return math.sqrt(dt) * np.fft.irfftn(np.fft.rfftn(w, axes=axes) * root, s=lattice.shape, axes=axes)


def sample_noise(lattice: Lattice, noise, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    """One noise increment over a step of length ``dt``.

    Colored increments use the circulant square root of the periodised
    covariance; negative eigenvalues are set to 0 and their share of the
    spectral mass is returned as ``clip_mass``.
    """
    kind = _noise_kind(noise)
    if dt < 0:
        raise DomainError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return NoiseIncrement(np.zeros(lattice.shape), 0.0, kind)
    w = rng.standard_normal(lattice.shape)
    if kind == "white":
        return NoiseIncrement(w * math.sqrt(dt / lattice.cell_volume), dt, kind)
    return NoiseIncrement(
        colored_from_white(lattice, noise, w, dt), dt, kind, clip_mass=_spectral_root(lattice, noise)[1]
    )


def propagate(values: np.ndarray, lattice: Lattice, alpha: float, t: float) -> np.ndarray:
    """Apply ``P_t`` along the trailing lattice axes (no clipping)."""
    axes = tuple(range(-lattice.dim, 0))
    spec = np.fft.rfftn(values, axes=axes) * lattice.symbol(alpha, t)
    return np.fft.irfftn(spec, s=lattice.shape, axes=axes)


@dataclass
class FieldState:
    """Snapshot of one path: field, time, truncation level and liveness."""

    field: ScalarField
    time: float
    trunc_level: float
    alive: bool = True
    hit_time: float | None = None

    def __post_init__(self):
        if not self.trunc_level > 0:
            raise DomainError(f"truncation level must be > 0, got {self.trunc_level}")
        if self.alive and not self.field.sup() <= self.trunc_level:
            raise DomainError(
                f"initial sup |u| = {self.field.sup():.4g} exceeds the truncation level {self.trunc_level:g}"
            )


def step_mild(
    state: FieldState,
    spec: StableKernelSpec,
    sigma: SigmaSpec,
    lattice: Lattice,
    dt: float,
    rng: np.random.Generator,
    noise="white",
    radius: float | None = None,
) -> FieldState:
    """Advance one exponential-Euler step, then apply killing and the truncation check.

    With ``radius`` set, values outside ``B(0, radius)`` are reset to 0 after
    the step (zero Dirichlet data).
    """
    if not state.alive:
        raise ContractError("cannot step a path that has hit the truncation level")
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    u = state.field.values
    if sigma.is_zero:
        forced = u
    else:
        forced = u + sigma(u) * sample_noise(lattice, noise, dt, rng).values
    new = propagate(forced, lattice, spec.alpha, dt)
    if radius is not None:
        new[~lattice.ball_mask(radius)] = 0.0
    t = state.time + dt
    out = ScalarField(lattice, new)
    if not np.max(np.abs(new)) <= state.trunc_level:
        return FieldState(out, t, state.trunc_level, alive=False, hit_time=t)
    return FieldState(out, t, state.trunc_level)


@dataclass
class SimulationConfig:
    """Everything that defines a path ensemble except the seed.

    ``radius`` set means killed dynamics on ``B(0, radius)``; ``None`` means
    free (periodic) dynamics.
    """

    spec: StableKernelSpec
    sigma: SigmaSpec
    noise: object
    lattice: Lattice
    u0: ScalarField
    dt: float
    t_end: float
    trunc_level: float
    radius: float | None = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be > 0, got {self.t_end}")
        if self.radius is not None and not self.radius > 0:
            raise DomainError(f"ball radius must be > 0, got {self.radius}")
        if self.spec.dim != self.lattice.dim:
            raise DomainError("kernel and lattice dimensions differ")
        _noise_kind(self.noise)
        if self.u0.lattice != self.lattice:
            raise DomainError("u0 lives on a different lattice")
        if not self.u0.sup() <= self.trunc_level:
            raise DomainError(
                f"initial sup |u| = {self.u0.sup():.4g} exceeds the truncation level {self.trunc_level:g}"
            )
        self.n_steps = int(round(self.t_end / self.dt))
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise DomainError("t_end must be a multiple of dt")
        times = self.snapshot_times or (self.t_end,)
        idx = []
        for t in times:
            k = int(round(t / self.dt))
            if abs(k * self.dt - t) > 1e-9 * max(t, self.dt) or not 0 <= k <= self.n_steps:
                raise DomainError(f"snapshot time {t} is not a step time in [0, t_end]")
            idx.append(k)
        self.snapshot_steps = tuple(idx)
        self.snapshot_times = tuple(k * self.dt for k in idx)

    def initial_values(self) -> np.ndarray:
        u = self.u0.values.copy()
        if self.radius is not None:
            u[~self.lattice.ball_mask(self.radius)] = 0.0
        return u


@dataclass
class PathRecord:
    """Truncation hit time (``None`` if never hit) and snapshots at the requested times."""

    hit_time: float | None
    times: tuple
    snapshots: np.ndarray


def _advance(cfg: SimulationConfig, rngs, m: int, probes=(), keep_fields: bool = False):
    """Run ``m`` paths of an ensemble in one vectorised block.

    ``rngs[i]`` drives path ``i`` of the block, so a path's result does not
    depend on the block it is run in. Returns hit times, probe values,
    liveness at snapshots, per-snapshot field sums and squared sums, and the
    full snapshots when ``keep_fields``.
    """
    lat = cfg.lattice
    u = np.broadcast_to(cfg.initial_values(), (m,) + lat.shape).copy()
    alive = np.ones(m, dtype=bool)
    hit = np.full(m, np.nan)
    outside = None if cfg.radius is None else ~lat.ball_mask(cfg.radius)
    white_scale = math.sqrt(cfg.dt / lat.cell_volume)
    colored = _noise_kind(cfg.noise) == "colored"
    symbol = lat.symbol(cfg.spec.alpha, cfg.dt)
    axes = tuple(range(1, lat.dim + 1))
    wanted: dict[int, list[int]] = {}
    for j, k in enumerate(cfg.snapshot_steps):
        wanted.setdefault(k, []).append(j)
    n_snap = len(cfg.snapshot_steps)
    probe_vals = np.empty((m, n_snap, len(probes[0]) if probes else 0))
    alive_at = np.empty((m, n_snap), dtype=bool)
    fsum = np.empty((n_snap,) + lat.shape)
    fsq = np.empty((n_snap,) + lat.shape)
    fields = np.empty((m, n_snap) + lat.shape) if keep_fields else None

    def record(k):
        for j in wanted.get(k, ()):
            if probes:
                probe_vals[:, j] = u[(slice(None),) + probes]
            alive_at[:, j] = alive
            fsum[j] = u.sum(axis=0)
            fsq[j] = (u * u).sum(axis=0)
            if keep_fields:
                fields[:, j] = u

    record(0)
    for k in range(1, cfg.n_steps + 1):
        idx = np.flatnonzero(alive)
        if idx.size:
            v = u[idx]
            if not cfg.sigma.is_zero:
                w = np.stack([rngs[i].standard_normal(lat.shape) for i in idx])
                if colored:
                    dF = colored_from_white(lat, cfg.noise, w, cfg.dt)
                else:
                    dF = w * white_scale
                v = v + cfg.sigma(v) * dF
            v = np.fft.irfftn(np.fft.rfftn(v, axes=axes) * symbol, s=lat.shape, axes=axes)
            if outside is not None:
                v[:, outside] = 0.0
            u[idx] = v
            sup = np.max(np.abs(v.reshape(idx.size, -1)), axis=1)
            dead = ~(sup <= cfg.trunc_level)
            if np.any(dead):
                alive[idx[dead]] = False
                hit[idx[dead]] = k * cfg.dt
        elif k > max(cfg.snapshot_steps):
            break
        record(k)
    return hit, probe_vals, alive_at, fsum, fsq, fields


def run_path(
    spec: StableKernelSpec,
    sigma: SigmaSpec,
    noise,
    lattice: Lattice,
    u0: ScalarField,
    dt: float,
    t_end: float,
    N: float,
    seed: int,
    radius: float | None = None,
    snapshot_times: Sequence[float] = (),
    path_index: int = 0,
) -> PathRecord:
    """Simulate one path with the generator ``stream(seed, path_index)``.

    Deterministic given its arguments; identical to row ``path_index`` of
    :func:`simulate_ensemble` with the same configuration and seed.
    """
    cfg = SimulationConfig(spec, sigma, noise, lattice, u0, dt, t_end, N, radius, tuple(snapshot_times))
    hit, *_, fields = _advance(cfg, [stream(seed, path_index)], 1, keep_fields=True)
    h = float(hit[0])
    return PathRecord(None if math.isnan(h) else h, cfg.snapshot_times, fields[0])


@dataclass
class Ensemble:
    """Ensemble output.

    ``hit_times`` is ``nan`` for paths that never hit. ``probe_values`` has
    shape ``(paths, snapshots, probes)`` and holds frozen values for dead
    paths; ``alive`` flags liveness at each snapshot. ``field_sum`` and
    ``field_sumsq`` accumulate over paths at every snapshot.
    """

    times: tuple
    hit_times: np.ndarray
    probe_values: np.ndarray
    alive: np.ndarray
    field_sum: np.ndarray
    field_sumsq: np.ndarray
    clip_mass: float = 0.0


def _ensemble_block(args):
    cfg, seed, lo, hi, probes = args
    rngs = [stream(seed, i) for i in range(lo, hi)]
    return _advance(cfg, rngs, hi - lo, probes)[:5]


def simulate_ensemble(
    cfg: SimulationConfig,
    n_paths: int,
    seed: int,
    probes: Sequence = (),
    block: int = 250,
    workers: int = 1,
) -> Ensemble:
    """Run ``n_paths`` independent paths; path ``i`` uses ``stream(seed, i)``.

    Paths are processed in blocks of ``block``; per-block sums are merged in
    block order, so results depend on ``(cfg, n_paths, seed, block)`` only,
    never on ``workers``.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    lat = cfg.lattice
    idx = [lat.site_index(p) for p in probes]
    probe_idx = tuple(np.array(a) for a in zip(*idx)) if idx else ()
    tasks = [(cfg, seed, lo, hi, probe_idx) for lo, hi in chunk_bounds(n_paths, block)]
    parts = fan_out(_ensemble_block, tasks, workers)
    clip = _spectral_root(lat, cfg.noise)[1] if _noise_kind(cfg.noise) == "colored" else 0.0
    return Ensemble(
        times=cfg.snapshot_times,
        hit_times=np.concatenate([p[0] for p in parts]),
        probe_values=np.concatenate([p[1] for p in parts]),
        alive=np.concatenate([p[2] for p in parts]),
        field_sum=merge_sums(p[3] for p in parts),
        field_sumsq=merge_sums(p[4] for p in parts),
        clip_mass=clip,
    )


@dataclass
class DirichletBound:
    """Lower bound on ``(G_D u0)_t(x)`` over a grid, with the per-point rows."""

    estimate: float
    lower: float
    confidence: float
    rows: list = field(default_factory=list)


def _lookup(u0, pts: np.ndarray, dim: int) -> np.ndarray:
    if callable(u0):
        return np.asarray(u0(pts), dtype=float)
    lat = u0.lattice
    p = pts.reshape(-1, 1) if dim == 1 else pts
    k = np.rint((p + lat.half_width) / lat.spacing).astype(int)
    inside = np.all((k >= 0) & (k < lat.n), axis=1)
    k = np.clip(k, 0, lat.n - 1)
    return np.where(inside, u0.values[tuple(k.T)], 0.0)


def dirichlet_deterministic_check(
    spec: StableKernelSpec,
    R: float,
    u0,
    ts,
    grid,
    n_paths: int = 20_000,
    seed: int = 0,
    confidence: float = 0.99,
    n_steps: int = 64,
) -> DirichletBound:
    """Monte Carlo lower bound on the killed semigroup ``E_x[u0(X_t); t < exit time]``.

    ``u0`` is a :class:`ScalarField` (nearest-site lookup) or a vectorised
    callable. Each grid point must lie in ``B(0, R/2)`` and each time in
    ``(0, (R/2)^alpha]``.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    limit = (R / 2) ** spec.alpha
    if np.any(ts <= 0):
        raise DomainError("times must be > 0")
    if np.any(ts > limit * (1 + 1e-12)):
        raise HypothesisNotMet(f"times must satisfy t <= (R/2)^alpha = {limit:.6g}")
    pts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in grid]
    for x in pts:
        if float(np.sqrt(np.sum(x**2))) >= R / 2 + 1e-12:
            raise DomainError(f"grid point {x.tolist()} lies outside B(0, R/2)")
    z = stats.norm.ppf(confidence)
    rows = []
    for i, t in enumerate(ts):
        for j, x in enumerate(pts):
            xx = float(x[0]) if spec.dim == 1 else x
            pos, alive = killed_paths(spec, R, float(t), xx, n_paths, seed + 1000 * i + j, n_steps)
            vals = np.where(alive, _lookup(u0, pos, spec.dim), 0.0)
            est = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(n_paths))
            rows.append((float(t), x.tolist(), est, se, est - z * se))
    return DirichletBound(
        estimate=min(r[2] for r in rows), lower=min(r[4] for r in rows), confidence=confidence, rows=rows
    )
