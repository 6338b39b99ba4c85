"""Spatial correlation kernels of the driving noise and the bounds they enter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, HypothesisNotMet, UnsupportedVariant
from .parallel import stream
from .sampling import isotropic_stable
from .stable_kernel import StableKernelSpec, eval_kernel, kernel_profile

VARIANTS = ("white", "riesz", "expo", "ou", "poisson", "cauchy")
TRANSLATION_INVARIANT = ("riesz", "ou", "poisson", "cauchy")

_GL = np.polynomial.legendre.leggauss(20)


@dataclass(frozen=True)
class CorrelationKernel:
    """Noise correlation ``f(x, y)``.

    ``variant`` is one of ``white``, ``riesz`` (``|x-y|^-beta``), ``expo``
    (``exp(-x.y)``), ``ou`` (``exp(-|x-y|^alpha_c)``), ``poisson``
    (``(|x-y|^2 + 1)^{-(d+1)/2}``) or ``cauchy`` (``sum_j 1/(1 + (x_j-y_j)^2)``).
    """

    variant: str
    dim: int = 1
    beta: float | None = None
    alpha_c: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown correlation variant {self.variant!r}")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")
        if self.variant == "riesz":
            if self.beta is None or not 0 < self.beta < self.dim:
                raise DomainError(
                    f"Riesz kernel needs 0 < beta < d (local integrability); got beta={self.beta}, d={self.dim}"
                )
        if self.variant == "ou":
            if self.alpha_c is None or not 0 < self.alpha_c <= 2:
                raise DomainError(f"OU kernel needs alpha_c in (0, 2], got {self.alpha_c}")

    @property
    def translation_invariant(self) -> bool:
        return self.variant in TRANSLATION_INVARIANT

    @property
    def singular(self) -> bool:
        return self.variant == "riesz"


def white() -> CorrelationKernel:
    return CorrelationKernel("white", 1)


def riesz(beta: float, dim: int = 1) -> CorrelationKernel:
    return CorrelationKernel("riesz", dim, beta=beta)


def exponential_type(dim: int = 1) -> CorrelationKernel:
    return CorrelationKernel("expo", dim)


def ornstein_uhlenbeck(alpha_c: float, dim: int = 1) -> CorrelationKernel:
    return CorrelationKernel("ou", dim, alpha_c=alpha_c)


def poisson(dim: int = 1) -> CorrelationKernel:
    return CorrelationKernel("poisson", dim)


def cauchy(dim: int = 1) -> CorrelationKernel:
    return CorrelationKernel("cauchy", dim)


def _points(kernel: CorrelationKernel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if kernel.dim == 1:
        return p[..., None]
    if p.shape[-1:] != (kernel.dim,):
        raise DomainError(f"points must have trailing axis of length {kernel.dim}")
    return p


def profile(kernel: CorrelationKernel, z) -> np.ndarray:
    """``f~(z) = f(z, 0)`` for translation-invariant kernels; ``z`` has trailing axis ``dim``."""
    if kernel.variant == "white":
        raise UnsupportedVariant("white noise has no correlation function")
    if not kernel.translation_invariant:
        raise UnsupportedVariant(f"{kernel.variant} kernel is not translation invariant")
    z = np.asarray(z, dtype=float)
    d = kernel.dim
    if kernel.variant == "cauchy":
        return np.sum(1.0 / (1.0 + z**2), axis=-1)
    r2 = np.sum(z**2, axis=-1)
    if kernel.variant == "riesz":
        with np.errstate(divide="ignore"):
            return r2 ** (-kernel.beta / 2)
    if kernel.variant == "ou":
        return np.exp(-(r2 ** (kernel.alpha_c / 2)))
    return (1.0 / (r2 + 1.0)) ** ((d + 1) / 2)


def eval_correlation(kernel: CorrelationKernel, x, y):
    """``f(x, y)``; broadcasts over leading axes.

    For ``dim == 1`` scalars are accepted as points.
    """
    if kernel.variant == "white":
        raise UnsupportedVariant("white noise has no pointwise correlation function")
    scalar = kernel.dim == 1 and np.ndim(x) == 0 and np.ndim(y) == 0
    xp, yp = _points(kernel, x), _points(kernel, y)
    if kernel.variant == "expo":
        out = np.exp(-np.sum(xp * yp, axis=-1))
    else:
        z = xp - yp
        if kernel.singular and np.any(np.all(z == 0, axis=-1)):
            raise DomainError("Riesz kernel is singular at x = y")
        out = profile(kernel, z)
    return float(out) if scalar else out


def infimum_on_ball(kernel: CorrelationKernel, R: float = 1.0) -> float:
    """``K_f = inf_{x, y in B(0, R)} f(x, y)``.

    Kernels decreasing in ``|x - y|`` attain it at antipodal points
    ``|x - y| = 2R``. For the Cauchy sum, convexity of ``s -> 1/(1+s)`` puts
    the minimum at equal coordinates ``(x_j - y_j)^2 = 4R^2/d``; for
    ``exp(-x.y)`` it sits where ``x.y`` is maximal, ``x = y`` on the sphere.
    """
    if kernel.variant == "white":
        raise UnsupportedVariant("white noise has no correlation function")
    if not R > 0:
        raise DomainError("R must be > 0")
    d, D = kernel.dim, 2.0 * R
    if kernel.variant == "riesz":
        return D ** (-kernel.beta)
    if kernel.variant == "ou":
        return math.exp(-(D**kernel.alpha_c))
    if kernel.variant == "poisson":
        return (1.0 / (D * D + 1.0)) ** ((d + 1) / 2)
    if kernel.variant == "cauchy":
        return d / (1.0 + D * D / d)
    return math.exp(-R * R)


def grid_infimum(kernel: CorrelationKernel, R: float = 1.0, n: int = 41) -> float:
    """Brute-force minimum of ``f`` over pairs from a grid on the closed ball (1-D and 2-D)."""
    if kernel.dim > 2:
        raise DomainError("grid search implemented for d <= 2")
    axis = np.linspace(-R, R, n)
    if kernel.dim == 1:
        pts = axis[:, None]
    else:
        g = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = g[np.sum(g**2, axis=1) <= R * R + 1e-12]
    x, y = pts[:, None, :], pts[None, :, :]
    if kernel.singular:
        z = x - y
        same = np.all(z == 0, axis=-1)
        vals = np.where(same, np.inf, profile(kernel, np.where(same[..., None], 1.0, z)))
    else:
        vals = eval_correlation(kernel, x, y)
    return float(np.min(vals))


@dataclass
class DalangVerdict:
    passes: bool
    diagnostic: dict
    condition_used: str
    inconclusive: bool = False
    beta_below_alpha_and_d: bool | None = None


def _radial_weight(dim: int):
    if dim == 1:
        return "d=1 local integrability", lambda r: 2.0 * np.ones_like(r)
    if dim == 2:
        return "d=2 log clause", lambda r: 2 * math.pi * r * np.log(1.0 / r)
    surface = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    return "d>=3 power clause", lambda r: surface * r**2


def _radial_majorant(kernel: CorrelationKernel):
    if kernel.variant == "cauchy":
        d = kernel.dim
        return lambda r: d * np.ones_like(r)
    unit = np.zeros(kernel.dim)
    unit[0] = 1.0
    return lambda r: profile(kernel, np.multiply.outer(r, unit))


def _shell_tail(shells: np.ndarray, window: int) -> tuple[float, float] | None:
    """Fit ``log s_k = a + k log(rho) + m log(k)`` to the last shells.

    Returns ``(log10 rho, tail sum)``; the tail is ``inf`` when ``rho`` is not
    clearly below one and ``None`` when the fit cannot decide.
    """
    k = np.arange(1, shells.size + 1, dtype=float)[-window:]
    y = shells[-window:]
    if np.any(y <= 0):
        return (-math.inf, 0.0)
    design = np.column_stack([np.ones_like(k), k, np.log(k)])
    coef, *_ = np.linalg.lstsq(design, np.log(y), rcond=None)
    lead = coef[1] / math.log(10)
    if lead > 1e-4:
        return (lead, math.inf)
    if lead > -1e-4:
        return None
    total, start = 0.0, k[-1] + 1
    for _ in range(100):
        j = np.arange(start, start + 100_000)
        terms = np.exp(coef[0] + coef[1] * j + coef[2] * np.log(j))
        total += float(np.sum(terms))
        if terms[-1] <= 1e-16 * (total + float(np.sum(shells))):
            return (lead, total)
        start = j[-1] + 1
    return None


def check_dalang(kernel: CorrelationKernel, spec: StableKernelSpec, decades: int = 40) -> DalangVerdict:
    """Integrability of the correlation near the origin, with ``epsilon = 1``.

    The integral over ``|x| <= 1`` is accumulated over the shells
    ``[10^{-k-1}, 10^{-k}]``. A power-times-log model fitted to the last
    half of the shells decides convergence and supplies the tail beyond
    the last shell; borderline decay rates are reported as inconclusive.
    """
    if kernel.variant == "white":
        ok = kernel.dim == 1 and spec.dim == 1 and 1.0 < spec.alpha < 2.0
        return DalangVerdict(
            passes=ok,
            diagnostic={"alpha": spec.alpha, "dim": spec.dim},
            condition_used="d=1 white-noise clause (1 < alpha < 2)",
        )
    flag = None
    if kernel.variant == "riesz":
        flag = kernel.beta < min(spec.alpha, kernel.dim)
    if not kernel.translation_invariant:
        return DalangVerdict(
            passes=False,
            diagnostic={"reason": "no translation-invariant majorant f~ exists for exp(-x.y)"},
            condition_used="not applicable",
            inconclusive=True,
        )
    condition, weight = _radial_weight(kernel.dim)
    fr = _radial_majorant(kernel)

    def integrand(s: float) -> float:
        # r = exp(-s)
        r = np.array([math.exp(-s)])
        return float(weight(r)[0] * fr(r)[0]) * r[0]

    ln10 = math.log(10)
    shells = np.array([
        integrate.quad(integrand, k * ln10, (k + 1) * ln10, epsrel=1e-12, epsabs=0.0, limit=200)[0]
        for k in range(decades)
    ])
    partial = math.fsum(shells)
    fit = _shell_tail(shells, decades // 2)
    if fit is None:
        return DalangVerdict(
            False,
            {"shells": shells.tolist(), "partial_integral": partial},
            condition,
            inconclusive=True,
            beta_below_alpha_and_d=flag,
        )
    lead, tail = fit
    diag = {"shells": shells.tolist(), "decay_per_decade": lead, "tail_estimate": tail}
    if math.isinf(tail):
        diag["partial_integral"] = math.inf
        return DalangVerdict(False, diag, condition, beta_below_alpha_and_d=flag)
    diag["partial_integral"] = partial + tail
    return DalangVerdict(True, diag, condition, beta_below_alpha_and_d=flag)


def _breaks_around(centers, width, lo, hi, levels=14) -> np.ndarray:
    offs = width * np.concatenate(([0.0], 2.0 ** np.arange(-3, levels - 3)))
    pts = [lo, hi]
    for c in centers:
        pts.extend(c + offs)
        pts.extend(c - offs)
    pts = np.unique(np.clip(pts, lo, hi))
    return pts


def _graded(lo, hi, toward, levels=50) -> np.ndarray:
    """Breakpoints on [lo, hi] refined geometrically towards the point ``toward``."""
    span = max(abs(toward - lo), abs(hi - toward))
    offs = span * 2.0 ** -np.arange(levels)
    pts = np.concatenate(([lo, hi, toward], toward + offs, toward - offs))
    return np.unique(np.clip(pts, lo, hi))


def _gl(edges: np.ndarray):
    x, w = _GL
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    keep = half > 0
    nodes = (mid[keep, None] + half[keep, None] * x).ravel()
    weights = (half[keep, None] * w).ravel()
    return nodes, weights


def _ball_double_integral_1d(spec, kernel, tau, x1, x2, R) -> float:
    """``int_{[-R,R]^2} p_tau(x1-y1) p_tau(x2-y2) f(y1, y2)`` by composite Gauss-Legendre."""
    width = tau ** (1.0 / spec.alpha)
    prof = kernel_profile(spec, tau, 2.0 * R + 1e-9)
    p = lambda r: prof(np.abs(r))
    if not kernel.translation_invariant:
        e1 = _breaks_around([x1], width, -R, R)
        e2 = _breaks_around([x2], width, -R, R)
        y1, w1 = _gl(e1)
        y2, w2 = _gl(e2)
        a = w1 * p(x1 - y1)
        b = w2 * p(x2 - y2)
        f = eval_correlation(kernel, y1[:, None], y2[None, :])
        return float(a @ f @ b)
    # J = int f~(v) C(v) dv with C(v) = int_{I(v)} a(y) b(y - v) dy
    v_edges = np.unique(
        np.concatenate(
            (
                _graded(-2 * R, 0.0, 0.0),
                _graded(0.0, 2 * R, 0.0),
                _breaks_around([x1 - x2], 2 * width, -2 * R, 2 * R),
            )
        )
    )
    vs, wv = _gl(v_edges)
    cv = np.empty_like(vs)
    for k, v in enumerate(vs):
        lo, hi = max(-R, v - R), min(R, v + R)
        ys, wy = _gl(_breaks_around([x1, x2 + v], width, lo, hi))
        cv[k] = np.sum(wy * p(x1 - ys) * p(x2 + v - ys))
    fv = profile(kernel, vs[:, None])
    return float(np.sum(wv * fv * cv))


def _ball_double_integral_mc(spec, kernel, tau, x1, x2, R, n, seed) -> tuple[float, float]:
    rng = stream(seed, 0)
    step = tau ** (1.0 / spec.alpha)
    y1 = np.asarray(x1) + step * isotropic_stable(rng, spec.alpha, spec.dim, n).reshape(n, -1)
    y2 = np.asarray(x2) + step * isotropic_stable(rng, spec.alpha, spec.dim, n).reshape(n, -1)
    inside = (np.sum(y1**2, axis=1) < R * R) & (np.sum(y2**2, axis=1) < R * R)
    vals = np.zeros(n)
    if kernel.singular:
        z = y1 - y2
        ok = inside & np.any(z != 0, axis=1)
        vals[ok] = profile(kernel, z[ok])
    else:
        a, b = y1[inside], y2[inside]
        if spec.dim == 1:
            a, b = a[:, 0], b[:, 0]
        vals[inside] = eval_correlation(kernel, a, b)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


@dataclass
class ConvolutionBound:
    constant: float
    k_f: float
    rows: list = field(default_factory=list)
    method: str = "quadrature"


def ball_convolution_lower_bound(
    spec: StableKernelSpec,
    kernel: CorrelationKernel,
    t: float,
    s_values,
    x_pairs,
    R: float = 1.0,
    n_mc: int = 200_000,
    seed: int = 0,
) -> ConvolutionBound:
    """Ratio of the ball-restricted kernel convolution of ``f`` to ``K_f``.

    For each ``s`` and pair ``(x1, x2)`` computes
    ``J = int_{B(0,R)^2} p_{t-s}(x1-y1) p_{t-s}(x2-y2) f(y1, y2) dy1 dy2``
    and returns the smallest ``J / K_f``. Quadrature in ``d = 1``, Monte
    Carlo with exact stable sampling otherwise. At ``s = t`` the kernels are
    point masses and ``J = f(x1, x2)``.
    """
    if kernel.variant == "white":
        raise UnsupportedVariant("white noise has no correlation function")
    if kernel.dim != spec.dim:
        raise DomainError("kernel and spec dimensions differ")
    if t > (R / 2) ** spec.alpha * (1 + 1e-12):
        raise HypothesisNotMet(f"t = {t} exceeds (R/2)^alpha = {(R / 2) ** spec.alpha}")
    k_f = infimum_on_ball(kernel, R)
    rows = []
    method = "quadrature" if spec.dim == 1 else "monte-carlo"
    for s in np.atleast_1d(np.asarray(s_values, dtype=float)):
        if not 0 <= s <= t:
            raise DomainError(f"s = {s} must lie in [0, t]")
        for x1, x2 in x_pairs:
            p1, p2 = np.atleast_1d(np.asarray(x1, float)), np.atleast_1d(np.asarray(x2, float))
            if np.sum(p1**2) >= R * R or np.sum(p2**2) >= R * R:
                raise DomainError("pair points must lie in B(0, R)")
            tau = t - s
            se = 0.0
            if tau == 0:
                if kernel.singular and np.all(p1 == p2):
                    val = math.inf
                else:
                    val = float(np.ravel(eval_correlation(kernel, p1, p2))[0])
            elif spec.dim == 1:
                val = _ball_double_integral_1d(spec, kernel, tau, float(p1[0]), float(p2[0]), R)
            else:
                val, se = _ball_double_integral_mc(spec, kernel, tau, p1, p2, R, n_mc, seed)
            rows.append((float(s), p1.tolist(), p2.tolist(), val, se, val / k_f))
    return ConvolutionBound(min(r[5] for r in rows), k_f, rows, method)


def stable_abs_moment(spec: StableKernelSpec, p: float) -> float:
    """``E|X_1|^p`` for the isotropic stable vector, valid for ``-d < p < alpha``.

    ``2^p Gamma((d+p)/2) Gamma(1-p/alpha) / (Gamma(d/2) Gamma(1-p/2))``.
    """
    a, d = spec.alpha, spec.dim
    if not -d < p < a:
        raise DomainError(f"moment order {p} outside (-d, alpha)")
    return 2**p * math.gamma((d + p) / 2) * math.gamma(1 - p / a) / (math.gamma(d / 2) * math.gamma(1 - p / 2))


def _riesz_smoothed_1d(spec, beta, t, c) -> float:
    """``int p_{2t}(u) |c - u|^{-beta} du`` (the two kernels merge into one at time 2t)."""
    t2 = 2.0 * t
    w = t2 ** (1.0 / spec.alpha)
    p = lambda u: eval_kernel(spec, t2, u)
    left, _ = integrate.quad(p, c - w, c, weight="alg", wvar=(0.0, -beta), epsabs=1e-12, epsrel=1e-10)
    right, _ = integrate.quad(p, c, c + w, weight="alg", wvar=(-beta, 0.0), epsabs=1e-12, epsrel=1e-10)
    g = lambda u: p(u) * abs(c - u) ** (-beta)
    lo_tail, _ = integrate.quad(g, -np.inf, c - w, epsabs=1e-12, epsrel=1e-10, limit=200)
    hi_tail, _ = integrate.quad(g, c + w, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
    return left + right + lo_tail + hi_tail


@dataclass
class RieszDecayReport:
    rows: list
    constant: float
    spread: float


def riesz_time_decay_bound(
    spec: StableKernelSpec, beta: float, t_values, x_pairs, n_mc: int = 400_000, seed: int = 0
) -> RieszDecayReport:
    """``V(t) = int int p_t(x-z) p_t(y-w) |z-w|^{-beta} dz dw`` and ``V(t) t^{beta/alpha}``.

    ``x_pairs`` holds pairs in unit coordinates; each is rescaled to
    ``t^{1/alpha} x`` so it lies in ``B(0, t^{1/alpha})`` at every ``t``.
    ``constant`` is the smallest scaled value; ``spread`` the largest relative
    deviation of a pair's scaled values from that pair's mean across ``t``.
    """
    if not 0 < beta < min(spec.dim, spec.alpha):
        raise HypothesisNotMet(f"need 0 < beta < d ^ alpha, got beta={beta}")
    rows = []
    spreads = []
    for k, (x, y) in enumerate(x_pairs):
        px, py = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
        if np.sum(px**2) > 1 + 1e-12 or np.sum(py**2) > 1 + 1e-12:
            raise HypothesisNotMet("pair points must lie in the unit ball (scaled by t^{1/alpha})")
        scaled = []
        for t in np.atleast_1d(np.asarray(t_values, dtype=float)):
            sx, sy = t ** (1 / spec.alpha) * px, t ** (1 / spec.alpha) * py
            if spec.dim == 1:
                val = _riesz_smoothed_1d(spec, beta, t, float(sx[0] - sy[0]))
            else:
                rng = stream(seed, k)
                u = (2 * t) ** (1 / spec.alpha) * isotropic_stable(rng, spec.alpha, spec.dim, n_mc)
                val = float(np.mean(np.sum((sx - sy - u) ** 2, axis=1) ** (-beta / 2)))
            sc = val * t ** (beta / spec.alpha)
            scaled.append(sc)
            rows.append((float(t), sx.tolist(), sy.tolist(), val, sc))
        m = float(np.mean(scaled))
        spreads.append(max(abs(v - m) / m for v in scaled))
    return RieszDecayReport(rows, min(r[4] for r in rows), max(spreads))
