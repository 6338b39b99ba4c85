"""Exact samplers for symmetric and isotropic stable laws.

All samplers target the normalisation ``E exp(i xi.X) = exp(-|xi|^alpha)``,
so ``t**(1/alpha) * X`` has density ``p_t``.
"""
from __future__ import annotations

import numpy as np


def symmetric_stable(rng: np.random.Generator, alpha: float, size) -> np.ndarray:
    """Chambers-Mallows-Stuck draw of a symmetric alpha-stable variable."""
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(v)
    if alpha == 2.0:
        return 2.0 * np.sqrt(w) * np.sin(v)
    return (
        np.sin(alpha * v)
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
    )


def positive_stable(rng: np.random.Generator, rho: float, size) -> np.ndarray:
    """Kanter's draw of a positive rho-stable variable, ``E exp(-s A) = exp(-s^rho)``."""
    if rho == 1.0:
        return np.ones(size)
    u = rng.uniform(0.0, np.pi, size)
    e = rng.standard_exponential(size)
    return (
        np.sin(rho * u)
        / np.sin(u) ** (1.0 / rho)
        * (np.sin((1.0 - rho) * u) / e) ** ((1.0 - rho) / rho)
    )


def isotropic_stable(rng: np.random.Generator, alpha: float, dim: int, n: int) -> np.ndarray:
    """``n`` draws of the rotation-invariant alpha-stable vector in ``R^dim``.

    Returns shape ``(n,)`` for ``dim == 1`` and ``(n, dim)`` otherwise. In
    higher dimensions the vector is Gaussian subordinated by a positive
    ``alpha/2``-stable variance.
    """
    if dim == 1:
        return symmetric_stable(rng, alpha, n)
    a = positive_stable(rng, alpha / 2.0, n)
    z = rng.standard_normal((n, dim))
    return np.sqrt(2.0 * a)[:, None] * z
