"""Periodic lattices standing in for R^d, and fields living on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Lattice:
    """Uniform periodic grid on ``[-L, L)^d`` with ``n`` sites per axis.

    Site ``k`` along an axis sits at ``-L + k*h``; the origin is site ``n//2``.
    """

    dim: int
    half_width: float
    n: int

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}")
        if not self.half_width > 0:
            raise DomainError(f"half_width must be > 0, got {self.half_width}")
        if not _is_power_of_two(int(self.n)) or int(self.n) != self.n:
            raise DomainError(f"site count per axis must be a power of two, got {self.n}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Site coordinates, shape ``shape + (dim,)``."""
        grids = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    @cached_property
    def radius(self) -> np.ndarray:
        """Euclidean distance of every site to the origin."""
        return np.sqrt(np.sum(self.coords**2, axis=-1))

    @cached_property
    def wavenumber_norm(self) -> np.ndarray:
        """|xi| on the ``rfftn`` frequency grid."""
        h = self.spacing
        full = 2.0 * np.pi * np.fft.fftfreq(self.n, d=h)
        half = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=h)
        axes = [full] * (self.dim - 1) + [half]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.sqrt(sum(g**2 for g in grids))

    @cached_property
    def periodic_offsets(self) -> np.ndarray:
        """Minimum-image displacement of every site from site 0, shape ``shape + (dim,)``.

        Index order is FFT order, as needed for circulant embeddings.
        """
        k = np.arange(self.n)
        k = np.where(k <= self.n // 2, k, k - self.n) * self.spacing
        grids = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def symbol(self, alpha: float, t: float) -> np.ndarray:
        """Spectral multiplier ``exp(-t |xi|^alpha)`` of the stable semigroup."""
        return np.exp(-t * self.wavenumber_norm**alpha)

    def site_index(self, point) -> tuple[int, ...]:
        """Multi-index of the site at ``point``; raises if ``point`` is not a site."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.shape != (self.dim,):
            raise DomainError(f"point must have {self.dim} coordinates, got {p.shape}")
        k = (p + self.half_width) / self.spacing
        idx = np.rint(k)
        if np.any(np.abs(k - idx) > 1e-9) or np.any(idx < 0) or np.any(idx >= self.n):
            raise DomainError(f"point {p.tolist()} is not a lattice site")
        return tuple(int(i) for i in idx)

    def ball_mask(self, radius: float) -> np.ndarray:
        """Boolean mask of sites in the open ball ``B(0, radius)``."""
        return self.radius < radius


def make_lattice(dim: int, half_width: float, n: int) -> Lattice:
    """Build a :class:`Lattice`; ``n`` must be a power of two."""
    return Lattice(dim=int(dim), half_width=float(half_width), n=int(n))


@dataclass
class ScalarField:
    """Real values on every site of a lattice."""

    lattice: Lattice
    values: np.ndarray
    clip_mass: float = field(default=0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.lattice.shape:
            raise DomainError(
                f"field shape {self.values.shape} does not match lattice {self.lattice.shape}"
            )

    @classmethod
    def constant(cls, lattice: Lattice, value: float) -> "ScalarField":
        return cls(lattice, np.full(lattice.shape, float(value)))

    @classmethod
    def ball_indicator(cls, lattice: Lattice, radius: float, value: float = 1.0) -> "ScalarField":
        return cls(lattice, np.where(lattice.radius < radius, float(value), 0.0))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def integral_over_ball(self, radius: float = 1.0) -> float:
        """Lattice quadrature of the field over ``B(0, radius)``."""
        mask = self.lattice.ball_mask(radius)
        return float(np.sum(self.values[mask]) * self.lattice.cell_volume)
