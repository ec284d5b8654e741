"""Periodic lattice over a flat complex torus with Fourier differentiation.

Real coordinates are ``x^0 .. x^{2n-1}``; the complex coordinate ``z^j`` is
``x^{2j} + i x^{2j+1}``.  Complex directions are numbered ``0..n-1`` for
``d/dz^j`` and ``n..2n-1`` for ``d/dzbar^j``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


def fft_workers() -> int:
    """Data-parallel width for FFTs, capped by ``HYMFLOW_THREADS``."""
    value = os.environ.get("HYMFLOW_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridGeometry:
    """Uniform periodic grid with ``N`` sites per real axis.

    Attributes
    ----------
    n : int
        Complex dimension (1 or 2).
    N : int
        Sites per real axis.
    periods : tuple of float
        Real period of each of the ``2n`` axes.
    """

    n: int
    N: int
    periods: tuple
    _mult: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dim = 2 * self.n
        ks = []
        for p in self.periods:
            k = 2 * np.pi * np.fft.fftfreq(self.N, d=p / self.N)
            # Nyquist mode has no real-preserving derivative.
            k[self.N // 2] = 0.0
            ks.append(k)
        mesh = np.meshgrid(*ks, indexing="ij")
        mult = np.empty((dim,) + mesh[0].shape, dtype=complex)
        for j in range(self.n):
            kx, ky = mesh[2 * j], mesh[2 * j + 1]
            # d/dz = (d/dx - i d/dy)/2 ;  d/dzbar = (d/dx + i d/dy)/2
            mult[j] = 0.5 * (1j * kx + ky)
            mult[self.n + j] = 0.5 * (1j * kx - ky)
        object.__setattr__(self, "_mult", mult)
        object.__setattr__(self, "_k", np.stack(mesh))

    # -- basic data -------------------------------------------------------
    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def sites(self) -> int:
        return self.N ** self.dim

    @property
    def spacing(self) -> tuple:
        return tuple(p / self.N for p in self.periods)

    @property
    def injectivity_radius(self) -> float:
        return min(self.periods) / 2

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers per real axis, shape ``(2n, *shape)``."""
        return self._k

    def coords(self) -> np.ndarray:
        """Site coordinates, shape ``(2n, *shape)``."""
        axes = [np.arange(self.N) * h for h in self.spacing]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def displacement(self, x0) -> np.ndarray:
        """Minimum-image displacement ``x - x0`` for every site."""
        x = self.coords()
        p = np.asarray(self.periods).reshape((-1,) + (1,) * self.dim)
        d = x - np.asarray(x0, dtype=float).reshape((-1,) + (1,) * self.dim)
        return d - p * np.round(d / p)

    def integrate(self, density: np.ndarray) -> complex:
        """Riemann sum of a per-site density over the torus."""
        axes = tuple(range(density.ndim - self.dim, density.ndim))
        return density.sum(axis=axes) * self.cell_volume

    # -- spectral calculus -------------------------------------------------
    def _axes(self, first_axis):
        return tuple(range(first_axis, first_axis + self.dim))

    def _bshape(self, ndim, first_axis):
        return (1,) * first_axis + self.shape + (1,) * (ndim - first_axis - self.dim)

    def partial(self, f: np.ndarray, a: int, first_axis: int = 0) -> np.ndarray:
        """Complex partial derivative along complex direction ``a``."""
        axes = self._axes(first_axis)
        fh = sfft.fftn(f, axes=axes, workers=fft_workers())
        m = self._mult[a].reshape(self._bshape(f.ndim, first_axis))
        return sfft.ifftn(fh * m, axes=axes, workers=fft_workers())

    def gradient(self, f: np.ndarray, first_axis: int = 0, directions=None) -> np.ndarray:
        """All requested complex partials stacked on a new leading axis."""
        if directions is None:
            directions = range(self.dim)
        axes = self._axes(first_axis)
        fh = sfft.fftn(f, axes=axes, workers=fft_workers())
        bs = self._bshape(f.ndim, first_axis)
        return np.stack([
            sfft.ifftn(fh * self._mult[a].reshape(bs), axes=axes, workers=fft_workers())
            for a in directions
        ])

    def real_partial(self, f: np.ndarray, mu: int, first_axis: int = 0) -> np.ndarray:
        axes = self._axes(first_axis)
        fh = sfft.fftn(f, axes=axes, workers=fft_workers())
        m = 1j * self._k[mu].reshape(self._bshape(f.ndim, first_axis))
        return sfft.ifftn(fh * m, axes=axes, workers=fft_workers())

    def convolve(self, f: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        """Circular convolution of two site fields (kernel centred at the origin site)."""
        axes = tuple(range(self.dim))
        out = sfft.ifftn(
            sfft.fftn(f, axes=axes, workers=fft_workers())
            * sfft.fftn(kernel, axes=axes, workers=fft_workers()),
            axes=axes, workers=fft_workers(),
        )
        return out


def build_torus_geometry(n: int, N: int, periods=None) -> GridGeometry:
    """Build the lattice for a flat torus of complex dimension ``n``.

    ``N`` must be a power of two and at least 8.
    """
    if n not in (1, 2):
        raise GeometryError(f"complex dimension must be 1 or 2, got {n}")
    if N < 8 or N & (N - 1):
        raise GeometryError(f"N must be a power of two >= 8, got {N}")
    if periods is None:
        periods = [1.0] * (2 * n)
    periods = tuple(float(p) for p in periods)
    if len(periods) != 2 * n:
        raise GeometryError(f"need {2 * n} periods, got {len(periods)}")
    if any(p <= 0 for p in periods):
        raise GeometryError("periods must be positive")
    return GridGeometry(n=n, N=N, periods=periods)
