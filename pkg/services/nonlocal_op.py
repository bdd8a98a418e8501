"""
Nonlocal potentials p_i[u] = sum_j K_ij * u_j via FFT circular convolution.

Kernel rasters hold density values, so every convolution carries the h^d
quadrature weight; the cached Fourier multipliers of a ``KernelRaster`` already
include it. Derivatives of p are taken spectrally.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from services.cache import spectral_cache
from services.errors import KernelNotSmoothError, SizeGuardError
from services.torus_grid import Field, FieldSet, TorusGrid, require_same_grid

if TYPE_CHECKING:
    from services.kernels import KernelRaster

logger = logging.getLogger(__name__)

# convolve_direct is O(N^(2d)); beyond these sizes it needs an explicit override
DIRECT_LIMITS = {1: 128, 2: 48}


@dataclass
class PotentialSet:
    """p_i[u], their gradients (shape (n, dim, *grid)) and optionally Laplacians."""

    grid: TorusGrid
    p: np.ndarray
    grad_p: np.ndarray
    lap_p: Optional[np.ndarray] = None


def spatial_axes(grid: TorusGrid, ndim: int) -> Tuple[int, ...]:
    return tuple(range(ndim - grid.dim, ndim))


def forward(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return np.fft.rfftn(values, axes=spatial_axes(grid, values.ndim))


def inverse(grid: TorusGrid, spectrum: np.ndarray) -> np.ndarray:
    return np.fft.irfftn(spectrum, s=grid.shape, axes=spatial_axes(grid, spectrum.ndim))


def kernel_multiplier(grid: TorusGrid, raster: np.ndarray) -> np.ndarray:
    """Quadrature-weighted DFT of a kernel raster; its zero mode is the kernel mass."""
    return forward(grid, raster) * grid.cell_volume


def wavenumbers(grid: TorusGrid) -> Tuple[np.ndarray, ...]:
    """Angular wavenumbers 2*pi*m/L per axis in the rfftn layout."""
    def compute():
        freqs = grid.frequencies(real=True)
        return tuple(2.0 * np.pi * f / length for f, length in zip(freqs, grid.periods))
    return spectral_cache.get_or_compute((grid, "wavenumbers"), compute)


def gradient_multipliers(grid: TorusGrid) -> Tuple[np.ndarray, ...]:
    """i*k per axis with the Nyquist mode zeroed (odd-derivative convention)."""
    def compute():
        n = grid.cells_per_dim
        result = []
        for f, k in zip(grid.frequencies(real=True), wavenumbers(grid)):
            result.append(np.where(np.abs(f) == n // 2, 0.0, 1j * k))
        return tuple(result)
    return spectral_cache.get_or_compute((grid, "gradient"), compute)


def laplacian_multiplier(grid: TorusGrid) -> np.ndarray:
    def compute():
        total = 0.0
        for k in wavenumbers(grid):
            total = total + k ** 2
        return -np.broadcast_to(total, grid.spectral_shape()).copy()
    return spectral_cache.get_or_compute((grid, "laplacian"), compute)


def convolve(K_pair: Field, u: Field) -> Field:
    """h^d-weighted circular convolution computed in Fourier space."""
    require_same_grid(K_pair.grid, u.grid)
    grid = u.grid
    spectrum = kernel_multiplier(grid, K_pair.values) * forward(grid, u.values)
    return Field(grid, inverse(grid, spectrum))


def convolve_direct(K_pair: Field, u: Field, override: bool = False) -> Field:
    """
    Circular convolution by explicit summation, in a fixed order.

    Used as the oracle for ``convolve``. Refuses large grids unless ``override``.
    """
    require_same_grid(K_pair.grid, u.grid)
    grid = u.grid
    limit = DIRECT_LIMITS.get(grid.dim, 0)
    if grid.cells_per_dim > limit and not override:
        raise SizeGuardError(
            f"direct convolution limited to N <= {limit} in {grid.dim}D, got {grid.cells_per_dim}"
        )
    axes = tuple(range(grid.dim))
    result = np.zeros(grid.shape)
    for index in np.ndindex(*grid.shape):
        weight = u.values[index]
        if weight != 0.0:
            result += weight * np.roll(K_pair.values, index, axis=axes)
    return Field(grid, result * grid.cell_volume)


def apply_kernel(K: "KernelRaster", values: np.ndarray) -> np.ndarray:
    """p_i = sum_j K_ij * v_j for a stack of species rasters ``values``."""
    grid = K.grid
    spectrum = np.einsum("ij...,j...->i...", K.fourier, forward(grid, values))
    return inverse(grid, spectrum)


def kernel_laplacian(K: "KernelRaster") -> np.ndarray:
    """Laplacian of every pair raster, computed spectrally (shape (n, n, *grid))."""
    if not K.smooth:
        raise KernelNotSmoothError(
            f"{K.family.value} kernel has no bounded Laplacian"
        )
    grid = K.grid
    return inverse(grid, K.fourier * laplacian_multiplier(grid)) / grid.cell_volume


def potentials(K: "KernelRaster", u: FieldSet, with_laplacian: bool = False) -> PotentialSet:
    """
    Evaluate p_i[u], grad p_i[u] and, when requested, Laplacian p_i[u].

    Args:
        K: Kernel raster on the same grid as ``u``
        u: Densities
        with_laplacian: Also return Laplacian p (refused for non-smooth kernels)

    Returns:
        PotentialSet with arrays shaped (n, *grid) and (n, dim, *grid)
    """
    require_same_grid(K.grid, u.grid)
    grid = u.grid
    if with_laplacian and not K.smooth:
        raise KernelNotSmoothError(
            f"Laplacian of p needs a kernel with bounded Laplacian; {K.family.value} is not"
        )
    p_hat = np.einsum("ij...,j...->i...", K.fourier, forward(grid, u.values))
    p = inverse(grid, p_hat)
    grad_p = np.stack(
        [inverse(grid, p_hat * mult) for mult in gradient_multipliers(grid)], axis=1
    )
    lap_p = inverse(grid, p_hat * laplacian_multiplier(grid)) if with_laplacian else None
    return PotentialSet(grid=grid, p=p, grad_p=grad_p, lap_p=lap_p)
