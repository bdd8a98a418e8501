"""
Periodic uniform grids on the d-torus and discrete calculus over them.

Values are cell-centred samples; cell k covers [k h, (k+1) h) and its centre sits
at (k + 1/2) h. Every operator here is built from circular shifts, so all of them
commute exactly with grid translations. Reductions go through ``math.fsum`` and do
not depend on how an array happens to be laid out in memory.
"""

import math
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from services.errors import (
    GridMismatchError,
    InvalidDimensionError,
    InvalidNormError,
    NonFiniteValueError,
    NonpositivePeriodError,
    OddCellCountError,
)

logger = logging.getLogger(__name__)

SUPPORTED_DIMS = (1, 2)
MIN_CELLS = 8


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``cells_per_dim`` cells along each of ``dim`` periodic axes."""

    dim: int
    cells_per_dim: int
    periods: Tuple[float, ...]

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.cells_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.cells_per_dim ** self.dim

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(length / self.cells_per_dim for length in self.periods)

    @property
    def cell_size(self) -> float:
        """Spacing along the first axis (all axes share it when the periods agree)."""
        return self.spacing[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    def cell_centers(self) -> Tuple[np.ndarray, ...]:
        """Coordinates of the cell centres, one ``shape``-sized array per axis."""
        axes = [
            (np.arange(self.cells_per_dim) + 0.5) * h for h in self.spacing
        ]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def displacements(self) -> Tuple[np.ndarray, ...]:
        """Signed centre-to-centre displacements m*h, wrapped to [-L/2, L/2)."""
        n = self.cells_per_dim
        index = np.arange(n)
        signed = np.where(index < n // 2, index, index - n)
        axes = [signed * h for h in self.spacing]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def frequencies(self, real: bool = True) -> Tuple[np.ndarray, ...]:
        """Signed integer mode numbers in the (r)fftn layout, broadcastable per axis."""
        n = self.cells_per_dim
        freqs = []
        for axis in range(self.dim):
            if real and axis == self.dim - 1:
                f = np.fft.rfftfreq(n) * n
            else:
                f = np.fft.fftfreq(n) * n
            shape = [1] * self.dim
            shape[axis] = f.size
            freqs.append(np.rint(f).reshape(shape))
        return tuple(freqs)

    def spectral_shape(self) -> Tuple[int, ...]:
        n = self.cells_per_dim
        return (n,) * (self.dim - 1) + (n // 2 + 1,)


def make_grid(dim: int, cells_per_dim: int, period: Union[float, Sequence[float]] = 1.0) -> TorusGrid:
    """
    Build and validate a torus grid.

    Args:
        dim: Number of periodic axes (1 or 2)
        cells_per_dim: Cells along each axis, even and at least 8
        period: Torus length, a single value or one per axis

    Returns:
        The validated grid
    """
    if dim not in SUPPORTED_DIMS:
        raise InvalidDimensionError(f"dimension must be one of {SUPPORTED_DIMS}, got {dim}")
    if cells_per_dim < MIN_CELLS or cells_per_dim % 2 != 0:
        raise OddCellCountError(
            f"cells_per_dim must be even and >= {MIN_CELLS}, got {cells_per_dim}"
        )
    if np.isscalar(period):
        periods = (float(period),) * dim
    else:
        periods = tuple(float(p) for p in period)
        if len(periods) != dim:
            raise InvalidDimensionError(f"expected {dim} periods, got {len(periods)}")
    if any(not (p > 0 and math.isfinite(p)) for p in periods):
        raise NonpositivePeriodError(f"periods must be positive, got {periods}")
    return TorusGrid(dim=dim, cells_per_dim=int(cells_per_dim), periods=periods)


@dataclass
class Field:
    """One scalar raster on a grid."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValueError("field contains non-finite values")


@dataclass
class FieldSet:
    """n species rasters sharing one grid; ``values`` has shape (n, *grid.shape)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.grid.dim + 1 or self.values.shape[1:] != self.grid.shape:
            raise GridMismatchError(
                f"field set shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if self.values.shape[0] < 1:
            raise ValueError("a field set needs at least one species")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValueError("field set contains non-finite values")

    @property
    def species_count(self) -> int:
        return self.values.shape[0]

    def field(self, species: int) -> Field:
        return Field(self.grid, self.values[species])

    def masses(self) -> np.ndarray:
        return np.array([integrate(self.field(i)) for i in range(self.species_count)])

    def copy(self) -> "FieldSet":
        return FieldSet(self.grid, self.values.copy())

    @classmethod
    def from_fields(cls, fields: Sequence[Field]) -> "FieldSet":
        grid = fields[0].grid
        for f in fields[1:]:
            require_same_grid(grid, f.grid)
        return cls(grid, np.stack([f.values for f in fields]))


def require_same_grid(a: TorusGrid, b: TorusGrid) -> None:
    if a != b:
        raise GridMismatchError(f"grids differ: {a} vs {b}")


def _axis(grid: TorusGrid, axis: int) -> int:
    # trailing axes are spatial, so leading species axes pass through untouched
    return axis - grid.dim


def integrate(f: Field) -> float:
    """Midpoint quadrature h^d * sum(values), correctly rounded."""
    return f.grid.cell_volume * math.fsum(f.values.ravel())


def integrate_array(grid: TorusGrid, values: np.ndarray) -> float:
    return grid.cell_volume * math.fsum(np.asarray(values, dtype=float).ravel())


def lp_norm(f: Field, p: float) -> float:
    """Discrete L^p norm; ``p = inf`` gives the maximum modulus."""
    if math.isinf(p) and p > 0:
        return float(np.max(np.abs(f.values)))
    if not p >= 1:
        raise InvalidNormError(f"p must be >= 1 or inf, got {p}")
    total = f.grid.cell_volume * math.fsum((np.abs(f.values) ** p).ravel())
    return total ** (1.0 / p)


def face_difference(grid: TorusGrid, values: np.ndarray, axis: int) -> np.ndarray:
    """(v[k+1] - v[k]) / h on the face between cells k and k+1 (stored at index k)."""
    ax = _axis(grid, axis)
    return (np.roll(values, -1, axis=ax) - values) / grid.spacing[axis]


def face_average(grid: TorusGrid, values: np.ndarray, axis: int) -> np.ndarray:
    ax = _axis(grid, axis)
    return 0.5 * (values + np.roll(values, -1, axis=ax))


def flux_divergence(grid: TorusGrid, face_flux: np.ndarray, axis: int) -> np.ndarray:
    """(F[k+1/2] - F[k-1/2]) / h; sums to zero over the torus by telescoping."""
    ax = _axis(grid, axis)
    return (face_flux - np.roll(face_flux, 1, axis=ax)) / grid.spacing[axis]


def centered_difference(grid: TorusGrid, values: np.ndarray, axis: int) -> np.ndarray:
    ax = _axis(grid, axis)
    return (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2.0 * grid.spacing[axis])


def laplacian_array(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    result = np.zeros_like(values, dtype=float)
    for axis in range(grid.dim):
        result += flux_divergence(grid, face_difference(grid, values, axis), axis)
    return result


def gradient(f: Field) -> Tuple[Field, ...]:
    """Centred differences with periodic wrap, one component per axis."""
    return tuple(
        Field(f.grid, centered_difference(f.grid, f.values, axis)) for axis in range(f.grid.dim)
    )


def laplacian(f: Field) -> Field:
    """3-point (1D) or 5-point (2D) periodic stencil divided by h^2."""
    return Field(f.grid, laplacian_array(f.grid, f.values))


def divergence(components: Sequence[Field]) -> Field:
    grid = components[0].grid
    if len(components) != grid.dim:
        raise GridMismatchError(f"expected {grid.dim} components, got {len(components)}")
    result = np.zeros(grid.shape)
    for axis, comp in enumerate(components):
        require_same_grid(grid, comp.grid)
        result += centered_difference(grid, comp.values, axis)
    return Field(grid, result)


def resample(f: Field, grid: TorusGrid) -> Field:
    """
    Evaluate the trigonometric interpolant of ``f`` at the cell centres of ``grid``.

    Both grids must describe the same torus. Modes at or beyond the smaller
    Nyquist frequency are dropped.
    """
    src = f.grid
    if src.dim != grid.dim or src.periods != grid.periods:
        raise GridMismatchError("resampling requires the same torus")
    n_src, n_dst = src.cells_per_dim, grid.cells_per_dim
    half = min(n_src, n_dst) // 2
    ks = np.arange(-half + 1, half)
    spectrum = np.fft.fftn(f.values) / (n_src ** src.dim)

    # cell-centred samples carry a half-cell phase shift relative to the DFT nodes
    phase_1d = np.exp(-1j * np.pi * ks / n_src + 1j * np.pi * ks / n_dst)
    src_idx = np.ix_(*([ks % n_src] * src.dim))
    dst_idx = np.ix_(*([ks % n_dst] * src.dim))
    phase = phase_1d
    for _ in range(src.dim - 1):
        phase = np.multiply.outer(phase, phase_1d)

    target = np.zeros(grid.shape, dtype=complex)
    target[dst_idx] = spectrum[src_idx] * phase
    values = np.fft.ifftn(target).real * (n_dst ** grid.dim)
    return Field(grid, values)
