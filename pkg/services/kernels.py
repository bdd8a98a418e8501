"""
Interaction kernels K_ij = a_ij * K on the torus.

Builds periodized kernel rasters, solves for the reversible measure pi of the
detailed-balance condition pi_i a_ij = pi_j a_ji, and certifies positive
definiteness of the family (pi_i K_ij) mode by mode in Fourier space.
"""

import math
import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate as quadrature

from data.profiles import MOLLIFIER_PROFILES
from models import KernelFamily, PDCertificate, PDVerdict
from services.errors import (
    DetailedBalanceError,
    GridMismatchError,
    InvalidInteractionError,
    InvalidKernelError,
    NoReversibleMeasureError,
    ProfileNormalizationError,
    StructuralAsymmetryError,
)
from services.nonlocal_op import apply_kernel, kernel_multiplier, spatial_axes
from services.torus_grid import Field, FieldSet, TorusGrid, require_same_grid

logger = logging.getLogger(__name__)

TAIL_MASS = 1e-14
PROFILE_TOLERANCE = 1e-8
BALANCE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class InteractionMatrix:
    """Nonnegative n x n interaction coefficients a_ij."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidInteractionError(f"interaction must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise InvalidInteractionError("interaction entries must be finite and >= 0")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class ReversibleMeasure:
    """Positive weights pi_i, normalized to sum to one."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).ravel()
        if pi.size < 1 or not np.all(np.isfinite(pi)) or np.any(pi <= 0):
            raise InvalidInteractionError("reversible measure entries must be > 0")
        pi = pi / math.fsum(pi)
        pi.flags.writeable = False
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.pi.size

    @classmethod
    def uniform(cls, n: int) -> "ReversibleMeasure":
        return cls(np.ones(n))


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    interaction: InteractionMatrix
    radius: Optional[float] = None
    epsilon: Optional[float] = None
    profile: str = "gaussian"
    scale: float = 1.0


@dataclass(frozen=True)
class KernelRaster:
    """
    Sampled, periodized kernel family on a grid.

    ``rasters[i, j]`` samples K_ij at the centre-to-centre displacements m*h;
    ``fourier[i, j]`` is its h^d-weighted rfftn and ``masses[i, j]`` its
    discrete integral.
    """

    grid: TorusGrid
    family: KernelFamily
    rasters: np.ndarray
    fourier: np.ndarray
    masses: np.ndarray
    smooth: bool

    @property
    def n(self) -> int:
        return self.rasters.shape[0]

    def pair(self, i: int, j: int) -> Field:
        return Field(self.grid, self.rasters[i, j])


def _periodic_gaussian_1d(z: np.ndarray, epsilon: float, period: float) -> np.ndarray:
    reach = epsilon * math.sqrt(2.0 * math.log(1.0 / TAIL_MASS))
    images = int(math.ceil(reach / period + 0.5))
    total = np.zeros_like(z)
    for k in range(-images, images + 1):
        total += np.exp(-((z + k * period) ** 2) / (2.0 * epsilon ** 2))
    return total / math.sqrt(2.0 * math.pi * epsilon ** 2)


def _gaussian_raster(grid: TorusGrid, epsilon: float) -> np.ndarray:
    raster = np.ones(grid.shape)
    for z, period in zip(grid.displacements(), grid.periods):
        raster = raster * _periodic_gaussian_1d(z, epsilon, period)
    return raster


def _cauchy_raster(grid: TorusGrid, scale: float) -> np.ndarray:
    if grid.dim != 1:
        raise InvalidKernelError("the Cauchy kernel is not integrable in 2D; its periodization diverges")
    (z,) = grid.displacements()
    period = grid.periods[0]
    arg = 2.0 * math.pi * scale / period
    if arg > 300.0:
        raise InvalidKernelError(f"Cauchy scale {scale} too wide for period {period}")
    # closed-form lattice sum of 1 / (1 + ((z + kL)/s)^2)
    return (math.pi * scale / period) * math.sinh(arg) / (math.cosh(arg) - np.cos(2.0 * math.pi * z / period))


def _interval_overlap(lo: np.ndarray, hi: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.maximum(0.0, np.minimum(hi, b) - np.maximum(lo, a))


def _disk_corner_area(x: np.ndarray, y: np.ndarray, r: float) -> np.ndarray:
    """Signed area of the disk of radius r inside the rectangle spanned by (0, 0) and (x, y)."""
    sign = np.sign(x) * np.sign(y)
    x = np.minimum(np.abs(x), r)
    y = np.minimum(np.abs(y), r)

    def segment(t):
        return 0.5 * (t * np.sqrt(np.maximum(r * r - t * t, 0.0)) + r * r * np.arcsin(np.clip(t / r, -1.0, 1.0)))

    knee = np.sqrt(np.maximum(r * r - y * y, 0.0))
    flat = np.minimum(x, knee)
    return sign * (y * flat + segment(x) - segment(flat))


def _indicator_raster(grid: TorusGrid, radius: float) -> np.ndarray:
    """Exact fraction of every cell covered by the periodized ball, as a density."""
    if not 0.0 < radius < 0.5 * min(grid.periods):
        raise InvalidKernelError(f"radius must lie in (0, L/2), got {radius}")
    h = grid.spacing
    disp = grid.displacements()
    overlap = np.zeros(grid.shape)
    shifts = np.array(np.meshgrid(*([[-1, 0, 1]] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T
    for shift in shifts:
        lows = [d - 0.5 * hh + s * L for d, hh, s, L in zip(disp, h, shift, grid.periods)]
        highs = [d + 0.5 * hh + s * L for d, hh, s, L in zip(disp, h, shift, grid.periods)]
        if grid.dim == 1:
            overlap += _interval_overlap(lows[0], highs[0], -radius, radius)
        else:
            (x0, y0), (x1, y1) = lows, highs
            overlap += (
                _disk_corner_area(x1, y1, radius) - _disk_corner_area(x0, y1, radius)
                - _disk_corner_area(x1, y0, radius) + _disk_corner_area(x0, y0, radius)
            )
    return overlap / grid.cell_volume


def _profile_normalization(profile: str, dim: int) -> float:
    """Checks the 1D normalization of B and returns its d-dimensional radial integral."""
    if profile not in MOLLIFIER_PROFILES:
        raise ProfileNormalizationError(f"unknown mollifier profile '{profile}'")
    func = MOLLIFIER_PROFILES[profile]["function"]
    total, _ = quadrature.quad(lambda z: float(func(z)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    if abs(total - 1.0) > PROFILE_TOLERANCE:
        raise ProfileNormalizationError(
            f"profile '{profile}' integrates to {total:.12g}, expected 1"
        )
    if dim == 1:
        return total
    radial, _ = quadrature.quad(lambda r: float(func(r)) * r, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return 2.0 * math.pi * radial


def _mollifier_raster(grid: TorusGrid, epsilon: float, profile: str) -> np.ndarray:
    norm = _profile_normalization(profile, grid.dim)
    func = MOLLIFIER_PROFILES[profile]["function"]
    disp = grid.displacements()
    images = int(math.ceil(epsilon / min(grid.periods) + 0.5))
    raster = np.zeros(grid.shape)
    offsets = range(-images, images + 1)
    for shift in np.array(np.meshgrid(*([list(offsets)] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T:
        radius_sq = sum((d + s * L) ** 2 for d, s, L in zip(disp, shift, grid.periods))
        raster += func(np.sqrt(radius_sq) / epsilon)
    raster /= epsilon ** grid.dim * norm
    # renormalize so the discrete mass is exactly one before scaling by a_ij
    discrete_mass = grid.cell_volume * math.fsum(raster.ravel())
    logger.debug(f"mollifier '{profile}' eps={epsilon}: sampled mass {discrete_mass:.12g}")
    return raster / discrete_mass


def build_kernel(spec: KernelSpec, grid: TorusGrid) -> KernelRaster:
    """
    Sample and periodize the kernel family a_ij * K on ``grid``.

    Args:
        spec: Family, parameters and interaction matrix
        grid: Target grid

    Returns:
        Immutable KernelRaster with Fourier multipliers and masses
    """
    family = KernelFamily(spec.family)
    half_period = 0.5 * min(grid.periods)
    if family in (KernelFamily.GAUSSIAN, KernelFamily.MOLLIFIER):
        if spec.epsilon is None or spec.epsilon <= 0:
            raise InvalidKernelError("epsilon must be > 0")
        if spec.epsilon >= half_period:
            logger.warning(f"{family.value} kernel with epsilon={spec.epsilon} >= L/2; images overlap strongly")

    if family == KernelFamily.GAUSSIAN:
        base, smooth = _gaussian_raster(grid, spec.epsilon), True
    elif family == KernelFamily.INDICATOR_BALL:
        if spec.radius is None:
            raise InvalidKernelError("radius is required for the indicator kernel")
        base, smooth = _indicator_raster(grid, spec.radius), False
    elif family == KernelFamily.CAUCHY:
        base, smooth = _cauchy_raster(grid, spec.scale), True
    else:
        base = _mollifier_raster(grid, spec.epsilon, spec.profile)
        smooth = MOLLIFIER_PROFILES[spec.profile]["smooth"]

    a = spec.interaction.a
    rasters = a.reshape(a.shape + (1,) * grid.dim) * base
    fourier = kernel_multiplier(grid, rasters)
    masses = np.array(
        [[grid.cell_volume * math.fsum(rasters[i, j].ravel()) for j in range(a.shape[0])] for i in range(a.shape[0])]
    )
    for arr in (rasters, fourier, masses):
        arr.flags.writeable = False
    logger.info(f"Built {family.value} kernel on {grid.dim}D grid N={grid.cells_per_dim}, base mass {masses.max():.6g}")
    return KernelRaster(grid=grid, family=family, rasters=rasters, fourier=fourier, masses=masses, smooth=smooth)


def solve_reversible_measure(a: InteractionMatrix) -> ReversibleMeasure:
    """
    Find pi > 0 with pi_i a_ij = pi_j a_ji by spanning-tree propagation.

    Ratios pi_j / pi_i = a_ij / a_ji are propagated breadth-first from the first
    node of every connected component; every off-tree edge is then verified
    (Kolmogorov cycle consistency). Components are weighted equally before the
    global normalization.
    """
    mat = a.a
    n = a.n
    for i in range(n):
        for j in range(i + 1, n):
            if (mat[i, j] > 0) != (mat[j, i] > 0):
                raise StructuralAsymmetryError(
                    f"a[{i},{j}]={mat[i, j]} but a[{j},{i}]={mat[j, i]}"
                )

    weights = np.zeros(n)
    for root in range(n):
        if weights[root] > 0:
            continue
        weights[root] = 1.0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in range(n):
                if j != i and mat[i, j] > 0 and weights[j] == 0:
                    weights[j] = weights[i] * mat[i, j] / mat[j, i]
                    queue.append(j)

    pi = weights / math.fsum(weights)
    scale = float(np.max(mat)) if np.max(mat) > 0 else 1.0
    residual = np.abs(pi[:, None] * mat - (pi[:, None] * mat).T)
    if np.max(residual) > BALANCE_TOLERANCE * scale:
        i, j = np.unravel_index(np.argmax(residual), residual.shape)
        raise NoReversibleMeasureError(
            f"cycle inconsistency on edge ({i},{j}): residual {residual[i, j]:.3e}"
        )
    return ReversibleMeasure(pi)


def _reflect(grid: TorusGrid, raster: np.ndarray) -> np.ndarray:
    """raster(-z): index m maps to (-m) mod N on every spatial axis."""
    axes = spatial_axes(grid, raster.ndim)
    return np.roll(np.flip(raster, axis=axes), 1, axis=axes)


def check_detailed_balance(K: KernelRaster, pi: ReversibleMeasure) -> float:
    """max over pairs and cells of |pi_i K_ij(z) - pi_j K_ji(-z)|."""
    if pi.n != K.n:
        raise GridMismatchError(f"pi has {pi.n} entries for {K.n} species")
    weights = pi.pi.reshape((K.n, 1) + (1,) * K.grid.dim)
    weighted = weights * K.rasters
    mirrored = _reflect(K.grid, np.swapaxes(weighted, 0, 1))
    return float(np.max(np.abs(weighted - mirrored)))


def default_tolerance(K: KernelRaster) -> float:
    scale = float(np.max(np.abs(K.masses)))
    return 1e-10 * (scale if scale > 0 else 1.0)


def certify_positive_definite(K: KernelRaster, pi: ReversibleMeasure, tol: Optional[float] = None) -> PDCertificate:
    """
    Decide (H4) at grid resolution from the per-mode matrices pi_i K^_ij(xi).

    By Parseval the quadratic form is a nonnegative combination of these
    Hermitian mode matrices, so the smallest eigenvalue over all modes settles
    the question exactly for the discrete operator.
    """
    tol = default_tolerance(K) if tol is None else tol
    residual = check_detailed_balance(K, pi)
    if residual > max(tol, BALANCE_TOLERANCE * float(np.max(np.abs(K.rasters)) or 1.0)):
        raise DetailedBalanceError(f"detailed-balance residual {residual:.3e} exceeds tolerance {tol:.3e}")

    weights = pi.pi.reshape((K.n, 1) + (1,) * K.grid.dim)
    modes = np.moveaxis(weights * K.fourier, (0, 1), (-2, -1))
    modes = 0.5 * (modes + np.conj(np.swapaxes(modes, -1, -2)))
    if not np.all(np.isfinite(modes)):
        return PDCertificate(
            verdict=PDVerdict.INCONCLUSIVE, min_multiplier_eig=float("nan"), max_multiplier_eig=float("nan"),
            normalized_min_multiplier=float("nan"), tolerance=tol, detailed_balance_residual=residual,
        )
    eigvals, eigvecs = np.linalg.eigh(modes)
    lowest = eigvals[..., 0]
    flat = int(np.argmin(lowest))
    index = np.unravel_index(flat, lowest.shape)
    min_eig = float(lowest[index])
    max_eig = float(np.max(eigvals))
    normalized = min_eig / max_eig if max_eig > 0 else 0.0

    if min_eig >= -tol:
        verdict, mode, vector = PDVerdict.POSITIVE_DEFINITE, None, None
    else:
        verdict = PDVerdict.NOT_POSITIVE_DEFINITE
        freqs = K.grid.frequencies(real=True)
        mode = [int(np.broadcast_to(f, lowest.shape)[index]) for f in freqs]
        vec = eigvecs[index][:, 0]
        vec = vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
        vector = (vec.real / np.linalg.norm(vec.real)).tolist()
    logger.info(f"PD certificate: {verdict.value}, min eigenvalue {min_eig:.6g} (normalized {normalized:.6g})")
    return PDCertificate(
        verdict=verdict, min_multiplier_eig=min_eig, max_multiplier_eig=max_eig,
        normalized_min_multiplier=normalized, tolerance=tol, detailed_balance_residual=residual,
        witness_mode=mode, witness_vector=vector,
    )


def witness_field(certificate: PDCertificate, K: KernelRaster) -> FieldSet:
    """Test field e_i * cos(2*pi*xi.j/N) realizing the certificate's minimizing mode."""
    if certificate.witness_mode is None:
        raise ValueError("certificate carries no witness")
    grid = K.grid
    index = np.meshgrid(*([np.arange(grid.cells_per_dim)] * grid.dim), indexing="ij")
    phase = sum(2.0 * math.pi * m * j / grid.cells_per_dim for m, j in zip(certificate.witness_mode, index))
    wave = np.cos(phase)
    vector = np.asarray(certificate.witness_vector)
    return FieldSet(grid, vector.reshape((-1,) + (1,) * grid.dim) * wave)


def quadratic_form(K: KernelRaster, pi: ReversibleMeasure, v: FieldSet) -> float:
    """sum_ij pi_i double-integral K_ij(x-y) v_i(x) v_j(y), via convolution."""
    require_same_grid(K.grid, v.grid)
    if v.species_count != K.n:
        raise GridMismatchError(f"field set has {v.species_count} species, kernel has {K.n}")
    conv = apply_kernel(K, v.values)
    weighted = pi.pi.reshape((K.n,) + (1,) * K.grid.dim) * v.values * conv
    return K.grid.cell_volume * math.fsum(weighted.ravel())
