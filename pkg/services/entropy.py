"""Lyapunov functionals and dissipation terms of the cross-diffusion system."""

import math
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services.errors import (
    AsymmetricInteractionError,
    GridMismatchError,
    MassMismatchError,
    NegativeDensityError,
    NonpositiveReferenceError,
)
from services.kernels import InteractionMatrix, KernelRaster, ReversibleMeasure, quadratic_form
from services.nonlocal_op import potentials
from services.torus_grid import (
    FieldSet,
    centered_difference,
    face_difference,
    integrate_array,
    require_same_grid,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-10


@dataclass
class EntropyReport:
    """Entropies, dissipations and per-species extrema of one state."""

    h1: float
    h2: float
    h2_local: Optional[float]
    fisher_dissipation: float
    drift_dissipation: float
    masses: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray

    @property
    def min_density(self) -> float:
        return float(np.min(self.mins))

    @property
    def max_density(self) -> float:
        return float(np.max(self.maxs))


def _weights(pi: ReversibleMeasure, u: FieldSet) -> np.ndarray:
    if pi.n != u.species_count:
        raise GridMismatchError(f"pi has {pi.n} entries for {u.species_count} species")
    return pi.pi.reshape((u.species_count,) + (1,) * u.grid.dim)


def _require_nonnegative(u: FieldSet) -> None:
    low = float(np.min(u.values))
    if low < 0:
        raise NegativeDensityError(f"density takes the negative value {low:.3e}")


def _symmetric_weighted(a: InteractionMatrix, pi: ReversibleMeasure) -> np.ndarray:
    weighted = pi.pi[:, None] * a.a
    scale = float(np.max(np.abs(weighted))) or 1.0
    if np.max(np.abs(weighted - weighted.T)) > SYMMETRY_TOLERANCE * scale:
        raise AsymmetricInteractionError("(pi_i a_ij) is not symmetric")
    return 0.5 * (weighted + weighted.T)


def shannon_entropy(u: FieldSet, pi: ReversibleMeasure) -> float:
    """
    H1(u) = sum_i pi_i * integral of u_i (log u_i - 1), with 0 log 0 = 0.

    Args:
        u: Nonnegative densities
        pi: Reversible measure

    Returns:
        The entropy value
    """
    _require_nonnegative(u)
    values = u.values
    safe = np.where(values > 0, values, 1.0)
    integrand = np.where(values > 0, values * (np.log(safe) - 1.0), 0.0)
    return integrate_array(u.grid, _weights(pi, u) * integrand)


def rao_entropy(u: FieldSet, K: KernelRaster, pi: ReversibleMeasure) -> float:
    _require_nonnegative(u)
    return 0.5 * quadratic_form(K, pi, u)


def rao_entropy_local(u: FieldSet, a: InteractionMatrix, pi: ReversibleMeasure) -> float:
    """H2^0(u) = 1/2 sum_ij integral of pi_i a_ij u_i u_j."""
    _require_nonnegative(u)
    weighted = _symmetric_weighted(a, pi)
    integrand = np.einsum("ij,i...,j...->...", weighted, u.values, u.values)
    return 0.5 * integrate_array(u.grid, integrand)


def fisher_dissipation(u: FieldSet, pi: ReversibleMeasure, sigma: float) -> float:
    """4 sigma sum_i pi_i * integral |grad sqrt(u_i)|^2 with centred differences."""
    root = np.sqrt(np.maximum(u.values, 0.0))
    grid = u.grid
    squared = sum(centered_difference(grid, root, axis) ** 2 for axis in range(grid.dim))
    return 4.0 * sigma * integrate_array(grid, _weights(pi, u) * squared)


def drift_dissipation(u: FieldSet, K: KernelRaster, pi: ReversibleMeasure) -> float:
    """sum_i pi_i * integral u_i |grad p_i[u]|^2 with the spectral gradient of p."""
    pots = potentials(K, u)
    squared = np.sum(pots.grad_p ** 2, axis=1)
    return integrate_array(u.grid, _weights(pi, u) * u.values * squared)


def local_drift_dissipation(u: FieldSet, a: InteractionMatrix, pi: ReversibleMeasure) -> float:
    """Drift dissipation of the local system, p_i = sum_j a_ij u_j."""
    grid = u.grid
    p = np.einsum("ij,j...->i...", a.a, u.values)
    squared = sum(centered_difference(grid, p, axis) ** 2 for axis in range(grid.dim))
    return integrate_array(grid, _weights(pi, u) * u.values * squared)


def alpha_gradient_dissipation(u: FieldSet, a: InteractionMatrix, pi: ReversibleMeasure) -> float:
    """
    alpha * sum_i ||grad u_i||^2, alpha the smallest eigenvalue of (pi_i a_ij).

    Gradients are the face differences the implicit scheme uses, so the value
    is directly comparable to the per-step entropy decrease.
    """
    alpha = float(np.linalg.eigvalsh(_symmetric_weighted(a, pi))[0])
    grid = u.grid
    squared = sum(face_difference(grid, u.values, axis) ** 2 for axis in range(grid.dim))
    return alpha * integrate_array(grid, squared)


def relative_entropy(u: FieldSet, v: FieldSet, pi: ReversibleMeasure) -> float:
    """H(u|v) = sum_i pi_i * integral (u_i (log u_i - 1) - u_i log v_i + v_i)."""
    require_same_grid(u.grid, v.grid)
    _require_nonnegative(u)
    if float(np.min(v.values)) <= 0:
        raise NonpositiveReferenceError("reference density must be strictly positive")
    x, y = u.values, v.values
    safe = np.where(x > 0, x, 1.0)
    integrand = np.where(x > 0, x * (np.log(safe) - np.log(y)) - x + y, y)
    return integrate_array(u.grid, _weights(pi, u) * integrand)


def ckp_lower_bound(u: FieldSet, v: FieldSet, pi: ReversibleMeasure, mass_tolerance: float = MASS_TOLERANCE) -> float:
    """
    Csiszar-Kullback-Pinsker lower bound sum_i pi_i ||u_i - v_i||_1^2 / (2 m_i).

    Requires equal per-species masses m_i.
    """
    require_same_grid(u.grid, v.grid)
    mass_u, mass_v = u.masses(), v.masses()
    for i, (mu, mv) in enumerate(zip(mass_u, mass_v)):
        if abs(mu - mv) > mass_tolerance * max(abs(mu), abs(mv), 1e-300):
            raise MassMismatchError(f"species {i}: mass {mu:.15g} vs {mv:.15g}")
    total = []
    for i in range(u.species_count):
        if mass_u[i] <= 0:
            continue
        l1 = integrate_array(u.grid, np.abs(u.values[i] - v.values[i]))
        total.append(pi.pi[i] * l1 ** 2 / (2.0 * mass_u[i]))
    return math.fsum(total)


def entropy_report(
    u: FieldSet,
    pi: ReversibleMeasure,
    sigma: float,
    kernel: Optional[KernelRaster] = None,
    interaction: Optional[InteractionMatrix] = None,
) -> EntropyReport:
    """
    Evaluate every diagnostic of a state.

    Args:
        u: Nonnegative densities
        pi: Reversible measure
        sigma: Diffusion coefficient
        kernel: Nonlocal kernel; when None the local system is assumed
        interaction: Interaction matrix, enables H2^0

    Returns:
        EntropyReport; for the local system h2 equals h2_local
    """
    h2_local = None
    if interaction is not None:
        try:
            h2_local = rao_entropy_local(u, interaction, pi)
        except AsymmetricInteractionError:
            if kernel is None:
                raise
    if kernel is not None:
        h2 = rao_entropy(u, kernel, pi)
        drift = drift_dissipation(u, kernel, pi)
    else:
        h2 = h2_local
        drift = local_drift_dissipation(u, interaction, pi)
    flat = u.values.reshape(u.species_count, -1)
    return EntropyReport(
        h1=shannon_entropy(u, pi),
        h2=h2,
        h2_local=h2_local,
        fisher_dissipation=fisher_dissipation(u, pi, sigma),
        drift_dissipation=drift,
        masses=u.masses(),
        mins=flat.min(axis=1),
        maxs=flat.max(axis=1),
    )
