"""Initial-data and perturbation generators."""

import math
import logging
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from models import InitialConfig, PerturbationConfig
from services.nonlocal_op import forward, inverse, wavenumbers
from services.torus_grid import FieldSet, TorusGrid

logger = logging.getLogger(__name__)

# low-pass cutoff (in modes) applied to random fields
SMOOTHING_MODES = 4.0


def _levels(level: Union[float, Sequence[float]], species: int) -> np.ndarray:
    values = np.atleast_1d(np.asarray(level, dtype=float))
    if values.size == 1:
        values = np.repeat(values, species)
    if values.size != species:
        raise ValueError(f"expected {species} levels, got {values.size}")
    return values


def _broadcast(grid: TorusGrid, per_species: np.ndarray) -> np.ndarray:
    return per_species.reshape((-1,) + (1,) * grid.dim)


def _wave(grid: TorusGrid, wave: Sequence[int]) -> np.ndarray:
    """cos(2 pi k.x / L) at the cell centres for the integer wave vector k."""
    modes = list(wave) + [0] * (grid.dim - len(wave))
    if len(modes) != grid.dim:
        raise ValueError(f"wave vector {list(wave)} does not fit a {grid.dim}D grid")
    phase = sum(
        2.0 * math.pi * k * x / length
        for k, x, length in zip(modes, grid.cell_centers(), grid.periods)
    )
    return np.cos(phase)


def _smooth_noise(grid: TorusGrid, species: int, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal((species,) + grid.shape)
    k2 = sum(
        (k * length / (2.0 * math.pi)) ** 2 for k, length in zip(wavenumbers(grid), grid.periods)
    )
    filtered = inverse(grid, forward(grid, noise) * np.exp(-k2 / SMOOTHING_MODES ** 2))
    filtered -= filtered.reshape(species, -1).mean(axis=1).reshape((species,) + (1,) * grid.dim)
    scale = np.max(np.abs(filtered.reshape(species, -1)), axis=1)
    scale[scale == 0] = 1.0
    return filtered / _broadcast(grid, scale)


def constant_state(grid: TorusGrid, species: int, level=1.0) -> FieldSet:
    values = np.ones((species,) + grid.shape) * _broadcast(grid, _levels(level, species))
    return FieldSet(grid, values)


def mode_state(grid: TorusGrid, species: int, level=1.0, amplitude: float = 0.5, wave: Sequence[int] = (1,)) -> FieldSet:
    """level_i + amplitude * cos(2 pi k.x / L), e.g. 1 + cos(2 pi x)/2."""
    levels = _broadcast(grid, _levels(level, species))
    return FieldSet(grid, levels + amplitude * _wave(grid, wave)[None])


def random_state(grid: TorusGrid, species: int, level=1.0, amplitude: float = 0.5, seed: int = 0) -> FieldSet:
    """
    Smooth random positive field level_i * (1 + amplitude * noise), |noise| <= 1.

    Args:
        grid: Target grid
        species: Number of species
        level: Mean level, scalar or per species
        amplitude: Relative fluctuation in [0, 1)
        seed: Seed of the numpy generator

    Returns:
        Strictly positive FieldSet
    """
    if not 0.0 <= amplitude < 1.0:
        raise ValueError(f"random amplitude must lie in [0, 1), got {amplitude}")
    rng = np.random.default_rng(seed)
    levels = _broadcast(grid, _levels(level, species))
    return FieldSet(grid, levels * (1.0 + amplitude * _smooth_noise(grid, species, rng)))


def bumps_state(
    grid: TorusGrid,
    species: int,
    level=1.0,
    amplitude: float = 0.5,
    count: int = 3,
    width: float = 0.1,
    seed: int = 0,
) -> FieldSet:
    """Background level plus ``count`` periodic Gaussian bumps per species at seeded centres."""
    rng = np.random.default_rng(seed)
    levels = _broadcast(grid, _levels(level, species))
    values = np.zeros((species,) + grid.shape)
    centers = grid.cell_centers()
    for i in range(species):
        for _ in range(count):
            origin = [rng.uniform(0.0, length) for length in grid.periods]
            dist2 = 0.0
            for x, c, length in zip(centers, origin, grid.periods):
                delta = (x - c + 0.5 * length) % length - 0.5 * length
                dist2 = dist2 + delta ** 2
            values[i] += np.exp(-dist2 / (2.0 * width ** 2))
    return FieldSet(grid, levels + amplitude * values)


GENERATORS: Dict[str, Callable[..., FieldSet]] = {
    "constant": lambda grid, n, cfg: constant_state(grid, n, cfg.level),
    "mode": lambda grid, n, cfg: mode_state(grid, n, cfg.level, cfg.amplitude, cfg.wave),
    "random": lambda grid, n, cfg: random_state(grid, n, cfg.level, cfg.amplitude, cfg.seed),
    "bumps": lambda grid, n, cfg: bumps_state(grid, n, cfg.level, cfg.amplitude, cfg.count, cfg.width, cfg.seed),
}


def generate_initial(config: InitialConfig, grid: TorusGrid, species: int, seed: Optional[int] = None) -> FieldSet:
    """Build initial data from a generator section; ``seed`` overrides the configured one."""
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    logger.info(f"Generating '{config.generator}' initial data for {species} species")
    return GENERATORS[config.generator](grid, species, config)


def generate_perturbation(config: PerturbationConfig, grid: TorusGrid, species: int) -> FieldSet:
    """
    Perturbation field for the uniqueness probe.

    ``mode`` and ``random`` are mass neutral per species; ``constant`` is not.
    """
    if config.generator == "mode":
        wave = _wave(grid, config.wave)
        wave -= wave.mean()
        values = config.amplitude * np.repeat(wave[None], species, axis=0)
    elif config.generator == "random":
        rng = np.random.default_rng(config.seed)
        values = config.amplitude * _smooth_noise(grid, species, rng)
    else:
        values = np.full((species,) + grid.shape, config.amplitude)
    return FieldSet(grid, values)
