"""Tests for torus grids and the discrete calculus on them."""

import math

import numpy as np
import pytest

from services.errors import (
    GridMismatchError,
    InvalidDimensionError,
    InvalidNormError,
    NonFiniteValueError,
    NonpositivePeriodError,
    OddCellCountError,
)
from services.torus_grid import (
    Field,
    FieldSet,
    divergence,
    face_difference,
    flux_divergence,
    gradient,
    integrate,
    laplacian,
    lp_norm,
    make_grid,
    resample,
)


@pytest.mark.parametrize(
    "dim, cells, period, error",
    [
        (3, 16, 1.0, InvalidDimensionError),
        (1, 7, 1.0, OddCellCountError),
        (1, 6, 1.0, OddCellCountError),
        (2, 16, 0.0, NonpositivePeriodError),
        (1, 16, -1.0, NonpositivePeriodError),
    ],
)
def test_make_grid_rejects_invalid_input(dim, cells, period, error):
    with pytest.raises(error):
        make_grid(dim, cells, period)


def test_grid_geometry():
    grid = make_grid(2, 16, (2.0, 1.0))

    assert grid.shape == (16, 16)
    assert grid.spacing == (0.125, 0.0625)
    assert grid.cell_volume == pytest.approx(0.125 * 0.0625)
    assert grid.volume == pytest.approx(2.0)
    x, y = grid.cell_centers()
    assert x[0, 0] == pytest.approx(0.0625)
    assert y[0, -1] == pytest.approx(1.0 - 0.03125)


def test_displacements_are_wrapped():
    grid = make_grid(1, 8, 1.0)
    (z,) = grid.displacements()
    np.testing.assert_allclose(z, [0, 0.125, 0.25, 0.375, -0.5, -0.375, -0.25, -0.125])


def test_field_shape_and_finiteness_checks():
    grid = make_grid(1, 8)
    with pytest.raises(GridMismatchError):
        Field(grid, np.ones(16))
    with pytest.raises(NonFiniteValueError):
        Field(grid, np.full(8, np.nan))
    with pytest.raises(GridMismatchError):
        FieldSet(grid, np.ones((2, 16)))


def test_integrate_constants():
    assert integrate(Field(make_grid(1, 32), np.full(32, 2.0))) == pytest.approx(2.0, rel=1e-15)
    grid = make_grid(2, 16, 2.0)
    assert integrate(Field(grid, np.ones(grid.shape))) == pytest.approx(4.0, rel=1e-15)


def test_integrate_mean_free_mode_is_zero():
    grid = make_grid(1, 64)
    (x,) = grid.cell_centers()
    assert abs(integrate(Field(grid, np.cos(2 * np.pi * 3 * x)))) < 1e-15


def test_lp_norms():
    grid = make_grid(1, 64)
    (x,) = grid.cell_centers()
    f = Field(grid, np.cos(2 * np.pi * x))

    assert lp_norm(f, 2) == pytest.approx(math.sqrt(0.5), rel=1e-12)
    assert lp_norm(f, math.inf) == pytest.approx(np.max(np.abs(f.values)))
    assert lp_norm(Field(grid, np.ones(64)), 1) == pytest.approx(1.0)
    with pytest.raises(InvalidNormError):
        lp_norm(f, 0.5)


@pytest.mark.parametrize("p", [1, 2, 3.5, math.inf])
def test_lp_norm_triangle_inequality(p):
    rng = np.random.default_rng(31)
    for trial in range(20):
        grid = make_grid(1 + trial % 2, 16, 1.5)
        f, g, h = (rng.standard_normal(grid.shape) * rng.uniform(0.1, 10.0) for _ in range(3))

        direct = lp_norm(Field(grid, f - h), p)
        detour = lp_norm(Field(grid, f - g), p) + lp_norm(Field(grid, g - h), p)

        assert direct <= detour * (1.0 + 1e-12)


def test_laplacian_eigenvalue_of_cosine():
    n = 32
    grid = make_grid(1, n)
    (x,) = grid.cell_centers()
    f = Field(grid, np.cos(2 * np.pi * x))
    h = grid.cell_size
    expected = -(4.0 / h ** 2) * math.sin(math.pi * h) ** 2

    np.testing.assert_allclose(laplacian(f).values, expected * f.values, atol=1e-10)


def test_centered_gradient_and_divergence():
    grid = make_grid(1, 64)
    (x,) = grid.cell_centers()
    h = grid.cell_size
    f = Field(grid, np.sin(2 * np.pi * x))

    (g,) = gradient(f)
    np.testing.assert_allclose(g.values, math.sin(2 * np.pi * h) / h * np.cos(2 * np.pi * x), atol=1e-10)
    np.testing.assert_allclose(divergence([f]).values, g.values)


def test_flux_divergence_telescopes():
    rng = np.random.default_rng(3)
    grid = make_grid(2, 16)
    flux = rng.standard_normal(grid.shape)
    for axis in range(2):
        assert abs(math.fsum(flux_divergence(grid, flux, axis).ravel())) < 1e-10


def test_operators_commute_with_translation():
    rng = np.random.default_rng(4)
    grid = make_grid(2, 16)
    values = rng.random(grid.shape)
    shifted = np.roll(values, (3, 5), axis=(0, 1))

    lap = laplacian(Field(grid, values)).values
    np.testing.assert_allclose(laplacian(Field(grid, shifted)).values, np.roll(lap, (3, 5), axis=(0, 1)), atol=1e-12)
    diff = face_difference(grid, values, 1)
    np.testing.assert_allclose(face_difference(grid, shifted, 1), np.roll(diff, (3, 5), axis=(0, 1)), atol=1e-12)


def test_resample_reproduces_trigonometric_polynomials():
    coarse = make_grid(1, 16)
    fine = make_grid(1, 32)

    def sample(grid):
        (x,) = grid.cell_centers()
        return np.cos(2 * np.pi * x) + 0.3 * np.sin(4 * np.pi * x)

    up = resample(Field(coarse, sample(coarse)), fine)
    down = resample(Field(fine, sample(fine)), coarse)

    np.testing.assert_allclose(up.values, sample(fine), atol=1e-12)
    np.testing.assert_allclose(down.values, sample(coarse), atol=1e-12)


def test_resample_requires_same_torus():
    with pytest.raises(GridMismatchError):
        resample(Field(make_grid(1, 16, 1.0), np.ones(16)), make_grid(1, 32, 2.0))


def test_field_set_masses():
    grid = make_grid(1, 16)
    fields = FieldSet(grid, np.stack([np.ones(16), np.full(16, 3.0)]))

    np.testing.assert_allclose(fields.masses(), [1.0, 3.0])
    assert fields.species_count == 2
    assert FieldSet.from_fields([fields.field(0), fields.field(1)]).species_count == 2
