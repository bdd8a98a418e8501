"""Tests for the localization sweep, uniqueness probe, bounds check and convergence study."""

import numpy as np
import pytest

from models import ModelMode, RunConfig
from services.errors import (
    InsufficientResolutionsError,
    MassMismatchError,
    NonpositiveReferenceError,
    ResolutionGuardError,
)
from services.experiments import (
    bounds_check,
    build_model,
    convergence_study,
    localization_sweep,
    weak_strong_probe,
)
from services.initial_data import mode_state, random_state
from services.kernels import InteractionMatrix, ReversibleMeasure
from services.scheme import SchemeConfig, estimate_lambda, simulate
from services.torus_grid import FieldSet, make_grid


def run_config(**sections):
    data = {
        "grid": {"dim": 1, "cells": 32},
        "model": {"sigma": 1.0, "interaction": [[1.0]], "kernel": {"family": "gaussian", "epsilon": 0.1}},
        "scheme": {"tau": 0.01, "t_end": 0.05},
        "initial": {"generator": "mode", "amplitude": 0.5},
    }
    data.update(sections)
    return RunConfig.model_validate(data)


def test_build_model_solves_reversible_measure():
    grid = make_grid(1, 32)
    config = run_config(model={"interaction": [[1.0, 2.0], [1.0, 1.0]], "kernel": {"family": "gaussian", "epsilon": 0.1}})

    params = build_model(config.model, grid)

    np.testing.assert_allclose(params.pi.pi, [1.0 / 3.0, 2.0 / 3.0])
    assert params.kernel.grid == grid


def test_build_model_local_mode_has_no_kernel():
    config = run_config(model={"mode": "local", "interaction": [[2.0, 1.0], [1.0, 2.0]]})
    params = build_model(config.model, make_grid(1, 32))

    assert params.mode == ModelMode.LOCAL
    assert params.kernel is None


def test_localization_sweep_distances_shrink():
    grid = make_grid(1, 64)
    u0 = mode_state(grid, 1, amplitude=0.3)
    a = InteractionMatrix(np.array([[1.0]]))
    config = SchemeConfig(tau=0.01, t_end=0.05)

    report = localization_sweep([0.4, 0.2, 0.1], a, ReversibleMeasure.uniform(1), u0, 1.0, config, threads=2)

    assert report.epsilons == [0.4, 0.2, 0.1]
    assert report.monotone_flag
    assert report.distances_l1[0] > report.distances_l1[-1] > 0
    assert all(d > 0 for d in report.distances_l2)
    assert report.empirical_rate > 0.5


def test_localization_sweep_guards():
    grid = make_grid(1, 32)
    u0 = mode_state(grid, 1)
    a = InteractionMatrix(np.array([[1.0]]))
    pi = ReversibleMeasure.uniform(1)
    config = SchemeConfig(tau=0.01, t_end=0.02)

    with pytest.raises(ValueError):
        localization_sweep([0.1, 0.2], a, pi, u0, 1.0, config)
    with pytest.raises(ResolutionGuardError):
        localization_sweep([0.2, 0.1], a, pi, u0, 1.0, config)


def test_weak_strong_probe():
    grid = make_grid(1, 32)
    config = run_config()
    params = build_model(config.model, grid)
    u0 = mode_state(grid, 1, amplitude=0.3)
    (x,) = grid.cell_centers()
    perturbation = FieldSet(grid, (1e-3 * np.cos(4 * np.pi * x))[None])

    report = weak_strong_probe(u0, perturbation, params, SchemeConfig(tau=0.01, t_end=0.05), threads=3)

    assert len(report.times) == 6
    assert report.rel_entropy[0] > 0
    assert all(rel >= ckp - 1e-15 for rel, ckp in zip(report.rel_entropy, report.ckp_bound))
    assert report.rel_entropy[-1] < report.rel_entropy[0]
    assert report.same_init_max_distance < 1e-9


def test_weak_strong_probe_input_checks():
    grid = make_grid(1, 32)
    params = build_model(run_config().model, grid)
    config = SchemeConfig(tau=0.01, t_end=0.02)
    u0 = mode_state(grid, 1, amplitude=0.3)

    with pytest.raises(MassMismatchError):
        weak_strong_probe(u0, FieldSet(grid, np.full((1, 32), 1e-3)), params, config)
    vacuum = FieldSet(grid, np.concatenate([[0.0], np.ones(31)])[None])
    with pytest.raises(NonpositiveReferenceError):
        weak_strong_probe(vacuum, FieldSet(grid, np.zeros((1, 32))), params, config)


def test_bounds_check():
    grid = make_grid(1, 32)
    params = build_model(run_config().model, grid)
    u0 = mode_state(grid, 1, amplitude=0.3)
    trajectory = simulate(u0, params, SchemeConfig(tau=0.01, t_end=0.05))
    m0, M0 = float(u0.values.min()), float(u0.values.max())

    report = bounds_check(trajectory, estimate_lambda(params.kernel, u0), m0, M0)
    assert report.passed
    assert report.checked_snapshots == 6
    assert report.first_violation is None

    tight = bounds_check(trajectory, 0.0, m0, 0.5 * M0)
    assert not tight.passed
    assert tight.first_violation.time == 0.0
    assert tight.first_violation.kind == "upper"


def test_convergence_against_exact_solutions():
    config = run_config(model={"sigma": 1.0, "interaction": [[0.0]], "kernel": {"family": "gaussian", "epsilon": 0.1}})

    report = convergence_study([0.01, 0.005, 0.0025], [16, 32, 64], config, threads=2)

    assert report.reference == "exact"
    assert len(report.rows) == 6
    assert 0.8 < report.temporal_order < 1.2
    assert 1.8 < report.spatial_order < 2.2


def test_convergence_richardson_in_time():
    config = run_config(grid={"dim": 1, "cells": 16})

    report = convergence_study([0.01, 0.005, 0.0025], [], config)

    assert report.reference == "richardson"
    assert [row.kind for row in report.rows] == ["temporal", "temporal"]
    assert 0.7 < report.temporal_order < 1.3
    assert report.spatial_order is None


def test_convergence_needs_nested_resolutions():
    config = run_config()
    with pytest.raises(InsufficientResolutionsError):
        convergence_study([0.01, 0.005], [], config)
    with pytest.raises(InsufficientResolutionsError):
        convergence_study([], [16, 32, 48], config)
    with pytest.raises(InsufficientResolutionsError):
        convergence_study([], [], config)


def test_localization_sweep_without_interaction_is_exact():
    """With a = 0 both systems are the heat equation; only solver round-off separates them."""
    grid = make_grid(1, 32)
    u0 = mode_state(grid, 1, amplitude=0.3)
    config = SchemeConfig(tau=0.01, t_end=0.05)

    report = localization_sweep([0.4, 0.2], InteractionMatrix(np.zeros((1, 1))), ReversibleMeasure.uniform(1), u0, 1.0, config)

    assert all(d <= 10 * config.newton_tol * config.t_end * grid.volume for d in report.distances_l1)


def test_relative_entropy_is_quadratic_in_the_perturbation():
    grid = make_grid(1, 32)
    params = build_model(run_config().model, grid)
    u0 = mode_state(grid, 1, amplitude=0.3)
    (x,) = grid.cell_centers()
    config = SchemeConfig(tau=0.01, t_end=0.01)

    def initial_entropy(amplitude):
        perturbation = FieldSet(grid, (amplitude * np.cos(4 * np.pi * x))[None])
        return weak_strong_probe(u0, perturbation, params, config).rel_entropy[0]

    assert initial_entropy(1e-3) / initial_entropy(5e-4) == pytest.approx(4.0, rel=1e-2)


@pytest.mark.slow
def test_localization_trend_at_full_resolution():
    grid = make_grid(1, 512)
    (x,) = grid.cell_centers()
    u0 = FieldSet(grid, np.stack([1.0 + 0.3 * np.cos(2 * np.pi * x), 1.0 + 0.3 * np.sin(4 * np.pi * x)]))
    a = InteractionMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]))
    epsilons = [0.4, 0.2, 0.1, 0.05]

    report = localization_sweep(epsilons, a, ReversibleMeasure.uniform(2), u0, 1.0, SchemeConfig(tau=0.01, t_end=0.05), threads=2)

    assert report.monotone_flag
    assert all(later < earlier for earlier, later in zip(report.distances_l1, report.distances_l1[1:]))
    assert report.distances_l1[-1] > 0


@pytest.mark.slow
def test_bounds_hold_over_half_a_time_unit():
    grid = make_grid(1, 32)
    params = build_model(run_config().model, grid)
    u0 = random_state(grid, 1, amplitude=0.4, seed=2)
    trajectory = simulate(u0, params, SchemeConfig(tau=0.01, t_end=0.5))
    m0, M0 = float(u0.values.min()), float(u0.values.max())

    report = bounds_check(trajectory, estimate_lambda(params.kernel, u0), m0, M0)

    assert report.passed
    assert report.checked_snapshots == 51
