"""Subcommands of the simulator command line and their dispatch."""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from models import ModelMode, RunConfig
from services.config_loader import resolve_path
from services.errors import ConfigError, SimulationError
from services.experiments import (
    bounds_check,
    build_model,
    convergence_study,
    localization_sweep,
    weak_strong_probe,
)
from services.initial_data import generate_initial, generate_perturbation
from services.kernels import certify_positive_definite
from services.scheme import ModelParams, SchemeConfig, Trajectory, estimate_lambda, simulate
from services.storage import (
    read_snapshot,
    write_diagnostics_csv,
    write_json,
    write_report_csv,
    write_snapshot,
)
from services.torus_grid import FieldSet, TorusGrid, make_grid

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2

DEFAULT_OUTPUT_DIR = "output"


@dataclass
class CommandContext:
    config: RunConfig
    output_dir: Path
    seed: Optional[int] = None
    threads: int = 1


COMMANDS: Dict[str, Callable[[CommandContext], None]] = {}


def command(name: str):
    """Register a subcommand handler under ``name``."""
    def register(handler: Callable[[CommandContext], None]):
        COMMANDS[name] = handler
        return handler
    return register


# --- shared setup -----------------------------------------------------------


def _grid(config: RunConfig) -> TorusGrid:
    return make_grid(config.grid.dim, config.grid.cells, config.grid.period)


def _scheme(config: RunConfig) -> SchemeConfig:
    return SchemeConfig.from_settings(config.scheme)


def _initial_state(ctx: CommandContext, grid: TorusGrid) -> FieldSet:
    config = ctx.config
    if config.initial.snapshot is not None:
        state, time = read_snapshot(resolve_path(config, config.initial.snapshot))
        if state.grid != grid:
            raise ConfigError([f"initial.snapshot grid {state.grid} does not match the configured grid"])
        if state.species_count != config.model.species:
            raise ConfigError([f"initial.snapshot has {state.species_count} species, model has {config.model.species}"])
        logger.info(f"Loaded initial state from snapshot at t={time:g}")
        return state
    return generate_initial(config.initial, grid, config.model.species, seed=ctx.seed)


def _output_times(config: RunConfig) -> Optional[List[float]]:
    out = config.output
    if out.times is not None:
        return list(out.times)
    if out.stride is not None:
        steps = int(round(config.scheme.t_end / config.scheme.tau))
        indices = list(range(0, steps + 1, out.stride))
        if indices[-1] != steps:
            indices.append(steps)
        return [k * config.scheme.tau for k in indices]
    return None


def _write_trajectory(ctx: CommandContext, trajectory: Trajectory, species: int) -> None:
    write_diagnostics_csv(trajectory, ctx.output_dir / "diagnostics.csv", species)
    if ctx.config.output.emit_snapshots:
        for index, (time, state) in enumerate(zip(trajectory.times, trajectory.states)):
            write_snapshot(state, time, ctx.output_dir / f"snapshot_{index:05d}.nlxd")
        logger.info(f"Wrote {len(trajectory.states)} snapshots to {ctx.output_dir}")
    if trajectory.failure is not None:
        raise SimulationError(f"run stopped early: {trajectory.failure}")


def _nonlocal_params(config: RunConfig, grid: TorusGrid, name: str) -> ModelParams:
    if config.model.mode != ModelMode.NONLOCAL:
        raise ConfigError([f"{name} needs model.mode = nonlocal"])
    return build_model(config.model, grid)


# --- subcommands ------------------------------------------------------------


@command("simulate")
def simulate_command(ctx: CommandContext) -> None:
    config = ctx.config
    grid = _grid(config)
    params = build_model(config.model, grid)
    u0 = _initial_state(ctx, grid)
    trajectory = simulate(u0, params, _scheme(config), _output_times(config))
    _write_trajectory(ctx, trajectory, params.n)


@command("local-simulate")
def local_simulate_command(ctx: CommandContext) -> None:
    config = ctx.config
    grid = _grid(config)
    model = config.model.model_copy(update={"mode": ModelMode.LOCAL})
    params = build_model(model, grid)
    u0 = _initial_state(ctx, grid)
    trajectory = simulate(u0, params, _scheme(config), _output_times(config))
    _write_trajectory(ctx, trajectory, params.n)


@command("check-kernel")
def check_kernel_command(ctx: CommandContext) -> None:
    grid = _grid(ctx.config)
    params = _nonlocal_params(ctx.config, grid, "check-kernel")
    certificate = certify_positive_definite(params.kernel, params.pi)
    write_json(certificate, ctx.output_dir / "certificate.json")
    print(certificate.model_dump_json(indent=2))


@command("localization-sweep")
def localization_command(ctx: CommandContext) -> None:
    config = ctx.config
    grid = _grid(config)
    model = config.model.model_copy(update={"mode": ModelMode.LOCAL})
    params = build_model(model, grid)
    u0 = _initial_state(ctx, grid)
    report = localization_sweep(
        config.experiment.epsilons,
        params.interaction,
        params.pi,
        u0,
        params.sigma,
        _scheme(config),
        profile=config.model.kernel.profile,
        output_times=_output_times(config),
        threads=ctx.threads,
    )
    rows = [
        {"epsilon": e, "distance_l1": d1, "distance_l2": d2}
        for e, d1, d2 in zip(report.epsilons, report.distances_l1, report.distances_l2)
    ]
    write_report_csv(rows, ctx.output_dir / "localization.csv", ["epsilon", "distance_l1", "distance_l2"])
    write_json(report, ctx.output_dir / "localization.json")


@command("uniqueness-probe")
def uniqueness_command(ctx: CommandContext) -> None:
    config = ctx.config
    grid = _grid(config)
    params = build_model(config.model, grid)
    u0 = _initial_state(ctx, grid)
    perturbation_cfg = config.experiment.perturbation
    if ctx.seed is not None:
        perturbation_cfg = perturbation_cfg.model_copy(update={"seed": ctx.seed})
    perturbation = generate_perturbation(perturbation_cfg, grid, params.n)
    report = weak_strong_probe(u0, perturbation, params, _scheme(config), _output_times(config), threads=ctx.threads)
    rows = [
        {"time": t, "rel_entropy": h, "ckp_bound": c, "l1_distance": d}
        for t, h, c, d in zip(report.times, report.rel_entropy, report.ckp_bound, report.l1_distances)
    ]
    write_report_csv(rows, ctx.output_dir / "uniqueness.csv", ["time", "rel_entropy", "ckp_bound", "l1_distance"])
    write_json(report, ctx.output_dir / "uniqueness.json")


@command("bounds-check")
def bounds_command(ctx: CommandContext) -> None:
    config = ctx.config
    grid = _grid(config)
    params = _nonlocal_params(config, grid, "bounds-check")
    u0 = _initial_state(ctx, grid)
    lam = estimate_lambda(params.kernel, u0, params.pi) * config.experiment.lambda_scale
    trajectory = simulate(u0, params, _scheme(config), _output_times(config))
    if trajectory.failure is not None:
        raise SimulationError(f"run stopped early: {trajectory.failure}")
    m0, M0 = float(np.min(u0.values)), float(np.max(u0.values))
    report = bounds_check(trajectory, lam, m0, M0)
    rows = [
        {
            "time": row.time,
            "lower_bound": m0 * np.exp(-lam * row.time),
            "upper_bound": M0 * np.exp(lam * row.time),
            "min_density": row.entropy.min_density,
            "max_density": row.entropy.max_density,
        }
        for row in trajectory.diagnostics
    ]
    columns = ["time", "lower_bound", "upper_bound", "min_density", "max_density"]
    write_report_csv(rows, ctx.output_dir / "bounds.csv", columns)
    write_json(report, ctx.output_dir / "bounds.json")
    if not report.passed:
        logger.warning(f"L-infinity bounds violated: {report.first_violation}")


@command("convergence")
def convergence_command(ctx: CommandContext) -> None:
    config = ctx.config
    if ctx.seed is not None:
        config = config.model_copy(update={"initial": config.initial.model_copy(update={"seed": ctx.seed})})
    report = convergence_study(config.experiment.tau_list, config.experiment.n_list, config, threads=ctx.threads)
    rows = [row.model_dump() for row in report.rows]
    write_report_csv(rows, ctx.output_dir / "convergence.csv", ["kind", "resolution", "error"])
    write_json(report, ctx.output_dir / "convergence.json")


# --- dispatch ---------------------------------------------------------------


def output_directory(config: RunConfig, override: Optional[str] = None) -> Path:
    """--output flag, then output.directory, then NLXD_OUTPUT_DIR, then ./output."""
    if override:
        return Path(override)
    if config.output.directory:
        return resolve_path(config, config.output.directory)
    return Path(os.getenv("NLXD_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def run(
    name: str,
    config: RunConfig,
    output_dir: Optional[str] = None,
    seed: Optional[int] = None,
    threads: int = 1,
) -> int:
    """
    Execute subcommand ``name``.

    Returns:
        0 on success, 1 on a domain error, 2 on a usage or configuration error
    """
    handler = COMMANDS.get(name)
    if handler is None:
        logger.error(f"unknown command '{name}'; expected one of {sorted(COMMANDS)}")
        return EXIT_USAGE
    ctx = CommandContext(config=config, output_dir=output_directory(config, output_dir), seed=seed, threads=max(1, threads))
    ctx.output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{name}' into {ctx.output_dir}")
    try:
        handler(ctx)
    except ConfigError as exc:
        for message in exc.errors:
            logger.error(f"config: {message}")
        return EXIT_USAGE
    except SimulationError as exc:
        logger.error(str(exc))
        return EXIT_DOMAIN_ERROR
    except ValueError as exc:
        logger.error(f"invalid input: {exc}")
        return EXIT_USAGE
    return EXIT_OK
