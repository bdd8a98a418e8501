"""
Numerical probes: localization sweep, weak-strong uniqueness, L-infinity bounds
and convergence orders.

Sweep members are independent simulations; they run on a thread pool and are
merged back in input order.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from models import (
    BoundsReport,
    BoundViolation,
    ConvergenceReport,
    ConvergenceRow,
    KernelFamily,
    LocalizationReport,
    ModelConfig,
    ModelMode,
    RunConfig,
    SchemeVariant,
    UniquenessReport,
)
from services.entropy import ckp_lower_bound, relative_entropy
from services.errors import (
    InsufficientResolutionsError,
    MassMismatchError,
    NegativeDensityError,
    NonpositiveReferenceError,
    ResolutionGuardError,
    SimulationError,
)
from services.initial_data import generate_initial
from services.kernels import (
    InteractionMatrix,
    KernelSpec,
    ReversibleMeasure,
    build_kernel,
    check_detailed_balance,
    default_tolerance,
    solve_reversible_measure,
)
from services.scheme import ModelParams, SchemeConfig, Trajectory, alternate_linear_solver, simulate
from services.torus_grid import Field, FieldSet, TorusGrid, integrate_array, make_grid, resample

logger = logging.getLogger(__name__)

RESOLUTION_FACTOR = 4.0
PROBE_MASS_TOLERANCE = 1e-8


def build_model(model: ModelConfig, grid: TorusGrid) -> ModelParams:
    """
    Turn a model section into ModelParams on ``grid``.

    pi defaults to the solution of the detailed-balance condition for a.
    """
    interaction = InteractionMatrix(np.array(model.interaction, dtype=float))
    pi = ReversibleMeasure(model.pi) if model.pi is not None else solve_reversible_measure(interaction)
    if model.mode == ModelMode.LOCAL:
        return ModelParams(sigma=model.sigma, pi=pi, interaction=interaction, mode=ModelMode.LOCAL)
    spec = KernelSpec(
        family=model.kernel.family,
        interaction=interaction,
        radius=model.kernel.radius,
        epsilon=model.kernel.epsilon,
        profile=model.kernel.profile,
        scale=model.kernel.scale,
    )
    kernel = build_kernel(spec, grid)
    residual = check_detailed_balance(kernel, pi)
    if residual > default_tolerance(kernel):
        logger.warning(f"kernel violates detailed balance (residual {residual:.3e}); entropies lose their meaning")
    return ModelParams(sigma=model.sigma, pi=pi, interaction=interaction, kernel=kernel)


def _run_all(tasks: Sequence[Callable[[], Trajectory]], threads: int) -> List[Trajectory]:
    if threads <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [future.result() for future in futures]


def _require_complete(trajectory: Trajectory, label: str) -> Trajectory:
    if not trajectory.completed:
        raise SimulationError(f"{label} run failed: {trajectory.failure}")
    return trajectory


def _all_steps(config: SchemeConfig) -> List[float]:
    steps = int(round(config.t_end / config.tau))
    return [k * config.tau for k in range(steps + 1)]


def _species_l1(u: FieldSet, v: FieldSet) -> float:
    return math.fsum(integrate_array(u.grid, np.abs(u.values[i] - v.values[i])) for i in range(u.species_count))


def _slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def localization_sweep(
    epsilons: Sequence[float],
    a: InteractionMatrix,
    pi: ReversibleMeasure,
    u0: FieldSet,
    sigma: float,
    config: SchemeConfig,
    profile: str = "gaussian",
    output_times: Optional[Sequence[float]] = None,
    threads: int = 1,
) -> LocalizationReport:
    """
    Distance between the nonlocal solutions with mollifier width epsilon and
    the local solution, in discrete L1 and L2 over space-time.

    Args:
        epsilons: Strictly decreasing widths; the smallest must be >= 4h
        a: Interaction matrix shared by both systems
        pi: Reversible measure
        u0: Initial state; its grid is used for every member
        sigma: Diffusion coefficient
        config: Scheme settings shared by every run
        profile: Mollifier profile name
        output_times: Times compared (default: every step)
        threads: Worker threads

    Returns:
        LocalizationReport with the fitted empirical rate
    """
    grid = u0.grid
    eps = [float(e) for e in epsilons]
    if not eps or any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ValueError("epsilons must be non-empty and strictly decreasing")
    if eps[-1] < RESOLUTION_FACTOR * grid.cell_size:
        raise ResolutionGuardError(
            f"epsilon {eps[-1]} is below {RESOLUTION_FACTOR:g}h = {RESOLUTION_FACTOR * grid.cell_size:g}"
        )
    times = list(output_times) if output_times else _all_steps(config)

    def nonlocal_task(epsilon):
        def run():
            spec = KernelSpec(family=KernelFamily.MOLLIFIER, interaction=a, epsilon=epsilon, profile=profile)
            params = ModelParams(sigma=sigma, pi=pi, interaction=a, kernel=build_kernel(spec, grid))
            logger.info(f"Localization member epsilon={epsilon:g}")
            return simulate(u0, params, config, times)
        return run

    def local_task():
        params = ModelParams(sigma=sigma, pi=pi, interaction=a, mode=ModelMode.LOCAL)
        return simulate(u0, params, config, times)

    runs = _run_all([nonlocal_task(e) for e in eps] + [local_task], threads)
    local = _require_complete(runs[-1], "local")

    distances_l1, distances_l2 = [], []
    for epsilon, run in zip(eps, runs[:-1]):
        _require_complete(run, f"epsilon={epsilon:g}")
        l1, l2 = [], []
        previous = 0.0
        for t, u, v in zip(run.times, run.states, local.states):
            weight = t - previous
            previous = t
            if weight <= 0:
                continue
            diff = u.values - v.values
            l1.append(weight * integrate_array(grid, np.abs(diff)))
            l2.append(weight * integrate_array(grid, diff ** 2))
        distances_l1.append(math.fsum(l1))
        distances_l2.append(math.sqrt(math.fsum(l2)))

    monotone = all(d2 < d1 for d1, d2 in zip(distances_l1, distances_l1[1:]))
    rate = _slope(eps, distances_l1)
    logger.info(f"Localization distances {distances_l1}, monotone={monotone}, rate={rate}")
    return LocalizationReport(
        epsilons=eps,
        distances_l1=distances_l1,
        distances_l2=distances_l2,
        monotone_flag=monotone,
        empirical_rate=rate,
    )


def weak_strong_probe(
    u0: FieldSet,
    perturbation: FieldSet,
    params: ModelParams,
    config: SchemeConfig,
    output_times: Optional[Sequence[float]] = None,
    threads: int = 1,
) -> UniquenessReport:
    """
    Relative-entropy comparison of the runs from u0 + perturbation and from u0.

    The unperturbed problem is also solved through the alternate Newton linear
    solver; ``same_init_max_distance`` is the largest L1 gap between the two.
    """
    grid = u0.grid
    if float(np.min(u0.values)) <= 0:
        raise NonpositiveReferenceError("the reference initial state must be strictly positive")
    scale = max(float(np.max(np.abs(u0.masses()))), 1.0)
    drift = perturbation.masses()
    if np.max(np.abs(drift)) > 1e-10 * scale:
        raise MassMismatchError(f"perturbation changes the species masses by {drift.tolist()}")
    perturbed = FieldSet(grid, u0.values + perturbation.values)
    if float(np.min(perturbed.values)) < 0:
        raise NegativeDensityError("perturbed initial state has negative values")
    times = list(output_times) if output_times else _all_steps(config)

    alternate = alternate_linear_solver(params, config, grid)
    if config.variant == SchemeVariant.SEMI_IMPLICIT or alternate is None:
        logger.warning("no alternate linear solver applies; the same-data check repeats the primary run")
        alt_config = config
    else:
        alt_config = replace(config, linear_solver=alternate)

    tasks = [
        lambda: simulate(perturbed, params, config, times),
        lambda: simulate(u0, params, config, times),
        lambda: simulate(u0, params, alt_config, times),
    ]
    u_run, v_run, v_alt = (_require_complete(run, label) for run, label in zip(_run_all(tasks, threads), ("perturbed", "reference", "alternate")))

    rel, ckp, l1 = [], [], []
    for u, v in zip(u_run.states, v_run.states):
        rel.append(relative_entropy(u, v, params.pi))
        ckp.append(ckp_lower_bound(u, v, params.pi, mass_tolerance=PROBE_MASS_TOLERANCE))
        l1.append(_species_l1(u, v))

    squared = [
        math.fsum(integrate_array(grid, np.abs(u.values[i] - v.values[i])) ** 2 for i in range(u.species_count))
        for u, v in zip(u_run.states, v_run.states)
    ]
    gronwall = 0.0
    if squared and squared[0] > 0:
        rates = [math.log(g / squared[0]) / t for t, g in zip(u_run.times, squared) if t > 0 and g > 0]
        gronwall = max(rates) if rates else 0.0

    same = max((_species_l1(v, w) for v, w in zip(v_run.states, v_alt.states)), default=0.0)
    logger.info(f"Weak-strong probe: Gronwall C={gronwall:.4g}, same-data distance {same:.3e}")
    return UniquenessReport(
        times=list(u_run.times),
        rel_entropy=rel,
        ckp_bound=ckp,
        l1_distances=l1,
        gronwall_fit_C=gronwall,
        same_init_max_distance=same,
    )


def bounds_check(trajectory: Trajectory, lam: float, m0: float, M0: float) -> BoundsReport:
    """
    Verify m0 exp(-lam t) <= u_i(t) <= M0 exp(lam t) at every recorded state.

    Extrema come from the per-step diagnostics, so every computed state is
    checked, not only the kept snapshots. Slack is 1e-9 * M0.
    """
    slack = 1e-9 * M0
    first = None
    for row in trajectory.diagnostics:
        lower = m0 * math.exp(-lam * row.time)
        upper = M0 * math.exp(lam * row.time)
        for i, (low, high) in enumerate(zip(row.entropy.mins, row.entropy.maxs)):
            if low < lower - slack:
                first = BoundViolation(time=row.time, species=i, kind="lower", value=float(low), bound=lower)
            elif high > upper + slack:
                first = BoundViolation(time=row.time, species=i, kind="upper", value=float(high), bound=upper)
            if first is not None:
                break
        if first is not None:
            logger.warning(f"Bound violated at t={first.time:g}: {first.kind} {first.value:.6g} vs {first.bound:.6g}")
            break
    return BoundsReport(
        passed=first is None,
        lam=lam,
        m0=m0,
        M0=M0,
        checked_snapshots=len(trajectory.diagnostics),
        first_violation=first,
    )


# --- convergence ------------------------------------------------------------


def _require_nested(values: Sequence[float], label: str) -> List[float]:
    ordered = sorted(float(v) for v in values)
    if len(ordered) < 3:
        raise InsufficientResolutionsError(f"{label} needs at least 3 resolutions, got {len(ordered)}")
    for small, big in zip(ordered, ordered[1:]):
        if not math.isclose(big, 2.0 * small, rel_tol=1e-9):
            raise InsufficientResolutionsError(f"{label} must be nested by a factor 2, got {ordered}")
    return ordered


def _has_exact_reference(config: RunConfig) -> bool:
    interaction = np.array(config.model.interaction, dtype=float)
    return (
        not np.any(interaction)
        and config.initial.generator in ("mode", "constant")
        and config.initial.snapshot is None
        and config.scheme.variant == SchemeVariant.IMPLICIT_ENTROPY
    )


def _mode_profile(config: RunConfig, grid: TorusGrid):
    """Mean level per species, perturbation amplitude and the cosine raster."""
    species = config.model.species
    init = config.initial
    levels = np.atleast_1d(np.asarray(init.level, dtype=float))
    levels = np.repeat(levels, species) if levels.size == 1 else levels
    if init.generator == "constant":
        return levels, 0.0, np.zeros(grid.shape), [0] * grid.dim
    wave = list(init.wave) + [0] * (grid.dim - len(init.wave))
    phase = sum(2.0 * math.pi * k * x / length for k, x, length in zip(wave, grid.cell_centers(), grid.periods))
    return levels, init.amplitude, np.cos(phase), wave


def _exact_state(config: RunConfig, grid: TorusGrid, factor: float) -> FieldSet:
    levels, amplitude, wave, _ = _mode_profile(config, grid)
    values = levels.reshape((-1,) + (1,) * grid.dim) + amplitude * factor * wave[None]
    return FieldSet(grid, values)


def _discrete_eigenvalue(grid: TorusGrid, wave: Sequence[int]) -> float:
    return sum(
        4.0 / h ** 2 * math.sin(math.pi * k * h / length) ** 2
        for k, h, length in zip(wave, grid.spacing, grid.periods)
    )


def _continuous_eigenvalue(grid: TorusGrid, wave: Sequence[int]) -> float:
    return sum((2.0 * math.pi * k / length) ** 2 for k, length in zip(wave, grid.periods))


def _max_error(u: FieldSet, v: FieldSet) -> float:
    return float(np.max(np.abs(u.values - v.values)))


def convergence_study(
    tau_list: Sequence[float],
    n_list: Sequence[int],
    reference_config: RunConfig,
    threads: int = 1,
) -> ConvergenceReport:
    """
    Observed temporal and spatial orders of the configured problem.

    With a = 0 and single-mode (or constant) data the errors are measured
    against exact Fourier solutions: the spatial study against the exact
    time-discrete amplitude (1 + tau sigma k^2)^-n, the temporal study against
    the exact space-discrete decay exp(-sigma lambda_h t). Otherwise successive
    refinements are compared (Richardson).

    Args:
        tau_list: Time steps, at least 3, nested by factor 2 (may be empty)
        n_list: Cell counts, at least 3, nested by factor 2 (may be empty)
        reference_config: Problem definition; its tau and cells are the fixed
            values of the other study
        threads: Worker threads

    Returns:
        ConvergenceReport with error rows and fitted orders
    """
    if not tau_list and not n_list:
        raise InsufficientResolutionsError("no resolutions given")
    taus = _require_nested(tau_list, "tau_list") if tau_list else []
    cells = [int(n) for n in _require_nested(n_list, "n_list")] if n_list else []
    exact = _has_exact_reference(reference_config)
    base = SchemeConfig.from_settings(reference_config.scheme)
    grid_cfg = reference_config.grid
    sigma = reference_config.model.sigma

    def make(n: int) -> TorusGrid:
        return make_grid(grid_cfg.dim, n, grid_cfg.period)

    def task(n: int, tau: float):
        def run():
            grid = make(n)
            params = build_model(reference_config.model, grid)
            u0 = generate_initial(reference_config.initial, grid, reference_config.model.species)
            config = replace(base, tau=tau)
            return _require_complete(simulate(u0, params, config), f"N={n}, tau={tau:g}")
        return run

    rows: List[ConvergenceRow] = []
    temporal_order = spatial_order = None

    if taus:
        n_fixed = max(cells) if cells else grid_cfg.cells
        runs = _run_all([task(n_fixed, tau) for tau in taus], threads)
        finals = [run.final_state() for run in runs]
        if exact:
            grid = make(n_fixed)
            _, _, _, wave = _mode_profile(reference_config, grid)
            lam_h = _discrete_eigenvalue(grid, wave)
            errors = [
                _max_error(u, _exact_state(reference_config, grid, math.exp(-sigma * lam_h * run.times[-1])))
                for u, run in zip(finals, runs)
            ]
            resolutions = taus
        else:
            # finals are ordered by increasing tau; compare each tau with its half
            errors = [_max_error(finals[k + 1], finals[k]) for k in range(len(taus) - 1)]
            resolutions = taus[1:]
        rows += [ConvergenceRow(kind="temporal", resolution=r, error=e) for r, e in zip(resolutions, errors)]
        temporal_order = _fitted_order(resolutions, errors, "temporal")

    if cells:
        runs = _run_all([task(n, base.tau) for n in cells], threads)
        finals = [run.final_state() for run in runs]
        if exact:
            errors = []
            for n, u, run in zip(cells, finals, runs):
                grid = make(n)
                _, _, _, wave = _mode_profile(reference_config, grid)
                steps = len(run.diagnostics) - 1
                factor = (1.0 + base.tau * sigma * _continuous_eigenvalue(grid, wave)) ** (-steps)
                errors.append(_max_error(u, _exact_state(reference_config, grid, factor)))
            resolutions = [make(n).cell_size for n in cells]
        else:
            errors = []
            for coarse, fine in zip(finals, finals[1:]):
                restricted = [resample(Field(fine.grid, fine.values[i]), coarse.grid).values for i in range(fine.species_count)]
                errors.append(float(np.max(np.abs(np.stack(restricted) - coarse.values))))
            resolutions = [make(n).cell_size for n in cells[:-1]]
        rows += [ConvergenceRow(kind="spatial", resolution=r, error=e) for r, e in zip(resolutions, errors)]
        spatial_order = _fitted_order(resolutions, errors, "spatial")

    report = ConvergenceReport(
        reference="exact" if exact else "richardson",
        rows=rows,
        temporal_order=temporal_order,
        spatial_order=spatial_order,
    )
    logger.info(f"Convergence orders: temporal={temporal_order}, spatial={spatial_order} ({report.reference})")
    return report


def _fitted_order(resolutions: Sequence[float], errors: Sequence[float], label: str) -> float:
    if any(not (e > 0 and math.isfinite(e)) for e in errors):
        raise InsufficientResolutionsError(f"{label} errors are degenerate: {list(errors)}")
    return _slope(resolutions, errors)
