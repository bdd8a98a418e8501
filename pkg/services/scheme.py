"""
Time integrators for the nonlocal and local cross-diffusion systems.

The implicit Euler step is solved in the entropy variables w_i = pi_i log u_i,
so every accepted state u_i = exp(w_i / pi_i) is strictly positive. All drift
and diffusion terms are written as differences of face fluxes; summing any of
them over the torus gives exactly zero, which is what conserves mass.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from models import FluxAverage, LinearSolver, ModelMode, PetrovskiiReport, SchemeSettings, SchemeVariant
from services.entropy import (
    EntropyReport,
    alpha_gradient_dissipation,
    entropy_report,
    rao_entropy,
    rao_entropy_local,
    shannon_entropy,
)
from services.errors import (
    AsymmetricInteractionError,
    CflViolationError,
    EntropyVariableOverflowError,
    GridMismatchError,
    NegativeDensityError,
    NewtonDivergenceError,
    SimulationError,
    SizeGuardError,
)
from services.kernels import InteractionMatrix, KernelRaster, ReversibleMeasure
from services.nonlocal_op import (
    apply_kernel,
    forward,
    inverse,
    kernel_laplacian,
    laplacian_multiplier,
)
from services.torus_grid import (
    FieldSet,
    TorusGrid,
    face_average,
    face_difference,
    flux_divergence,
    integrate_array,
    laplacian_array,
    require_same_grid,
)

logger = logging.getLogger(__name__)

OVERFLOW_LIMIT = 700.0
MIN_DAMPING = 2.0 ** -20
ARMIJO = 1e-4
DENSE_JACOBIAN_LIMIT = 4096
AUTO_DIRECT_LIMIT = 512
GMRES_RTOL = 1e-10
GMRES_RESTART = 60
GMRES_MAXITER = 20


@dataclass
class ModelParams:
    """Coefficients of the system: sigma, the kernel (nonlocal) or a (local), and pi."""

    sigma: float
    pi: ReversibleMeasure
    interaction: InteractionMatrix
    kernel: Optional[KernelRaster] = None
    mode: ModelMode = ModelMode.NONLOCAL

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        self.mode = ModelMode(self.mode)
        if self.mode == ModelMode.NONLOCAL and self.kernel is None:
            raise ValueError("the nonlocal system needs a kernel")
        if self.pi.n != self.interaction.n:
            raise ValueError(f"pi has {self.pi.n} entries for {self.interaction.n} species")
        if self.kernel is not None and self.kernel.n != self.interaction.n:
            raise ValueError(f"kernel has {self.kernel.n} species, interaction has {self.interaction.n}")

    @property
    def n(self) -> int:
        return self.interaction.n

    @property
    def is_local(self) -> bool:
        return self.mode == ModelMode.LOCAL


@dataclass
class SchemeConfig:
    tau: float
    t_end: float
    variant: SchemeVariant = SchemeVariant.IMPLICIT_ENTROPY
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    delta_reg: float = 0.0
    u_floor: float = 1e-12
    flux_average: FluxAverage = FluxAverage.ARITHMETIC
    linear_solver: LinearSolver = LinearSolver.AUTO
    cfl_fatal: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be > 0, got {self.newton_tol}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        self.variant = SchemeVariant(self.variant)
        self.flux_average = FluxAverage(self.flux_average)
        self.linear_solver = LinearSolver(self.linear_solver)

    @classmethod
    def from_settings(cls, settings: SchemeSettings) -> "SchemeConfig":
        return cls(**settings.model_dump())


@dataclass
class StepReport:
    newton_iters: int
    residual_norm: float
    mass_drift: np.ndarray
    h1_change: float
    h2_change: float
    accepted: bool
    retried: bool = False
    clipped_mass: float = 0.0
    alpha_dissipation: Optional[float] = None


@dataclass
class DiagnosticRow:
    time: float
    entropy: EntropyReport
    step: Optional[StepReport] = None


@dataclass
class Trajectory:
    """Snapshots at the output times plus one diagnostic row per computed state."""

    grid: TorusGrid
    times: List[float] = field(default_factory=list)
    states: List[FieldSet] = field(default_factory=list)
    diagnostics: List[DiagnosticRow] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def completed(self) -> bool:
        return self.failure is None

    def final_state(self) -> FieldSet:
        return self.states[-1]


# --- discrete operators -----------------------------------------------------


def _potential(params: ModelParams, values: np.ndarray) -> np.ndarray:
    if params.is_local:
        return np.einsum("ij,j...->i...", params.interaction.a, values)
    return apply_kernel(params.kernel, values)


def _face_density(grid: TorusGrid, u: np.ndarray, slope: np.ndarray, axis: int, flux_average: FluxAverage) -> np.ndarray:
    if flux_average == FluxAverage.UPWIND:
        # velocity is -slope: take the left cell when it points right
        right = np.roll(u, -1, axis=axis - grid.dim)
        return np.where(slope < 0, u, right)
    return face_average(grid, u, axis)


def drift_divergence(u: np.ndarray, p: np.ndarray, grid: TorusGrid, flux_average: FluxAverage) -> np.ndarray:
    """
    Conservative discrete div(u grad p), summed over the axes.

    Args:
        u: Densities, shape (n, *grid.shape)
        p: Potentials, same shape
        grid: Grid both live on
        flux_average: How face densities are formed

    Returns:
        Array of the same shape whose spatial sum is zero
    """
    flux_average = FluxAverage(flux_average)
    result = np.zeros_like(u, dtype=float)
    for axis in range(grid.dim):
        slope = face_difference(grid, p, axis)
        face_u = _face_density(grid, u, slope, axis, flux_average)
        result += flux_divergence(grid, face_u * slope, axis)
    return result


def _shift_matrix(grid: TorusGrid, axis: int, offset: int) -> sp.csr_matrix:
    """(S v)[k] = v[k + offset] along ``axis``, matching np.roll(v, -offset)."""
    index = np.arange(grid.size).reshape(grid.shape)
    source = np.roll(index, -offset, axis=axis).ravel()
    ones = np.ones(grid.size)
    return sp.csr_matrix((ones, (np.arange(grid.size), source)), shape=(grid.size, grid.size))


@dataclass
class _SparseStencils:
    forward_shift: List[sp.csr_matrix]
    difference: List[sp.csr_matrix]
    average: List[sp.csr_matrix]
    divergence: List[sp.csr_matrix]
    laplacian: sp.csr_matrix


def _stencils(grid: TorusGrid) -> _SparseStencils:
    eye = sp.identity(grid.size, format="csr")
    fwd, diff, avg, div = [], [], [], []
    lap = sp.csr_matrix((grid.size, grid.size))
    for axis, h in enumerate(grid.spacing):
        plus = _shift_matrix(grid, axis, 1)
        minus = _shift_matrix(grid, axis, -1)
        fwd.append(plus)
        diff.append((plus - eye) / h)
        avg.append(0.5 * (eye + plus))
        div.append((eye - minus) / h)
        lap = lap + div[-1] @ diff[-1]
    return _SparseStencils(fwd, diff, avg, div, lap.tocsr())


def _circulant(grid: TorusGrid, raster: np.ndarray) -> np.ndarray:
    """Dense matrix of h^d-weighted circular convolution with ``raster``."""
    coords = np.unravel_index(np.arange(grid.size), grid.shape)
    offsets = tuple((c[:, None] - c[None, :]) % grid.cells_per_dim for c in coords)
    return raster[offsets] * grid.cell_volume


def resolve_linear_solver(params: ModelParams, config: SchemeConfig, grid: TorusGrid) -> LinearSolver:
    """Concrete Newton linear solver; ``auto`` picks the exact path for small or local systems."""
    choice = config.linear_solver
    if choice != LinearSolver.AUTO:
        return choice
    if params.is_local or params.n * grid.size <= AUTO_DIRECT_LIMIT:
        return LinearSolver.DIRECT
    return LinearSolver.KRYLOV


def alternate_linear_solver(params: ModelParams, config: SchemeConfig, grid: TorusGrid) -> Optional[LinearSolver]:
    """The other exact-Jacobian path, or None when the dense path would exceed its size guard."""
    if resolve_linear_solver(params, config, grid) == LinearSolver.KRYLOV:
        if params.is_local or params.n * grid.size <= DENSE_JACOBIAN_LIMIT:
            return LinearSolver.DIRECT
        return None
    return LinearSolver.KRYLOV


class _ImplicitSystem:
    """Residual, Jacobian and Newton solve of one implicit Euler step in entropy variables."""

    def __init__(self, u_prev: FieldSet, params: ModelParams, config: SchemeConfig, tau: float):
        if params.kernel is not None and not params.is_local:
            require_same_grid(params.kernel.grid, u_prev.grid)
        if u_prev.species_count != params.n:
            raise GridMismatchError(f"state has {u_prev.species_count} species, model has {params.n}")
        self.grid = u_prev.grid
        self.params = params
        self.config = config
        self.tau = tau
        self.u_prev = u_prev.values
        self.pi = params.pi.pi.reshape((params.n,) + (1,) * self.grid.dim)
        self._stencils = None
        self._dense_coupling = None

    # -- residual ----------------------------------------------------------

    def density(self, w: np.ndarray) -> np.ndarray:
        exponent = w / self.pi
        top = float(np.max(exponent))
        if not top <= OVERFLOW_LIMIT:
            raise EntropyVariableOverflowError(f"w/pi reaches {top:.3e}")
        return np.exp(exponent)

    def residual(self, w: np.ndarray) -> np.ndarray:
        grid, cfg = self.grid, self.config
        u = self.density(w)
        p = _potential(self.params, u)
        result = (u - self.u_prev) / self.tau
        result -= self.params.sigma * laplacian_array(grid, u)
        result -= drift_divergence(u, p, grid, cfg.flux_average)
        if cfg.delta_reg > 0:
            result += cfg.delta_reg * w
        return result

    def norm(self, r: np.ndarray) -> float:
        return self.tau * float(np.max(np.abs(r)))

    # -- linearization -----------------------------------------------------

    def jvp_density(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Derivative of the residual with respect to u, applied to v."""
        grid, fa = self.grid, self.config.flux_average
        p = _potential(self.params, u)
        dp = _potential(self.params, v)
        result = v / self.tau - self.params.sigma * laplacian_array(grid, v)
        for axis in range(grid.dim):
            slope = face_difference(grid, p, axis)
            dslope = face_difference(grid, dp, axis)
            flux = _face_density(grid, v, slope, axis, fa) * slope + _face_density(grid, u, slope, axis, fa) * dslope
            result -= flux_divergence(grid, flux, axis)
        return result

    def jvp(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        u = self.density(w)
        result = self.jvp_density(u, u / self.pi * v)
        if self.config.delta_reg > 0:
            result += self.config.delta_reg * v
        return result

    def _stencil(self) -> _SparseStencils:
        if self._stencils is None:
            self._stencils = _stencils(self.grid)
        return self._stencils

    def sparse_jacobian(self, u: np.ndarray) -> sp.csc_matrix:
        """
        Jacobian in w of every term with a sparse stencil.

        Exact for the local system; for the nonlocal one the linearization of
        p[u] is left out (frozen potential), which makes it a preconditioner.
        """
        grid, n = self.grid, self.params.n
        st = self._stencil()
        fa = self.config.flux_average
        p = _potential(self.params, u)
        eye = sp.identity(grid.size, format="csr")
        base = eye / self.tau - self.params.sigma * st.laplacian
        blocks = [[None] * n for _ in range(n)]
        for i in range(n):
            diag = base
            couple = sp.csr_matrix((grid.size, grid.size))
            for axis in range(grid.dim):
                slope = face_difference(grid, p[i], axis).ravel()
                if fa == FluxAverage.UPWIND:
                    left = (slope < 0).astype(float)
                    select = sp.diags(left) + sp.diags(1.0 - left) @ st.forward_shift[axis]
                else:
                    select = st.average[axis]
                diag = diag - st.divergence[axis] @ sp.diags(slope) @ select
                face_u = _face_density(grid, u[i], face_difference(grid, p[i], axis), axis, fa).ravel()
                couple = couple + st.divergence[axis] @ sp.diags(face_u) @ st.difference[axis]
            for j in range(n):
                block = diag if i == j else None
                if self.params.is_local and self.params.interaction.a[i, j] != 0:
                    term = -self.params.interaction.a[i, j] * couple
                    block = term if block is None else block + term
                blocks[i][j] = block
        jac_u = sp.bmat(blocks, format="csc")
        scale = (u / self.pi).ravel()
        jac_w = jac_u @ sp.diags(scale)
        if self.config.delta_reg > 0:
            jac_w = jac_w + self.config.delta_reg * sp.identity(jac_w.shape[0])
        return sp.csc_matrix(jac_w)

    def dense_jacobian(self, u: np.ndarray) -> np.ndarray:
        """Full Jacobian in w including the circulant nonlocal coupling blocks."""
        grid, n = self.grid, self.params.n
        unknowns = n * grid.size
        if unknowns > DENSE_JACOBIAN_LIMIT:
            raise SizeGuardError(f"dense Jacobian limited to {DENSE_JACOBIAN_LIMIT} unknowns, got {unknowns}")
        jac = self.sparse_jacobian(u).toarray()
        if self.params.is_local:
            return jac
        if self._dense_coupling is None:
            self._dense_coupling = [
                [_circulant(grid, self.params.kernel.rasters[i, j]) for j in range(n)] for i in range(n)
            ]
        st = self._stencil()
        p = _potential(self.params, u)
        scale = (u / self.pi).reshape(n, -1)
        for i in range(n):
            couple = sp.csr_matrix((grid.size, grid.size))
            for axis in range(grid.dim):
                slope = face_difference(grid, p[i], axis)
                face_u = _face_density(grid, u[i], slope, axis, self.config.flux_average).ravel()
                couple = couple + st.divergence[axis] @ sp.diags(face_u) @ st.difference[axis]
            for j in range(n):
                block = -(couple @ self._dense_coupling[i][j])
                jac[i * grid.size:(i + 1) * grid.size, j * grid.size:(j + 1) * grid.size] += block * scale[j][None, :]
        return jac

    def newton_direction(self, w: np.ndarray, r: np.ndarray) -> np.ndarray:
        u = self.density(w)
        rhs = -r.ravel()
        solver = resolve_linear_solver(self.params, self.config, self.grid)
        if solver == LinearSolver.DIRECT:
            if self.params.is_local:
                step = spla.spsolve(self.sparse_jacobian(u), rhs)
            else:
                step = scipy.linalg.solve(self.dense_jacobian(u), rhs)
            return step.reshape(w.shape)

        lu = spla.splu(self.sparse_jacobian(u))
        shape = w.shape
        operator = spla.LinearOperator(
            (rhs.size, rhs.size), matvec=lambda v: self.jvp(w, v.reshape(shape)).ravel(), dtype=float
        )
        precond = spla.LinearOperator((rhs.size, rhs.size), matvec=lu.solve, dtype=float)
        step, info = spla.gmres(
            operator, rhs, x0=lu.solve(rhs), M=precond, rtol=GMRES_RTOL, atol=0.0,
            restart=GMRES_RESTART, maxiter=GMRES_MAXITER,
        )
        if info != 0:
            logger.debug(f"GMRES stopped with info={info}; using the last iterate")
        return step.reshape(shape)

    # -- Newton ------------------------------------------------------------

    def solve(self, w0: np.ndarray) -> Tuple[np.ndarray, int, float]:
        cfg = self.config
        w = w0
        r = self.residual(w)
        norm = self.norm(r)
        iters = 0
        while norm > cfg.newton_tol:
            if iters >= cfg.newton_max_iter:
                raise NewtonDivergenceError(
                    f"no convergence in {cfg.newton_max_iter} iterations (residual {norm:.3e})"
                )
            direction = self.newton_direction(w, r)
            theta = 1.0
            while True:
                trial = w + theta * direction
                try:
                    r_trial = self.residual(trial)
                    trial_norm = self.norm(r_trial)
                except EntropyVariableOverflowError:
                    trial_norm = math.inf
                if math.isfinite(trial_norm) and trial_norm <= (1.0 - ARMIJO * theta) * norm:
                    break
                theta *= 0.5
                if theta < MIN_DAMPING:
                    raise NewtonDivergenceError(
                        f"line search failed at iteration {iters} (residual {norm:.3e})"
                    )
            w, r, norm = trial, r_trial, trial_norm
            iters += 1
            logger.debug(f"Newton iteration {iters}: residual {norm:.3e}, damping {theta:g}")
        return w, iters, norm


# --- public operations ------------------------------------------------------


def _initial_guess(u_prev: np.ndarray, pi: np.ndarray, u_floor: float) -> np.ndarray:
    return pi * np.log(np.maximum(u_prev, u_floor))


def residual(w: FieldSet, u_prev: FieldSet, params: ModelParams, config: SchemeConfig) -> FieldSet:
    """Residual of the implicit step at entropy variables ``w`` (unscaled, per unit time)."""
    require_same_grid(w.grid, u_prev.grid)
    system = _ImplicitSystem(u_prev, params, config, config.tau)
    return FieldSet(w.grid, system.residual(w.values))


def jacobian_vector_product(
    w: FieldSet, u_prev: FieldSet, params: ModelParams, config: SchemeConfig, v: FieldSet
) -> FieldSet:
    system = _ImplicitSystem(u_prev, params, config, config.tau)
    return FieldSet(w.grid, system.jvp(w.values, v.values))


def _entropy_pair(u: FieldSet, params: ModelParams) -> Tuple[float, float]:
    h1 = shannon_entropy(u, params.pi)
    if params.is_local:
        return h1, rao_entropy_local(u, params.interaction, params.pi)
    return h1, rao_entropy(u, params.kernel, params.pi)


def _implicit_substeps(u_prev: FieldSet, params: ModelParams, config: SchemeConfig, count: int):
    tau = config.tau / count
    values = u_prev.values
    total_iters, worst = 0, 0.0
    for _ in range(count):
        system = _ImplicitSystem(FieldSet(u_prev.grid, values), params, config, tau)
        w0 = _initial_guess(values, system.pi, config.u_floor)
        w, iters, norm = system.solve(w0)
        values = system.density(w)
        total_iters += iters
        worst = max(worst, norm)
    return values, total_iters, worst


def _implicit_step(u_prev: FieldSet, params: ModelParams, config: SchemeConfig) -> Tuple[FieldSet, StepReport]:
    if float(np.min(u_prev.values)) < 0:
        raise NegativeDensityError("previous state has negative values")
    retried = False
    try:
        values, iters, norm = _implicit_substeps(u_prev, params, config, 1)
    except (NewtonDivergenceError, EntropyVariableOverflowError) as exc:
        logger.warning(f"Newton failed ({exc}); retrying with two steps of tau/2")
        retried = True
        values, iters, norm = _implicit_substeps(u_prev, params, config, 2)
    u = FieldSet(u_prev.grid, values)
    h1_old, h2_old = _entropy_pair(u_prev, params)
    h1_new, h2_new = _entropy_pair(u, params)
    report = StepReport(
        newton_iters=iters,
        residual_norm=norm,
        mass_drift=u.masses() - u_prev.masses(),
        h1_change=h1_new - h1_old,
        h2_change=h2_new - h2_old,
        accepted=True,
        retried=retried,
    )
    return u, report


def step_implicit_entropy(u_prev: FieldSet, params: ModelParams, config: SchemeConfig) -> Tuple[FieldSet, StepReport]:
    """
    One implicit Euler step, solved by damped Newton in the entropy variables.

    Args:
        u_prev: Nonnegative state at the previous time
        params: Model coefficients
        config: Scheme settings (tau, tolerances, flux average, linear solver)

    Returns:
        The strictly positive new state and its StepReport
    """
    return _implicit_step(u_prev, params, config)


def step_local(u_prev: FieldSet, params: ModelParams, config: SchemeConfig) -> Tuple[FieldSet, StepReport]:
    """Implicit step of the local system p_i = sum_j a_ij u_j, recording the alpha dissipation."""
    if not params.is_local:
        params = ModelParams(sigma=params.sigma, pi=params.pi, interaction=params.interaction, mode=ModelMode.LOCAL)
    weighted = params.pi.pi[:, None] * params.interaction.a
    if np.max(np.abs(weighted - weighted.T)) > 1e-12 * (float(np.max(np.abs(weighted))) or 1.0):
        raise AsymmetricInteractionError("(pi_i a_ij) must be symmetric for the local system")
    flat = u_prev.values.reshape(u_prev.species_count, -1)
    for sample in (flat.min(axis=1), flat.max(axis=1)):
        if np.all(sample > 0):
            check = check_petrovskii(params.interaction, sample)
            if not check.passed:
                logger.warning(f"(u_i a_ij) is not positively stable at u={sample.tolist()}")
    u, report = _implicit_step(u_prev, params, config)
    report.alpha_dissipation = config.tau * alpha_gradient_dissipation(u, params.interaction, params.pi)
    return u, report


def step_semi_implicit(u_prev: FieldSet, params: ModelParams, config: SchemeConfig) -> Tuple[FieldSet, StepReport]:
    """
    Explicit upwind drift followed by a spectral implicit diffusion solve.

    Steps violating tau <= h / (2 max|grad p|) are rejected (state unchanged,
    ``accepted`` False) or raise CflViolationError when ``cfl_fatal`` is set.
    """
    grid = u_prev.grid
    if float(np.min(u_prev.values)) < 0:
        raise NegativeDensityError("previous state has negative values")
    tau, sigma = config.tau, params.sigma
    p = _potential(params, u_prev.values)
    steepest = max(float(np.max(np.abs(face_difference(grid, p, axis)))) for axis in range(grid.dim))
    limit = grid.cell_size / (2.0 * steepest) if steepest > 0 else math.inf
    if tau > limit:
        message = f"tau={tau:g} exceeds the CFL limit {limit:.3e}"
        if config.cfl_fatal:
            raise CflViolationError(message)
        logger.warning(f"{message}; step rejected")
        zero = np.zeros(u_prev.species_count)
        return u_prev.copy(), StepReport(0, 0.0, zero, 0.0, 0.0, accepted=False)

    explicit = u_prev.values + tau * drift_divergence(u_prev.values, p, grid, FluxAverage.UPWIND)
    spectrum = forward(grid, explicit) / (1.0 - sigma * tau * laplacian_multiplier(grid))
    values = inverse(grid, spectrum)
    negative = np.minimum(values, 0.0)
    clipped = -integrate_array(grid, negative)
    if clipped > 0:
        logger.debug(f"clipped mass {clipped:.3e} of negative undershoot")
    values = np.maximum(values, 0.0)

    u = FieldSet(grid, values)
    h1_old, h2_old = _entropy_pair(u_prev, params)
    h1_new, h2_new = _entropy_pair(u, params)
    report = StepReport(
        newton_iters=0,
        residual_norm=0.0,
        mass_drift=u.masses() - u_prev.masses(),
        h1_change=h1_new - h1_old,
        h2_change=h2_new - h2_old,
        accepted=True,
        clipped_mass=clipped,
    )
    return u, report


def _step_function(params: ModelParams, config: SchemeConfig) -> Callable:
    if params.is_local:
        return step_local
    if config.variant == SchemeVariant.SEMI_IMPLICIT:
        return step_semi_implicit
    return step_implicit_entropy


def _output_indices(output_times: Optional[Sequence[float]], tau: float, steps: int) -> set:
    if not output_times:
        return {0, steps}
    return {min(max(int(round(t / tau)), 0), steps) for t in output_times}


def simulate(
    u0: FieldSet,
    params: ModelParams,
    config: SchemeConfig,
    output_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """
    March from ``u0`` to ``t_end`` with the configured integrator.

    Output times snap to the nearest step. A step error stops the run and the
    partial trajectory is returned with ``failure`` set.

    Args:
        u0: Nonnegative initial state
        params: Model coefficients
        config: Scheme settings
        output_times: Times at which to keep snapshots (default: start and end)

    Returns:
        Trajectory with snapshots and per-step diagnostics
    """
    if float(np.min(u0.values)) < 0:
        raise NegativeDensityError("initial state has negative values")
    tau = config.tau
    steps = int(round(config.t_end / tau))
    keep = _output_indices(output_times, tau, steps)
    kernel = None if params.is_local else params.kernel
    step = _step_function(params, config)

    def report_for(state: FieldSet) -> EntropyReport:
        return entropy_report(state, params.pi, params.sigma, kernel=kernel, interaction=params.interaction)

    trajectory = Trajectory(grid=u0.grid)
    state = u0.copy()
    trajectory.diagnostics.append(DiagnosticRow(time=0.0, entropy=report_for(state)))
    if 0 in keep:
        trajectory.times.append(0.0)
        trajectory.states.append(state.copy())

    logger.info(f"Simulating {steps} steps of tau={tau:g} ({step.__name__}, {u0.species_count} species)")
    for k in range(1, steps + 1):
        time = k * tau
        try:
            state, report = step(state, params, config)
        except SimulationError as exc:
            logger.error(f"Simulation stopped at t={time:g}: {exc}")
            trajectory.failure = str(exc)
            return trajectory
        if not report.accepted:
            trajectory.failure = f"{CflViolationError.code}: step at t={time:g} rejected"
            logger.error(f"Simulation stopped at t={time:g}: step rejected")
            return trajectory
        trajectory.diagnostics.append(DiagnosticRow(time=time, entropy=report_for(state), step=report))
        if k in keep:
            trajectory.times.append(time)
            trajectory.states.append(state.copy())
    logger.info(f"Simulation finished at t={steps * tau:g}")
    return trajectory


def estimate_lambda(K: KernelRaster, u0: FieldSet, pi: Optional[ReversibleMeasure] = None) -> float:
    """
    lambda = max_i sum_j ||Laplacian K_ij||_inf * mass(u0_j).

    Raises KernelNotSmoothError for kernels without a bounded Laplacian.
    """
    require_same_grid(K.grid, u0.grid)
    lap = kernel_laplacian(K)
    sup = np.max(np.abs(lap.reshape(K.n, K.n, -1)), axis=2)
    masses = u0.masses()
    return float(np.max(sup @ masses))


def check_petrovskii(a: InteractionMatrix, u_sample: Sequence[float]) -> PetrovskiiReport:
    """Positive stability of (u_i a_ij): every eigenvalue needs a positive real part."""
    sample = np.asarray(u_sample, dtype=float)
    if sample.shape != (a.n,) or np.any(sample <= 0):
        raise ValueError("u_sample must be a positive vector with one entry per species")
    eig = np.linalg.eigvals(sample[:, None] * a.a)
    order = np.argsort(eig.real)
    eig = eig[order]
    return PetrovskiiReport(
        passed=bool(np.all(eig.real > 1e-12)),
        eigenvalues_real=eig.real.tolist(),
        eigenvalues_imag=eig.imag.tolist(),
    )
