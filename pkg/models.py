"""Data models for the nonlocal cross-diffusion simulator."""

from enum import Enum
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationInfo, field_validator, model_validator

from data.profiles import MOLLIFIER_PROFILES


class KernelFamily(str, Enum):
    INDICATOR_BALL = "indicator_ball"
    GAUSSIAN = "gaussian"
    CAUCHY = "cauchy"
    MOLLIFIER = "mollifier"


class ModelMode(str, Enum):
    NONLOCAL = "nonlocal"
    LOCAL = "local"


class SchemeVariant(str, Enum):
    IMPLICIT_ENTROPY = "implicit_entropy"
    SEMI_IMPLICIT = "semi_implicit"


class FluxAverage(str, Enum):
    ARITHMETIC = "arithmetic"
    UPWIND = "upwind"


class LinearSolver(str, Enum):
    AUTO = "auto"
    DIRECT = "direct"
    KRYLOV = "krylov"


class PDVerdict(str, Enum):
    POSITIVE_DEFINITE = "positive_definite"
    NOT_POSITIVE_DEFINITE = "not_positive_definite"
    INCONCLUSIVE = "inconclusive"


# --- run configuration ---------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Section):
    dim: int = 1
    cells: int = 128
    period: Union[float, List[float]] = 1.0

    @field_validator("dim")
    @classmethod
    def _dim(cls, v):
        if v not in (1, 2):
            raise ValueError("must be 1 or 2")
        return v

    @field_validator("cells")
    @classmethod
    def _cells(cls, v):
        if v < 8 or v % 2 != 0:
            raise ValueError("must be even and >= 8")
        return v

    @field_validator("period")
    @classmethod
    def _period(cls, v):
        values = v if isinstance(v, list) else [v]
        if any(p <= 0 for p in values):
            raise ValueError("must be > 0")
        return v


class KernelConfig(_Section):
    family: KernelFamily = KernelFamily.GAUSSIAN
    epsilon: Optional[float] = Field(default=None, gt=0)
    radius: Optional[float] = Field(default=None, gt=0)
    scale: float = Field(default=1.0, gt=0)
    profile: str = "gaussian"

    @field_validator("profile")
    @classmethod
    def _profile(cls, v):
        if v not in MOLLIFIER_PROFILES:
            raise ValueError(f"must be one of {sorted(MOLLIFIER_PROFILES)}")
        return v

    @model_validator(mode="after")
    def _family_parameters(self):
        if self.family in (KernelFamily.GAUSSIAN, KernelFamily.MOLLIFIER) and self.epsilon is None:
            raise ValueError(f"epsilon is required for the {self.family.value} family")
        if self.family == KernelFamily.INDICATOR_BALL and self.radius is None:
            raise ValueError("radius is required for the indicator_ball family")
        return self


class ModelConfig(_Section):
    sigma: float = Field(default=1.0, gt=0)
    mode: ModelMode = ModelMode.NONLOCAL
    interaction: List[List[float]] = Field(default_factory=lambda: [[0.0]])
    pi: Optional[List[float]] = None
    kernel: KernelConfig = Field(default_factory=lambda: KernelConfig(epsilon=0.1))

    @field_validator("interaction")
    @classmethod
    def _interaction(cls, v):
        n = len(v)
        if n == 0 or any(len(row) != n for row in v):
            raise ValueError("must be a non-empty square matrix")
        if any(x < 0 for row in v for x in row):
            raise ValueError("entries must be >= 0")
        return v

    @model_validator(mode="after")
    def _pi_length(self):
        if self.pi is not None:
            if len(self.pi) != len(self.interaction):
                raise ValueError("pi must have one entry per species")
            if any(p <= 0 for p in self.pi):
                raise ValueError("pi entries must be > 0")
        return self

    @property
    def species(self) -> int:
        return len(self.interaction)


class SchemeSettings(_Section):
    variant: SchemeVariant = SchemeVariant.IMPLICIT_ENTROPY
    tau: float = Field(default=1e-3, gt=0)
    t_end: float = Field(default=0.1, ge=0)
    newton_tol: float = Field(default=1e-11, gt=0)
    newton_max_iter: int = Field(default=50, ge=1)
    delta_reg: float = Field(default=0.0, ge=0)
    u_floor: float = Field(default=1e-12, gt=0)
    flux_average: FluxAverage = FluxAverage.ARITHMETIC
    linear_solver: LinearSolver = LinearSolver.AUTO
    cfl_fatal: bool = False


class InitialConfig(_Section):
    generator: str = "constant"
    snapshot: Optional[str] = None
    level: Union[float, List[float]] = 1.0
    amplitude: float = 0.5
    wave: List[int] = Field(default_factory=lambda: [1])
    count: int = Field(default=3, ge=1)
    width: float = Field(default=0.1, gt=0)
    seed: int = 0

    @field_validator("generator")
    @classmethod
    def _generator(cls, v):
        if v not in ("constant", "mode", "random", "bumps"):
            raise ValueError("must be one of constant, mode, random, bumps")
        return v

    @field_validator("level")
    @classmethod
    def _level(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values or any(x <= 0 for x in values):
            raise ValueError("must be > 0")
        return v

    @field_validator("amplitude")
    @classmethod
    def _amplitude(cls, v, info: ValidationInfo):
        generator = info.data.get("generator")
        if generator == "random" and not 0.0 <= v < 1.0:
            raise ValueError("must lie in [0, 1) for the random generator")
        if generator == "bumps" and v < 0:
            raise ValueError("must be >= 0 for the bumps generator")
        level = info.data.get("level")
        if generator == "mode" and level is not None:
            lowest = min(level) if isinstance(level, list) else level
            if abs(v) > lowest:
                raise ValueError(f"must not exceed the smallest level {lowest:g} for the mode generator")
        return v


class PerturbationConfig(_Section):
    generator: str = "mode"
    amplitude: float = 1e-3
    wave: List[int] = Field(default_factory=lambda: [1])
    seed: int = 1

    @field_validator("generator")
    @classmethod
    def _generator(cls, v):
        if v not in ("mode", "random", "constant"):
            raise ValueError("must be one of mode, random, constant")
        return v


class OutputConfig(_Section):
    directory: Optional[str] = None
    times: Optional[List[float]] = None
    stride: Optional[int] = Field(default=None, ge=1)
    emit_snapshots: bool = False


class ExperimentConfig(_Section):
    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    request_lambda_bound: bool = False
    lambda_scale: float = Field(default=1.0, gt=0)
    tau_list: List[float] = Field(default_factory=list)
    n_list: List[int] = Field(default_factory=list)

    @field_validator("epsilons")
    @classmethod
    def _epsilons(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("entries must be > 0")
        if any(later >= earlier for earlier, later in zip(v, v[1:])):
            raise ValueError("must be strictly decreasing")
        return v


class RunConfig(_Section):
    grid: GridConfig = Field(default_factory=GridConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    scheme: SchemeSettings = Field(default_factory=SchemeSettings)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    _warnings: List[str] = PrivateAttr(default_factory=list)
    _base_dir: Optional[str] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _wave_dimensions(self):
        for path, wave in (("initial.wave", self.initial.wave), ("experiment.perturbation.wave", self.experiment.perturbation.wave)):
            if len(wave) > self.grid.dim:
                raise ValueError(f"{path}: has {len(wave)} entries for a {self.grid.dim}D grid")
        return self

    @property
    def warnings(self) -> List[str]:
        return self._warnings


# --- reports -------------------------------------------------------------


class PDCertificate(BaseModel):
    verdict: PDVerdict
    min_multiplier_eig: float
    max_multiplier_eig: float
    normalized_min_multiplier: float
    tolerance: float
    detailed_balance_residual: float
    witness_mode: Optional[List[int]] = None
    witness_vector: Optional[List[float]] = None


class PetrovskiiReport(BaseModel):
    passed: bool
    eigenvalues_real: List[float]
    eigenvalues_imag: List[float]


class LocalizationReport(BaseModel):
    epsilons: List[float]
    distances_l1: List[float]
    distances_l2: List[float]
    monotone_flag: bool
    empirical_rate: Optional[float] = None


class UniquenessReport(BaseModel):
    times: List[float]
    rel_entropy: List[float]
    ckp_bound: List[float]
    l1_distances: List[float]
    gronwall_fit_C: float
    same_init_max_distance: float


class BoundViolation(BaseModel):
    time: float
    species: int
    kind: str
    value: float
    bound: float


class BoundsReport(BaseModel):
    passed: bool
    lam: float
    m0: float
    M0: float
    checked_snapshots: int
    first_violation: Optional[BoundViolation] = None


class ConvergenceRow(BaseModel):
    kind: str
    resolution: float
    error: float


class ConvergenceReport(BaseModel):
    reference: str
    rows: List[ConvergenceRow]
    temporal_order: Optional[float] = None
    spatial_order: Optional[float] = None
