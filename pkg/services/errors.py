"""Exception hierarchy for the simulator.

Every error carries a stable ``code`` so the command line and the reports can
name the failure without parsing messages.
"""

from typing import List, Optional


class SimulationError(Exception):
    """Base class for all domain errors."""

    code = "simulation-error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class InvalidDimensionError(SimulationError):
    code = "invalid-dimension"


class OddCellCountError(SimulationError):
    code = "odd-N"


class NonpositivePeriodError(SimulationError):
    code = "nonpositive-period"


class GridMismatchError(SimulationError):
    code = "grid-mismatch"


class InvalidNormError(SimulationError):
    code = "invalid-p"


class ProfileNormalizationError(SimulationError):
    code = "profile-normalization-failure"


class NoReversibleMeasureError(SimulationError):
    code = "no-reversible-measure"


class StructuralAsymmetryError(SimulationError):
    code = "structural-asymmetry"


class DetailedBalanceError(SimulationError):
    code = "detailed-balance-violated"


class AsymmetricInteractionError(SimulationError):
    code = "asymmetric-interaction"


class KernelNotSmoothError(SimulationError):
    code = "kernel-not-smooth"


class SizeGuardError(SimulationError):
    code = "size-guard-exceeded"


class NegativeDensityError(SimulationError):
    code = "negative-density"


class NonpositiveReferenceError(SimulationError):
    code = "nonpositive-reference"


class MassMismatchError(SimulationError):
    code = "mass-mismatch"


class EntropyVariableOverflowError(SimulationError):
    code = "entropy-variable-overflow"


class NewtonDivergenceError(SimulationError):
    code = "newton-divergence"


class CflViolationError(SimulationError):
    code = "cfl-violation"


class ResolutionGuardError(SimulationError):
    code = "resolution-guard"


class InsufficientResolutionsError(SimulationError):
    code = "insufficient-resolutions"


class BadMagicError(SimulationError):
    code = "bad-magic"


class TruncatedPayloadError(SimulationError):
    code = "truncated-payload"


class NonFiniteValueError(SimulationError):
    code = "non-finite-value"


class ConfigError(SimulationError):
    """Configuration problems; ``errors`` lists every message, not just the first."""

    code = "config-error"

    def __init__(self, errors: List[str], message: Optional[str] = None):
        self.errors = list(errors)
        super().__init__(message or "; ".join(self.errors))


class InvalidInteractionError(SimulationError):
    code = "invalid-interaction"


class InvalidKernelError(SimulationError):
    code = "invalid-kernel"
