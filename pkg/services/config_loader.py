"""Load and validate TOML run configurations."""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Union

from pydantic import ValidationError

from models import KernelFamily, ModelMode, RunConfig
from services.errors import ConfigError
from services.experiments import RESOLUTION_FACTOR

logger = logging.getLogger(__name__)


def format_validation_error(error: dict) -> str:
    """Render one pydantic error as '<dotted.path> <message>'."""
    path = ".".join(str(part) for part in error.get("loc", ()))
    ctx = error.get("ctx") or {}
    kind = error.get("type")
    if kind == "greater_than":
        return f"{path} must be > {ctx['gt']}"
    if kind == "greater_than_equal":
        return f"{path} must be >= {ctx['ge']}"
    message = error.get("msg", "invalid value")
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]
    return f"{path}: {message}" if path else message


def _periods(config: RunConfig) -> List[float]:
    period = config.grid.period
    return list(period) if isinstance(period, list) else [period] * config.grid.dim


def _cross_checks(config: RunConfig, errors: List[str], warnings: List[str]) -> None:
    grid, model, scheme = config.grid, config.model, config.scheme
    kernel = model.kernel
    if isinstance(grid.period, list) and len(grid.period) != grid.dim:
        errors.append(f"grid.period must have {grid.dim} entries")
    if model.mode == ModelMode.NONLOCAL:
        if kernel.family == KernelFamily.CAUCHY and grid.dim != 1:
            errors.append("model.kernel.family cauchy is only defined for grid.dim = 1")
        half = 0.5 * min(_periods(config))
        if kernel.family == KernelFamily.INDICATOR_BALL and kernel.radius is not None and kernel.radius >= half:
            errors.append(f"model.kernel.radius must be < L/2 = {half:g}")
        if kernel.family in (KernelFamily.GAUSSIAN, KernelFamily.MOLLIFIER) and kernel.epsilon is not None:
            if kernel.epsilon >= half:
                warnings.append(f"model.kernel.epsilon = {kernel.epsilon} is not below L/2 = {half:g}")
        if config.experiment.request_lambda_bound and kernel.family == KernelFamily.INDICATOR_BALL:
            warnings.append(
                "experiment.request_lambda_bound: the indicator kernel has no bounded Laplacian, "
                "the L-infinity bound hypotheses are not met"
            )
    # the default widths are guarded when the sweep runs
    if "epsilons" in config.experiment.model_fields_set and config.experiment.epsilons:
        h = _periods(config)[0] / grid.cells
        smallest = config.experiment.epsilons[-1]
        if smallest < RESOLUTION_FACTOR * h:
            errors.append(
                f"experiment.epsilons: smallest width {smallest:g} is below {RESOLUTION_FACTOR:g}h = {RESOLUTION_FACTOR * h:g}"
            )
    if config.output.times is not None:
        for index, t in enumerate(config.output.times):
            if not 0.0 <= t <= scheme.t_end:
                errors.append(f"output.times.{index} must lie in [0, scheme.t_end]")
    if config.initial.snapshot is not None:
        snapshot = resolve_path(config, config.initial.snapshot)
        if not snapshot.is_file():
            errors.append(f"initial.snapshot: file not found: {snapshot}")


def resolve_path(config: RunConfig, path: Union[str, os.PathLike]) -> Path:
    """Paths inside a config are relative to the config file."""
    candidate = Path(path)
    if candidate.is_absolute() or config._base_dir is None:
        return candidate
    return Path(config._base_dir) / candidate


def parse_config_text(text: str, base_dir: Union[str, os.PathLike, None] = None) -> RunConfig:
    """
    Validate TOML text into a RunConfig.

    Raises ConfigError listing every problem found, not only the first one.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"parse error: {exc}"])
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([format_validation_error(err) for err in exc.errors()])

    config._base_dir = str(base_dir) if base_dir is not None else None
    errors: List[str] = []
    warnings: List[str] = []
    _cross_checks(config, errors, warnings)
    if errors:
        raise ConfigError(errors)
    config._warnings.extend(warnings)
    for message in warnings:
        logger.warning(f"config: {message}")
    return config


def parse_config(path: Union[str, os.PathLike]) -> RunConfig:
    """
    Read and validate a configuration file.

    Args:
        path: TOML file

    Returns:
        Fully validated RunConfig with defaults filled in
    """
    source = Path(path)
    try:
        text = source.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {source}: {exc}"])
    return parse_config_text(text, base_dir=source.parent)
