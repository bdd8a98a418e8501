"""Tests for TOML configuration loading and validation."""

import pytest

from models import FluxAverage, KernelFamily, LinearSolver, SchemeVariant
from services.config_loader import format_validation_error, parse_config, parse_config_text, resolve_path
from services.errors import ConfigError

VALID = """
[grid]
dim = 1
cells = 64

[model]
sigma = 0.5
interaction = [[1.0, 2.0], [1.0, 1.0]]

[model.kernel]
family = "gaussian"
epsilon = 0.1

[scheme]
tau = 0.01
t_end = 0.1
flux_average = "upwind"

[initial]
generator = "mode"
amplitude = 0.3

[output]
times = [0.0, 0.05, 0.1]
"""


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    return info.value.errors


def test_valid_config_fills_defaults():
    config = parse_config_text(VALID)

    assert config.grid.cells == 64
    assert config.model.species == 2
    assert config.model.kernel.family == KernelFamily.GAUSSIAN
    assert config.scheme.flux_average == FluxAverage.UPWIND
    assert config.scheme.variant == SchemeVariant.IMPLICIT_ENTROPY
    assert config.scheme.linear_solver == LinearSolver.AUTO
    assert config.scheme.newton_tol == 1e-11
    assert config.warnings == []


def test_empty_config_is_valid():
    config = parse_config_text("")
    assert config.grid.dim == 1
    assert config.model.interaction == [[0.0]]


def test_every_error_is_reported():
    errors = errors_of("[grid]\ncells = 7\n\n[model]\nsigma = -1.0\n")

    assert len(errors) == 2
    assert "grid.cells: must be even and >= 8" in errors
    assert "model.sigma must be > 0" in errors


def test_unknown_keys_are_rejected():
    errors = errors_of("[scheme]\ntau = 0.01\nsteps = 10\n")
    assert any(message.startswith("scheme.steps") for message in errors)


def test_parse_error():
    errors = errors_of("[grid\n")
    assert errors[0].startswith("parse error")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ('[grid]\ndim = 2\ncells = 16\n[model.kernel]\nfamily = "cauchy"\n', "cauchy"),
        ('[model.kernel]\nfamily = "indicator_ball"\nradius = 0.5\n', "radius must be < L/2"),
        ("[grid]\ndim = 2\nperiod = [1.0]\n", "grid.period must have 2 entries"),
        ("[scheme]\nt_end = 0.1\n[output]\ntimes = [0.2]\n", "output.times.0"),
        ('[model.kernel]\nfamily = "mollifier"\n', "epsilon is required"),
        ("[model]\ninteraction = [[1.0, -1.0], [0.0, 1.0]]\n", "entries must be >= 0"),
    ],
)
def test_cross_field_errors(text, fragment):
    errors = errors_of(text)
    assert any(fragment in message for message in errors), errors


def test_warnings_are_collected():
    text = '[model.kernel]\nfamily = "gaussian"\nepsilon = 0.6\n'
    config = parse_config_text(text)
    assert len(config.warnings) == 1
    assert "epsilon" in config.warnings[0]

    text = '[model.kernel]\nfamily = "indicator_ball"\nradius = 0.2\n[experiment]\nrequest_lambda_bound = true\n'
    assert "bounded Laplacian" in parse_config_text(text).warnings[0]


def test_snapshot_paths_are_relative_to_the_config(tmp_path):
    (tmp_path / "state.nlxd").write_bytes(b"")
    path = tmp_path / "run.toml"
    path.write_text('[initial]\nsnapshot = "state.nlxd"\n')

    config = parse_config(path)

    assert resolve_path(config, config.initial.snapshot) == tmp_path / "state.nlxd"


def test_missing_snapshot_is_an_error(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[initial]\nsnapshot = "missing.nlxd"\n')

    with pytest.raises(ConfigError) as info:
        parse_config(path)
    assert "file not found" in info.value.errors[0]


def test_unreadable_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.toml")


def test_format_validation_error():
    assert format_validation_error({"loc": ("scheme", "tau"), "type": "greater_than", "ctx": {"gt": 0}, "msg": "x"}) == "scheme.tau must be > 0"
    assert format_validation_error({"loc": ("grid", "dim"), "type": "value_error", "msg": "Value error, must be 1 or 2"}) == "grid.dim: must be 1 or 2"


@pytest.mark.parametrize(
    "text, message",
    [
        ('[initial]\ngenerator = "random"\namplitude = 1.0\n', "initial.amplitude: must lie in [0, 1) for the random generator"),
        ('[initial]\ngenerator = "mode"\namplitude = 1.5\n', "initial.amplitude: must not exceed the smallest level 1 for the mode generator"),
        ('[initial]\ngenerator = "bumps"\namplitude = -0.2\n', "initial.amplitude: must be >= 0 for the bumps generator"),
        ("[initial]\nlevel = -1.0\n", "initial.level: must be > 0"),
        ("[initial]\nlevel = [1.0, 0.0]\n", "initial.level: must be > 0"),
        ("[experiment]\nepsilons = [0.1, 0.2]\n", "experiment.epsilons: must be strictly decreasing"),
        ('[initial]\ngenerator = "mode"\nwave = [1, 1]\n', "initial.wave: has 2 entries for a 1D grid"),
        ("[experiment.perturbation]\nwave = [2, 0, 1]\n[grid]\ndim = 2\ncells = 16\n", "experiment.perturbation.wave: has 3 entries for a 2D grid"),
    ],
)
def test_initial_and_experiment_constraints(text, message):
    assert message in errors_of(text)


def test_smallest_epsilon_must_resolve_the_grid():
    errors = errors_of("[grid]\ncells = 16\n\n[experiment]\nepsilons = [0.4, 0.1]\n")
    assert errors == ["experiment.epsilons: smallest width 0.1 is below 4h = 0.25"]

    assert parse_config_text("[grid]\ncells = 16\n\n[experiment]\nepsilons = [0.4, 0.3]\n").experiment.epsilons == [0.4, 0.3]
    # unset widths fall back to the defaults and are checked by the sweep itself
    assert parse_config_text("[grid]\ncells = 16\n").experiment.epsilons == [0.4, 0.2, 0.1, 0.05]
