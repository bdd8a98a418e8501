"""End-to-end tests of the subcommands and the entry point."""

import json

import pandas as pd
import pytest
from pathlib import Path

from cli.commands import COMMANDS, EXIT_DOMAIN_ERROR, EXIT_OK, EXIT_USAGE, output_directory, run
from main import main
from models import ModelMode
from services.config_loader import parse_config, parse_config_text
from services.storage import read_snapshot

BASE = """
[grid]
dim = 1
cells = {cells}

[model]
sigma = 1.0
interaction = [[1.0, 0.5], [0.5, 1.0]]

[model.kernel]
family = "{family}"
{kernel_line}

[scheme]
tau = 0.01
t_end = 0.02

[initial]
generator = "mode"
amplitude = 0.3

[experiment]
epsilons = {epsilons}
tau_list = [0.01, 0.005, 0.0025]
"""


def make_config(cells=32, family="gaussian", kernel_line="epsilon = 0.1", epsilons="[0.4, 0.2]", extra=""):
    text = BASE.format(cells=cells, family=family, kernel_line=kernel_line, epsilons=epsilons) + extra
    return parse_config_text(text)


def test_registered_commands():
    assert sorted(COMMANDS) == [
        "bounds-check",
        "check-kernel",
        "convergence",
        "local-simulate",
        "localization-sweep",
        "simulate",
        "uniqueness-probe",
    ]


def test_simulate_writes_diagnostics_and_snapshots(tmp_path):
    config = make_config(extra="\n[output]\nemit_snapshots = true\n")

    assert run("simulate", config, output_dir=str(tmp_path)) == EXIT_OK

    frame = pd.read_csv(tmp_path / "diagnostics.csv")
    assert len(frame) == 3
    assert "mass_1" in frame.columns
    state, time = read_snapshot(tmp_path / "snapshot_00001.nlxd")
    assert time == pytest.approx(0.02)
    assert state.species_count == 2


def test_local_simulate(tmp_path):
    assert run("local-simulate", make_config(), output_dir=str(tmp_path)) == EXIT_OK
    assert (tmp_path / "diagnostics.csv").is_file()


def test_check_kernel_reports_verdict(tmp_path):
    config = make_config(family="indicator_ball", kernel_line="radius = 0.25", cells=64)

    assert run("check-kernel", config, output_dir=str(tmp_path)) == EXIT_OK

    certificate = json.loads((tmp_path / "certificate.json").read_text())
    assert certificate["verdict"] == "not_positive_definite"


def test_localization_sweep_command(tmp_path):
    config = make_config(family="mollifier", kernel_line='epsilon = 0.1\nprofile = "gaussian"')

    assert run("localization-sweep", config, output_dir=str(tmp_path), threads=2) == EXIT_OK

    frame = pd.read_csv(tmp_path / "localization.csv")
    assert frame["epsilon"].tolist() == [0.4, 0.2]


def test_localization_resolution_guard_is_a_domain_error(tmp_path):
    config = make_config(cells=64, epsilons="[0.4, 0.2, 0.1]")
    config.grid.cells = 16
    assert run("localization-sweep", config, output_dir=str(tmp_path)) == EXIT_DOMAIN_ERROR


def test_uniqueness_probe_command(tmp_path):
    assert run("uniqueness-probe", make_config(), output_dir=str(tmp_path), seed=3) == EXIT_OK

    report = json.loads((tmp_path / "uniqueness.json").read_text())
    assert len(report["times"]) == 3
    assert report["same_init_max_distance"] < 1e-9


def test_bounds_check_command(tmp_path):
    assert run("bounds-check", make_config(), output_dir=str(tmp_path)) == EXIT_OK

    report = json.loads((tmp_path / "bounds.json").read_text())
    assert report["passed"]
    assert len(pd.read_csv(tmp_path / "bounds.csv")) == 3


def test_bounds_check_needs_nonlocal_model(tmp_path):
    config = make_config()
    config.model.mode = ModelMode.LOCAL
    assert run("bounds-check", config, output_dir=str(tmp_path)) == EXIT_USAGE


def test_convergence_command(tmp_path):
    assert run("convergence", make_config(cells=16, epsilons="[0.4]"), output_dir=str(tmp_path)) == EXIT_OK

    frame = pd.read_csv(tmp_path / "convergence.csv")
    assert frame["kind"].tolist() == ["temporal", "temporal"]


def test_unknown_command(tmp_path):
    assert run("explode", make_config(), output_dir=str(tmp_path)) == EXIT_USAGE


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("NLXD_OUTPUT_DIR", str(tmp_path / "env"))
    config = make_config()

    assert output_directory(config, str(tmp_path / "flag")) == tmp_path / "flag"
    assert output_directory(config) == tmp_path / "env"
    config.output.directory = str(tmp_path / "configured")
    assert output_directory(config) == tmp_path / "configured"


def test_main_exit_codes(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[grid]\ncells = 7\n")

    assert main(["simulate", "--config", str(path)]) == EXIT_USAGE
    assert main(["simulate"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_main_runs_simulation(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[grid]\ncells = 16\n[scheme]\ntau = 0.01\nt_end = 0.02\n[initial]\ngenerator = "random"\n')

    assert main(["simulate", "--config", str(path), "--output", str(tmp_path / "out"), "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "out" / "diagnostics.csv").is_file()


def test_uniqueness_command_rejects_mass_changing_perturbation(tmp_path):
    config = make_config(extra='\n[experiment.perturbation]\ngenerator = "constant"\n')
    assert run("uniqueness-probe", config, output_dir=str(tmp_path)) == EXIT_DOMAIN_ERROR


def test_shipped_two_species_config_is_positive_definite(tmp_path):
    config = parse_config(Path(__file__).resolve().parents[1] / "configs" / "gaussian_two_species.toml")

    assert run("check-kernel", config, output_dir=str(tmp_path)) == EXIT_OK

    certificate = json.loads((tmp_path / "certificate.json").read_text())
    assert certificate["verdict"] == "positive_definite"


def test_same_config_and_seed_give_identical_files(tmp_path):
    text = BASE.format(cells=32, family="gaussian", kernel_line="epsilon = 0.1", epsilons="[0.4, 0.2]")
    text = text.replace('generator = "mode"', 'generator = "random"') + "\n[output]\nemit_snapshots = true\n"
    first, second = tmp_path / "first", tmp_path / "second"

    assert run("simulate", parse_config_text(text), output_dir=str(first), seed=11) == EXIT_OK
    assert run("simulate", parse_config_text(text), output_dir=str(second), seed=11) == EXIT_OK

    names = sorted(path.name for path in first.iterdir())
    assert "diagnostics.csv" in names
    assert "snapshot_00001.nlxd" in names
    assert names == sorted(path.name for path in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()
