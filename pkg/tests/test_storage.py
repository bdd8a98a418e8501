"""Tests for snapshot files and CSV/JSON reports."""

import json
import struct

import numpy as np
import pytest

from models import BoundsReport, KernelFamily
from services.errors import BadMagicError, NonFiniteValueError, TruncatedPayloadError
from services.kernels import InteractionMatrix, KernelSpec, build_kernel, solve_reversible_measure
from services.scheme import ModelParams, SchemeConfig, simulate
from services.storage import (
    diagnostics_frame,
    read_diagnostics_csv,
    read_snapshot,
    write_diagnostics_csv,
    write_json,
    write_report_csv,
    write_snapshot,
)
from services.torus_grid import FieldSet, make_grid


@pytest.fixture
def trajectory():
    grid = make_grid(1, 16)
    (x,) = grid.cell_centers()
    a = InteractionMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]))
    kernel = build_kernel(KernelSpec(family=KernelFamily.GAUSSIAN, interaction=a, epsilon=0.1), grid)
    params = ModelParams(sigma=1.0, pi=solve_reversible_measure(a), interaction=a, kernel=kernel)
    u0 = FieldSet(grid, np.stack([1.0 + 0.3 * np.cos(2 * np.pi * x), 1.0 + 0.3 * np.sin(2 * np.pi * x)]))
    return simulate(u0, params, SchemeConfig(tau=0.01, t_end=0.03))


def test_snapshot_preserves_every_bit(tmp_path):
    rng = np.random.default_rng(12)
    grid = make_grid(2, 8, (2.0, 1.0))
    state = FieldSet(grid, rng.random((3,) + grid.shape))
    path = tmp_path / "state.nlxd"

    write_snapshot(state, 0.125, path)
    loaded, time = read_snapshot(path)

    assert time == 0.125
    assert loaded.grid == grid
    assert loaded.values.tobytes() == state.values.tobytes()


def test_snapshot_header_layout(tmp_path):
    grid = make_grid(1, 8, 3.0)
    path = tmp_path / "state.nlxd"
    write_snapshot(FieldSet(grid, np.ones((2, 8))), 1.5, path)

    data = path.read_bytes()

    assert data[:4] == b"NLXD"
    assert struct.unpack_from("<BBHIdd", data, 4) == (1, 1, 2, 8, 3.0, 1.5)
    assert len(data) == 4 + struct.calcsize("<BBHIdd") + 2 * 8 * 8


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "bad.nlxd"
    path.write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(BadMagicError):
        read_snapshot(path)


def test_snapshot_truncated_payload(tmp_path):
    path = tmp_path / "state.nlxd"
    write_snapshot(FieldSet(make_grid(1, 8), np.ones((1, 8))), 0.0, path)
    path.write_bytes(path.read_bytes()[:-8])

    with pytest.raises(TruncatedPayloadError):
        read_snapshot(path)


def test_snapshot_non_finite_payload(tmp_path):
    path = tmp_path / "state.nlxd"
    write_snapshot(FieldSet(make_grid(1, 8), np.ones((1, 8))), 0.0, path)
    data = bytearray(path.read_bytes())
    data[-8:] = struct.pack("<d", float("nan"))
    path.write_bytes(bytes(data))

    with pytest.raises(NonFiniteValueError):
        read_snapshot(path)


def test_diagnostics_frame_columns(trajectory):
    frame = diagnostics_frame(trajectory, 2)

    assert list(frame.columns[:7]) == ["time", "mass_0", "min_0", "max_0", "mass_1", "min_1", "max_1"]
    assert len(frame) == 4
    assert frame["newton_iters"].iloc[0] == 0
    assert (frame["newton_iters"].iloc[1:] > 0).all()


def test_diagnostics_csv_round_trip(tmp_path, trajectory):
    path = tmp_path / "out" / "diagnostics.csv"

    write_diagnostics_csv(trajectory, path)
    frame = read_diagnostics_csv(path)

    assert frame["h1"].tolist() == [row.entropy.h1 for row in trajectory.diagnostics]
    assert frame["h2"].tolist() == [row.entropy.h2 for row in trajectory.diagnostics]
    np.testing.assert_allclose(frame["time"], [0.0, 0.01, 0.02, 0.03], rtol=1e-15)


def test_report_csv_and_json(tmp_path):
    write_report_csv([{"epsilon": 0.1, "distance_l1": 1e-3}], tmp_path / "report.csv", ["epsilon", "distance_l1"])
    report = BoundsReport(passed=True, lam=2.0, m0=0.5, M0=1.5, checked_snapshots=3)
    write_json(report, tmp_path / "report.json")

    assert (tmp_path / "report.csv").read_text().splitlines() == ["epsilon,distance_l1", "0.10000000000000001,0.001"]
    assert json.loads((tmp_path / "report.json").read_text())["checked_snapshots"] == 3
