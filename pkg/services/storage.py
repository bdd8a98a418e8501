"""
Durable output formats: binary state snapshots and CSV reports.

Snapshot layout (little-endian): magic b"NLXD", u8 version, u8 dim, u16 species,
u32 cells per axis, f64 period per axis, f64 time, then the species rasters as
row-major f64 values.
"""

import logging
import os
import struct
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from services.errors import BadMagicError, NonFiniteValueError, TruncatedPayloadError
from services.scheme import Trajectory
from services.torus_grid import FieldSet, make_grid

logger = logging.getLogger(__name__)

MAGIC = b"NLXD"
FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, os.PathLike]


def write_snapshot(state: FieldSet, time: float, path: PathLike) -> None:
    """Write ``state`` at ``time``; every f64 survives a read back bitwise."""
    grid = state.grid
    header = MAGIC + struct.pack(
        f"<BBH{grid.dim}I{grid.dim}dd",
        FORMAT_VERSION,
        grid.dim,
        state.species_count,
        *([grid.cells_per_dim] * grid.dim),
        *grid.periods,
        float(time),
    )
    payload = np.ascontiguousarray(state.values, dtype="<f8").tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload)


def read_snapshot(path: PathLike) -> Tuple[FieldSet, float]:
    """
    Read a snapshot written by ``write_snapshot``.

    Returns:
        (state, time)
    """
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path} does not start with {MAGIC!r}")
    offset = 4
    if len(data) < offset + 4:
        raise TruncatedPayloadError(f"{path}: header is cut short")
    version, dim, species = struct.unpack_from("<BBH", data, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise BadMagicError(f"{path}: unsupported format version {version}")
    if dim not in (1, 2):
        raise BadMagicError(f"{path}: invalid dimension {dim}")
    tail = struct.calcsize(f"<{dim}I{dim}dd")
    if len(data) < offset + tail:
        raise TruncatedPayloadError(f"{path}: header is cut short")
    fields = struct.unpack_from(f"<{dim}I{dim}dd", data, offset)
    offset += tail
    cells = fields[:dim]
    periods = fields[dim:2 * dim]
    time = fields[-1]
    if len(set(cells)) != 1:
        raise BadMagicError(f"{path}: non-uniform cell counts {cells}")
    grid = make_grid(dim, cells[0], periods)

    expected = species * grid.size * 8
    if len(data) - offset != expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(data) - offset} bytes, header implies {expected}"
        )
    values = np.frombuffer(data, dtype="<f8", offset=offset).astype(float).reshape((species,) + grid.shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    return FieldSet(grid, values), time


def diagnostics_frame(trajectory: Trajectory, species: int) -> pd.DataFrame:
    """One row per computed state, in time order."""
    columns = ["time"]
    for i in range(species):
        columns += [f"mass_{i}", f"min_{i}", f"max_{i}"]
    columns += [
        "h1", "h2", "h2_local", "fisher_dissipation", "drift_dissipation", "newton_iters", "residual_norm",
    ]
    rows = []
    for row in trajectory.diagnostics:
        ent = row.entropy
        record = {"time": row.time}
        for i in range(species):
            record[f"mass_{i}"] = ent.masses[i]
            record[f"min_{i}"] = ent.mins[i]
            record[f"max_{i}"] = ent.maxs[i]
        record.update(
            h1=ent.h1,
            h2=ent.h2,
            h2_local=ent.h2_local,
            fisher_dissipation=ent.fisher_dissipation,
            drift_dissipation=ent.drift_dissipation,
            newton_iters=row.step.newton_iters if row.step else 0,
            residual_norm=row.step.residual_norm if row.step else 0.0,
        )
        rows.append(record)
    frame = pd.DataFrame(rows, columns=columns)
    return frame.astype({"newton_iters": "int64"})


def write_diagnostics_csv(trajectory: Trajectory, path: PathLike, species: int = None) -> None:
    if species is None:
        species = trajectory.diagnostics[0].entropy.masses.size if trajectory.diagnostics else 1
    frame = diagnostics_frame(trajectory, species)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} diagnostic rows to {path}")


def read_diagnostics_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_report_csv(rows: Iterable[dict], path: PathLike, columns: List[str]) -> None:
    frame = pd.DataFrame(list(rows), columns=columns)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def write_json(model: BaseModel, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(model.model_dump_json(indent=2))
