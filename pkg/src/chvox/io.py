"""VTK legacy output, CSV time series and binary coefficient dumps."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from chvox.grid import VoxelGrid

CSV_COLUMNS = (
    "step",
    "time",
    "mass",
    "chemical_energy",
    "gradient_energy",
    "total_energy",
    "newton_iters",
    "krylov_iters_total",
    "final_residual",
    "stationary_flag",
)

_DUMP_MAGIC = b"CHVOXDMP"
_DUMP_HEADER = struct.Struct("<8sIIIIdQ")  # magic, version, N, p, n_loc, time, length


def write_vtk(path, grid: VoxelGrid, cell_data: dict, title="chvox") -> None:
    """Legacy ASCII unstructured grid, one hexahedron per element.

    Corner points are shared between neighbouring voxels.
    """
    N, h = grid.N, grid.h
    t = grid.element_tuples
    offs = np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
    )
    corners = (t[:, None, :] + offs[None]).reshape(-1, 3)
    key = corners[:, 0] + (N + 1) * (corners[:, 1] + (N + 1) * corners[:, 2])
    uniq, inverse = np.unique(key, return_inverse=True)
    pts = np.stack([uniq % (N + 1), (uniq // (N + 1)) % (N + 1), uniq // (N + 1) ** 2], 1) * h
    cells = inverse.reshape(-1, 8)
    n = grid.n_elements
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        fh.write(f"CELLS {n} {9 * n}\n")
        np.savetxt(fh, np.column_stack([np.full(n, 8), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {n}\n")
        np.savetxt(fh, np.full(n, 12), fmt="%d")
        if cell_data:
            fh.write(f"CELL_DATA {n}\n")
            for name, values in cell_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (n,):
                    raise ValueError(f"cell data {name!r} must have one value per element")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, values, fmt="%.17g")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


class CsvLog:
    """Append-as-you-go writer for the per-step time series."""

    def __init__(self, path, columns=CSV_COLUMNS):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.columns)

    def write(self, row: dict):
        self._w.writerow([_fmt(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path, rows, columns=CSV_COLUMNS) -> None:
    with CsvLog(path, columns) as log:
        for r in rows:
            log.write(r)


def read_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                row[k] = int(v) if k in ("step", "newton_iters", "krylov_iters_total", "stationary_flag") else float(v)
            out.append(row)
    return out


def write_dump(path, grid: VoxelGrid, p: int, coeffs, time: float) -> None:
    """Binary checkpoint: fixed header followed by little-endian float64 coefficients."""
    X = np.ascontiguousarray(coeffs, dtype="<f8")
    n_loc = X.size // max(grid.n_elements, 1)
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, 1, grid.N, p, n_loc, float(time), X.size))
        fh.write(X.tobytes())


def read_dump(path):
    """Returns ``(N, p, time, coeffs)``."""
    with open(path, "rb") as fh:
        head = fh.read(_DUMP_HEADER.size)
        if len(head) != _DUMP_HEADER.size:
            raise ValueError(f"{path}: truncated dump header")
        magic, version, N, p, _n_loc, time, length = _DUMP_HEADER.unpack(head)
        if magic != _DUMP_MAGIC or version != 1:
            raise ValueError(f"{path}: not a coefficient dump")
        X = np.frombuffer(fh.read(8 * length), dtype="<f8")
        if X.size != length:
            raise ValueError(f"{path}: truncated coefficient data")
    return N, p, time, X.astype(float)
