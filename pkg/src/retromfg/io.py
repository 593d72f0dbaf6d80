"""
Field files and tabular output.

Binary field container (little-endian)::

    magic        8 bytes   b"RMFGFLD1"
    dim          uint32
    kind         uint32    0 = spatial, 1 = spacetime
    nodes        uint32 x dim
    time_steps   uint32
    half_widths  float64 x dim
    T            float64
    values       float64, row-major, time first for spacetime fields

CSV files follow RFC 4180 (CRLF line ends, minimal quoting). Floats are
written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import FieldKind, ScalarField, build_grid

__all__ = ["MAGIC", "write_field", "read_field", "write_field_csv", "write_csv", "read_csv", "FieldFormatError"]

MAGIC = b"RMFGFLD1"


class FieldFormatError(ValueError):
    pass


def write_field(path, f: ScalarField) -> Path:
    g = f.grid
    path = Path(path)
    head = MAGIC + struct.pack("<II", g.dim, 1 if f.is_spacetime else 0)
    head += struct.pack(f"<{g.dim}I", *g.shape) + struct.pack("<I", g.time_steps)
    head += struct.pack(f"<{g.dim}d", *g.domain.half_widths) + struct.pack("<d", g.T)
    path.write_bytes(head + np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_field(path) -> ScalarField:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FieldFormatError(f"{path}: not a field container (bad magic)")
    pos = 8
    try:
        dim, kind = struct.unpack_from("<II", raw, pos)
        pos += 8
        nodes = struct.unpack_from(f"<{dim}I", raw, pos)
        pos += 4 * dim
        (steps,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        widths = struct.unpack_from(f"<{dim}d", raw, pos)
        pos += 8 * dim
        (T,) = struct.unpack_from("<d", raw, pos)
        pos += 8
    except struct.error:
        raise FieldFormatError(f"{path}: truncated header") from None
    if kind not in (0, 1):
        raise FieldFormatError(f"{path}: unknown field kind {kind}")
    grid = build_grid(widths, T, nodes, steps)
    shape = grid.spacetime_shape if kind else grid.shape
    count = int(np.prod(shape))
    if len(raw) - pos != 8 * count:
        raise FieldFormatError(f"{path}: expected {count} values, found {(len(raw) - pos) / 8:g}")
    vals = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
    return ScalarField(grid, vals, FieldKind.SPACETIME if kind else FieldKind.SPATIAL)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """RFC 4180 table; columns default to the keys of the first row in order."""
    path = Path(path)
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return str(x)


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_field_csv(path, f: ScalarField) -> Path:
    """One row per node: ``t`` (spacetime only), ``x1..xn``, ``value``."""
    g = f.grid
    names = [f"x{i + 1}" for i in range(g.dim)]
    if f.is_spacetime:
        t, x = g.spacetime_coords()
        cols = [np.broadcast_to(t, g.spacetime_shape)] + [np.broadcast_to(c, g.spacetime_shape) for c in x]
        names = ["t"] + names
    else:
        cols = list(g.coords())
    cols = [np.asarray(c).ravel() for c in cols] + [f.values.ravel()]
    rows = [dict(zip(names + ["value"], map(float, vals))) for vals in zip(*cols)]
    return write_csv(path, rows, names + ["value"])
