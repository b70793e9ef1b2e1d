"""ASCII output: legacy VTK cell data and column CSV tables.

All numbers are written with 17 significant digits so that a float
survives a write/read round trip unchanged.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .mesh import Mesh

VTK_QUAD = 9


def _num(v) -> str:
    return format(float(v), ".17g")


def write_vtk(mesh: Mesh, fields: dict | None, path, title: str = "consflux") -> Path:
    """Write ``mesh`` and per-cell scalar ``fields`` as a legacy ASCII VTK file.

    An empty (or ``None``) field mapping writes the mesh only.
    """
    fields = dict(fields or {})
    M = mesh.num_elements
    for name, values in fields.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid VTK field name {name!r}")
        if np.shape(values) != (M,):
            raise ValueError(f"field {name!r} needs one value per cell ({M})")
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " "), "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.num_nodes} double")
    lines.extend(f"{_num(x)} {_num(y)} 0" for x, y in mesh.nodes)
    lines.append(f"CELLS {M} {5 * M}")
    lines.extend("4 " + " ".join(str(int(i)) for i in cell) for cell in mesh.elements)
    lines.append(f"CELL_TYPES {M}")
    lines.extend([str(VTK_QUAD)] * M)
    if fields:
        lines.append(f"CELL_DATA {M}")
        for name, values in fields.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_num(v) for v in np.asarray(values, dtype=float))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_cell_data(path) -> dict:
    """Cell scalars of a file written by :func:`write_vtk` -> ``{name: array}``."""
    tokens = Path(path).read_text().split("\n")
    out, i = {}, 0
    n_cells = None
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("CELL_DATA"):
            n_cells = int(line.split()[1])
        elif line.startswith("SCALARS") and n_cells is not None:
            name = line.split()[1]
            vals = [float(v) for v in tokens[i + 2:i + 2 + n_cells]]
            out[name] = np.asarray(vals)
            i += 1 + n_cells
        i += 1
    return out


def _columns(table) -> dict:
    cols = table.columns() if hasattr(table, "columns") and callable(table.columns) else dict(table)
    lengths = {len(v) for v in cols.values()}
    if len(lengths) > 1:
        raise ValueError("all CSV columns must have the same length")
    return cols


def _cell(v) -> str:
    if isinstance(v, (str, bytes)):
        return v if isinstance(v, str) else v.decode()
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _num(v)


def write_csv(table, path) -> Path:
    """Write a column table (a mapping or an object with ``columns()``) as CSV."""
    cols = _columns(table)
    path = Path(path)
    names = list(cols)
    n = len(next(iter(cols.values()))) if cols else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_cell(cols[k][i]) for k in names])
    return path


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv`; numeric columns become float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV file")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in raw])
        except ValueError:
            out[name] = raw
    return out


def format_table(table, digits: int = 5) -> str:
    """Plain-text rendering of a column table for terminal output."""
    cols = _columns(table)
    names = list(cols)

    def fmt(v):
        if isinstance(v, str):
            return v
        v = float(v)
        if math.isnan(v):
            return "-"
        return f"{v:.{digits}g}"

    body = [[fmt(v) for v in cols[k]] for k in names]
    widths = [max([len(k)] + [len(c) for c in col]) for k, col in zip(names, body)]
    lines = ["  ".join(k.rjust(w) for k, w in zip(names, widths))]
    n = len(body[0]) if body else 0
    for i in range(n):
        lines.append("  ".join(col[i].rjust(w) for col, w in zip(body, widths)))
    return "\n".join(lines)
