"""Static result artifacts: legacy ASCII VTK fields, CSV tables, JSON reports.

All writers format numbers with explicit repr-stable conversions so a fixed
input produces byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "write_mesh_vtk",
    "write_field_vtk",
    "write_table_csv",
    "write_json_report",
    "certificate_payload",
    "field_summary",
]

_VTK_CELL_TYPES = {"line2": 3, "tri3": 5, "quad4": 9}


def _fmt(value):
    return f"{float(value):.17g}"


def _points_block(mesh):
    coords = np.asarray(mesh.coords, dtype=float)
    padded = np.zeros((coords.shape[0], 3))
    padded[:, : coords.shape[1]] = coords
    lines = [f"POINTS {len(padded)} double"]
    lines += [" ".join(_fmt(v) for v in row) for row in padded]
    return lines


def _cells_block(mesh):
    connect = np.asarray(mesh.connect)
    nele, nen = connect.shape
    lines = [f"CELLS {nele} {nele * (nen + 1)}"]
    lines += [f"{nen} " + " ".join(str(i) for i in row) for row in connect]
    lines.append(f"CELL_TYPES {nele}")
    lines += [str(_VTK_CELL_TYPES[mesh.kind])] * nele
    return lines


def _vtk_header(title):
    return ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]


def write_mesh_vtk(path, mesh, title="mesh"):
    """Legacy ASCII VTK file holding only the mesh geometry."""
    if mesh.kind not in _VTK_CELL_TYPES:
        raise ConfigurationError(f"no VTK cell type for {mesh.kind!r}")
    lines = _vtk_header(title) + _points_block(mesh) + _cells_block(mesh)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_field_vtk(path, mesh, point_data, title="fields"):
    """Legacy ASCII VTK file with nodal scalars/vectors.

    ``point_data`` maps names to (n,) scalar or (n, dim) vector arrays;
    vectors are padded to three components as the format requires.
    """
    if mesh.kind not in _VTK_CELL_TYPES:
        raise ConfigurationError(f"no VTK cell type for {mesh.kind!r}")
    lines = _vtk_header(title) + _points_block(mesh) + _cells_block(mesh)
    lines.append(f"POINT_DATA {mesh.nnodes}")
    for name, values in point_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape == (mesh.nnodes,):
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [_fmt(v) for v in values]
        elif values.ndim == 2 and values.shape[0] == mesh.nnodes:
            padded = np.zeros((mesh.nnodes, 3))
            padded[:, : values.shape[1]] = values
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(_fmt(v) for v in row) for row in padded]
        else:
            raise ConfigurationError(
                f"point data {name!r} has shape {values.shape}, "
                f"expected ({mesh.nnodes},) or ({mesh.nnodes}, dim)"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_table_csv(path, header, rows):
    """Plain CSV with a fixed numeric format (blank for missing cells)."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if cell is None or (isinstance(cell, float) and np.isnan(cell)):
                cells.append("")
            elif isinstance(cell, str):
                cells.append(cell)
            else:
                cells.append(_fmt(cell))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_json_report(path, payload):
    """Deterministic JSON: sorted keys, two-space indent, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def certificate_payload(certificate):
    """A certificate's dict form, tolerant of plain dicts."""
    if certificate is None:
        return None
    if hasattr(certificate, "certificate_json"):
        return json.loads(certificate.certificate_json())
    if hasattr(certificate, "as_dict"):
        return certificate.as_dict()
    if isinstance(certificate, dict):
        return dict(certificate)
    return {"repr": repr(certificate)}


def field_summary(field):
    """Ranges of one nodal solution snapshot."""
    return {
        "time": float(field.time),
        "c_min": float(field.c.min()),
        "c_max": float(field.c.max()),
        "q_min": float(field.q.min()),
        "q_max": float(field.q.max()),
    }
