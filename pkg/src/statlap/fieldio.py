"""Serialization: the JSON field container, operator export and CSV output.

One JSON document holds a grid block and any number of named fields:

    {"grid": {"dims": m, "points": [...], "periods": [...], "origin": [...]},
     "fields": {name: {"rank": r, "symmetries": [[...], ...],
                       "values": <flat row-major array>}}}

values are either a plain JSON list of floats or, when binary=True, an
object {"encoding": "base64-float64-le", "data": "..."} carrying the same
64-bit floats in identical (node-major, C) ordering.

Operators are exported as coordinate triples with explicit row/col layout
tags.  All floating-point text output uses shortest round-trip formatting,
and every file is written atomically (temp file + rename).
"""

from __future__ import annotations

import base64
import json
import os
import tempfile

import numpy as np

from .errors import ShapeMismatch
from .geometry import ConnectionField, Grid, TensorField


def _fmt(v) -> str:
    return repr(float(v))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_values(arr: np.ndarray, binary: bool):
    flat = np.ascontiguousarray(arr, dtype=np.float64).ravel()
    if binary:
        return {"encoding": "base64-float64-le",
                "data": base64.b64encode(flat.astype("<f8").tobytes()).decode("ascii")}
    return [float(v) for v in flat]


def _decode_values(obj) -> np.ndarray:
    if isinstance(obj, dict):
        if obj.get("encoding") != "base64-float64-le":
            raise ShapeMismatch(f"unknown value encoding {obj.get('encoding')!r}")
        return np.frombuffer(base64.b64decode(obj["data"]), dtype="<f8").astype(np.float64)
    return np.asarray(obj, dtype=np.float64)


def grid_to_dict(grid: Grid) -> dict:
    return {"dims": grid.dim, "points": list(grid.points),
            "periods": [float(p) for p in grid.periods],
            "origin": [float(o) for o in grid.origin]}


def grid_from_dict(block: dict) -> Grid:
    grid = Grid(points=tuple(block["points"]), periods=tuple(block["periods"]),
                origin=tuple(block.get("origin", ())))
    if "dims" in block and int(block["dims"]) != grid.dim:
        raise ShapeMismatch("grid dims entry disagrees with the points list")
    return grid


def fields_to_document(grid: Grid, fields: dict, binary: bool = False) -> dict:
    """Build the container document from a mapping name -> field/array."""
    out = {}
    for name, field in fields.items():
        if isinstance(field, TensorField):
            values, rank, sym = field.values, field.rank, field.symmetries
        elif isinstance(field, ConnectionField):
            values, rank, sym = field.coeffs, 3, ((1, 2),)
        else:
            values = np.asarray(field, dtype=np.float64)
            rank, sym = values.ndim - 1, ()
        expected = (grid.n_nodes,) + (grid.dim,) * rank
        if values.shape != expected:
            raise ShapeMismatch(f"field {name!r}: expected shape {expected}, got {values.shape}")
        out[name] = {"rank": rank, "symmetries": [list(g) for g in sym],
                     "values": _encode_values(values, binary)}
    return {"grid": grid_to_dict(grid), "fields": out}


def save_fields(path, grid: Grid, fields: dict, binary: bool = False) -> None:
    doc = fields_to_document(grid, fields, binary=binary)
    atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def load_fields(path):
    """Read a container; returns (grid, {name: TensorField})."""
    with open(path) as handle:
        doc = json.load(handle)
    grid = grid_from_dict(doc["grid"])
    fields = {}
    for name, entry in doc.get("fields", {}).items():
        rank = int(entry["rank"])
        values = _decode_values(entry["values"]).reshape(
            (grid.n_nodes,) + (grid.dim,) * rank)
        sym = tuple(tuple(g) for g in entry.get("symmetries", []))
        fields[name] = TensorField.create(grid, values, symmetries=sym)
    return grid, fields


def operators_to_document(grid: Grid, operators: dict) -> dict:
    """Coordinate-triple export of sparse operators.

    Row/col layouts: vector indices are node*dim + component; (1,1) indices
    are node*dim^2 + derivative_slot*dim + component, node-major throughout.
    """
    out = {}
    for name, op in operators.items():
        matrix = op.matrix if hasattr(op, "matrix") else op
        coo = matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        out[name] = {
            "shape": list(matrix.shape),
            "tag": getattr(op, "tag", name),
            "rows": [int(r) for r in coo.row[order]],
            "cols": [int(c) for c in coo.col[order]],
            "values": [float(v) for v in coo.data[order]],
        }
    return {"grid": grid_to_dict(grid), "operators": out}


def save_operators(path, grid: Grid, operators: dict) -> None:
    atomic_write_text(path, json.dumps(operators_to_document(grid, operators),
                                       sort_keys=True) + "\n")


def load_operators(path):
    import scipy.sparse as sp

    with open(path) as handle:
        doc = json.load(handle)
    grid = grid_from_dict(doc["grid"])
    out = {}
    for name, entry in doc.get("operators", {}).items():
        mat = sp.coo_matrix(
            (np.asarray(entry["values"], dtype=np.float64),
             (np.asarray(entry["rows"]), np.asarray(entry["cols"]))),
            shape=tuple(entry["shape"])).tocsr()
        out[name] = mat
    return grid, out


def write_csv_matrix(path, matrix: np.ndarray, row_ids, col_ids, corner="id") -> None:
    """Dense matrix as CSV with id headers and round-trip float formatting."""
    matrix = np.asarray(matrix)
    lines = [",".join([corner] + [str(c) for c in col_ids])]
    for rid, row in zip(row_ids, matrix):
        lines.append(",".join([str(rid)] + [_fmt(v) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_csv_spectrum(path, eigenvalues) -> None:
    lines = ["index,eigenvalue"]
    for i, lam in enumerate(eigenvalues):
        lines.append(f"{i},{_fmt(lam)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_samples_jsonl(path):
    """Samples file: one JSON object {"id": ..., "value": ...} per line."""
    ids, values = [], []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            ids.append(str(obj["id"]))
            values.append(float(obj["value"]))
    return ids, values
