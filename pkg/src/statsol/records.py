"""On-disk formats: binary ensemble records, CSV tables, JSON manifests.

Binary ensemble record (little endian)::

    8 bytes   magic b"STSLENS1"
    u64       n_cells
    f64 f64   domain a, b
    u8        boundary (0 outflow, 1 periodic)
    f64       time
    u64       M (members)
    M  x f64  weights
    M*n x f64 member values, row-major
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .ensemble import EnsembleSummary
from .fvm_core import Boundary, GridSpec

MAGIC = b"STSLENS1"
_HEADER = struct.Struct("<QddBdQ")
_BOUNDARY_CODES = {Boundary.OUTFLOW: 0, Boundary.PERIODIC: 1}


def ensemble_to_bytes(ens: EnsembleSummary) -> bytes:
    g = ens.grid
    head = _HEADER.pack(g.n_cells, g.domain[0], g.domain[1], _BOUNDARY_CODES[g.boundary], ens.time, ens.size)
    return (MAGIC + head + ens.weights.astype("<f8").tobytes()
            + np.ascontiguousarray(ens.values).astype("<f8").tobytes())


def ensemble_from_bytes(blob: bytes) -> EnsembleSummary:
    if blob[:8] != MAGIC:
        raise ValueError("not an ensemble record")
    n, a, b, bcode, time, m = _HEADER.unpack_from(blob, 8)
    off = 8 + _HEADER.size
    expected = off + 8 * m + 8 * m * n
    if len(blob) != expected:
        raise ValueError(f"record length {len(blob)} != expected {expected}")
    weights = np.frombuffer(blob, "<f8", m, off).astype(np.float64)
    values = np.frombuffer(blob, "<f8", m * n, off + 8 * m).astype(np.float64).reshape(m, n)
    boundary = {v: k for k, v in _BOUNDARY_CODES.items()}[bcode]
    ens = EnsembleSummary(GridSpec(n, (a, b), boundary), time, values)
    # weights were normalised on write; keep them bit-exact
    object.__setattr__(ens, "weights", weights)
    weights.setflags(write=False)
    return ens


def write_ensemble(ens: EnsembleSummary, path) -> None:
    Path(path).write_bytes(ensemble_to_bytes(ens))


def read_ensemble(path) -> EnsembleSummary:
    return ensemble_from_bytes(Path(path).read_bytes())


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError("table is not rectangular")
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def emit_csv(table, path) -> None:
    """Write ``table`` (dict of equal-length columns, or (header, rows)) as CSV.

    Floats use 17 significant digits so they parse back bit-identically.
    """
    if isinstance(table, dict):
        header = list(table)
        cols = [list(table[k]) for k in header]
        if len({len(c) for c in cols}) > 1:
            raise ValueError("table is not rectangular")
        rows = list(zip(*cols))
    else:
        header, rows = table
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))


def write_ensemble_csv(ens: EnsembleSummary, path) -> None:
    """One row per cell: x, then one column per member."""
    table = {"x": ens.grid.midpoints}
    for k in range(ens.size):
        table[f"member_{k}"] = ens.values[k]
    emit_csv(table, path)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
