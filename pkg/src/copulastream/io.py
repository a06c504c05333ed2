"""CSV interchange with directive headers.

Files start with comment directives: ``#config: hash=<h> seed=<s>`` echoes the
run configuration, and ``#kind: cont,ord5,bin,...`` declares column kinds.
Missing values are empty cells. Floats are written with ``repr`` so parsing
the file back reproduces the exact values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from .errors import DataError, SchemaError
from .marginals import ColumnKind, parse_schema

CONFIG_PREFIX = "#config:"
KIND_PREFIX = "#kind:"


def config_hash(params: dict) -> str:
    """Short stable hash of the result-relevant run configuration."""
    canonical = json.dumps(params, sort_keys=True, default=str)
    return hashlib.sha1(canonical.encode()).hexdigest()[:12]


def config_line(params: dict, seed) -> str:
    return f"{CONFIG_PREFIX} hash={config_hash(params)} seed={seed}"


def format_cell(value: float) -> str:
    v = float(value)
    if math.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_matrix(path, X, *, directives=(), kinds=None, column_names=None) -> None:
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if column_names is None:
        column_names = [f"c{j}" for j in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in directives:
            fh.write(line + "\n")
        if kinds is not None:
            fh.write(f"{KIND_PREFIX} " + ",".join(k.spec_token() for k in kinds) + "\n")
        writer = csv.writer(fh)
        writer.writerow(column_names)
        for i in range(n):
            writer.writerow([format_cell(v) for v in X[i]])


def read_matrix(path) -> tuple[np.ndarray, list[ColumnKind] | None, list[str]]:
    """Parse a matrix CSV; returns (data with NaN for missing, kinds, names)."""
    kinds = None
    names: list[str] | None = None
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if line.startswith(KIND_PREFIX):
                try:
                    kinds = parse_schema(line[len(KIND_PREFIX):].strip())
                except SchemaError as exc:
                    raise DataError(str(exc), line=lineno) from exc
                continue
            if line.startswith("#"):
                continue
            cells = next(csv.reader([line]))
            if names is None:
                names = cells
                continue
            if len(cells) != len(names):
                raise DataError(
                    f"expected {len(names)} cells, found {len(cells)}", line=lineno
                )
            try:
                rows.append([float(c) if c.strip() != "" else math.nan for c in cells])
            except ValueError as exc:
                raise DataError(f"bad numeric cell: {exc}", line=lineno) from exc
    if names is None:
        raise DataError(f"{path}: no header row found")
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    if kinds is not None and len(kinds) != len(names):
        raise DataError(f"{path}: #kind declares {len(kinds)} columns, header has {len(names)}")
    return data, kinds, names


def write_table(path, names, rows, *, directives=()) -> None:
    """Write a small report table (values already formatted as strings)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in directives:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow(row)
