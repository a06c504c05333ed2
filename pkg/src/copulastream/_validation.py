"""Input validation shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, SchemaError
from .marginals import ColumnKind, parse_schema


def check_data_matrix(X, n_columns: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float array with NaN as the missing marker."""
    try:
        arr = np.asarray(X, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"data is not numeric: {exc}") from exc
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise SchemaError(f"expected a 2-D data matrix, got ndim={arr.ndim}")
    if np.isinf(arr).any():
        raise SchemaError("data contains infinite values; use NaN for missing entries")
    if n_columns is not None and arr.shape[1] != n_columns:
        raise SchemaError(f"data has {arr.shape[1]} columns, expected {n_columns}")
    return arr


def check_schema(schema, n_columns: int) -> list[ColumnKind]:
    if schema is None:
        raise ConfigError("a column schema is required (e.g. 'cont,ord5,bin')")
    kinds = parse_schema(schema)
    if len(kinds) != n_columns:
        raise SchemaError(f"schema declares {len(kinds)} columns, data has {n_columns}")
    return kinds


def check_batch_size(batch_size: int, p: int) -> int:
    batch_size = int(batch_size)
    if batch_size <= p:
        raise ConfigError(f"batch size {batch_size} must exceed the data dimension {p}")
    return batch_size


def split_batches(n_rows: int, batch_size: int) -> list[tuple[int, int]]:
    """Consecutive [start, stop) batch bounds covering the stream."""
    return [(s, min(s + batch_size, n_rows)) for s in range(0, n_rows, batch_size)]
