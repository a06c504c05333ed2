"""Imputation scoring: SMAE against median imputation, plus MAE and RMSE.

Only masked entries with known ground truth are scored. The SMAE baseline is
per-column median imputation, with medians taken from the observed (unmasked)
entries of the reference data so the baseline is realizable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_GROUPS = ("continuous", "ordinal", "binary")


@dataclass
class ScoreReport:
    """Per-kind SMAE plus overall MAE/RMSE over the scored entries."""

    smae: dict = field(default_factory=dict)
    mae: float = float("nan")
    rmse: float = float("nan")
    n_scored: int = 0
    scored_per_kind: dict = field(default_factory=dict)
    excluded_columns: dict = field(default_factory=dict)

    def to_keyvalues(self) -> str:
        lines = []
        for group in _GROUPS:
            if group in self.smae:
                lines.append(f"smae_{group}={self.smae[group]!r}")
        lines.append(f"mae={self.mae!r}")
        lines.append(f"rmse={self.rmse!r}")
        lines.append(f"n_scored={self.n_scored}")
        for group in _GROUPS:
            if group in self.scored_per_kind:
                lines.append(f"n_scored_{group}={self.scored_per_kind[group]}")
            if self.excluded_columns.get(group):
                lines.append(f"excluded_columns_{group}={self.excluded_columns[group]}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        rows = ["metric\tvalue"]
        for group in _GROUPS:
            if group in self.smae:
                rows.append(f"SMAE {group}\t{self.smae[group]:.6f}")
        rows.append(f"MAE\t{self.mae:.6f}")
        rows.append(f"RMSE\t{self.rmse:.6f}")
        rows.append(f"scored entries\t{self.n_scored}")
        return "\n".join(rows) + "\n"


def mae_rmse(imputed, truth, mask) -> tuple[float, float]:
    """Mean absolute and root mean squared error over masked entries."""
    imputed = np.asarray(imputed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not (imputed.shape == truth.shape == mask.shape):
        raise DomainError("imputed, truth and mask shapes must agree")
    if not mask.any():
        raise DomainError("no masked entries to score")
    err = imputed[mask] - truth[mask]
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2)))


def smae(imputed, truth, mask, column_kinds, train_reference) -> dict:
    """Per-kind scaled MAE: method MAE over the MAE of median imputation.

    Medians come from the non-missing entries of ``train_reference`` (any row
    count, same columns). Columns whose median baseline has zero error are
    excluded from the average (their count is reported by ``score_report``).
    Kinds with no masked entries are absent from the result.
    """
    imputed = np.asarray(imputed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    reference = np.asarray(train_reference, dtype=float)
    if not (imputed.shape == truth.shape == mask.shape):
        raise DomainError("imputed, truth and mask shapes must agree")
    if reference.ndim != 2 or reference.shape[1] != imputed.shape[1]:
        raise DomainError("reference must have the same columns as the scored data")

    ratios: dict[str, list[float]] = {g: [] for g in _GROUPS}
    excluded = {g: 0 for g in _GROUPS}
    for j, kind in enumerate(column_kinds):
        scored = mask[:, j]
        if not scored.any():
            continue
        observed = reference[:, j]
        observed = observed[~np.isnan(observed)]
        if observed.size == 0:
            excluded[kind.group()] += 1
            continue
        median = np.median(observed)
        method_mae = np.mean(np.abs(imputed[scored, j] - truth[scored, j]))
        baseline_mae = np.mean(np.abs(median - truth[scored, j]))
        if baseline_mae == 0.0:
            excluded[kind.group()] += 1
            continue
        ratios[kind.group()].append(method_mae / baseline_mae)
    return {
        "smae": {g: float(np.mean(r)) for g, r in ratios.items() if r},
        "excluded": {g: c for g, c in excluded.items() if c},
    }


def score_report(imputed, truth, mask, column_kinds, train_reference=None) -> ScoreReport:
    """Full report: per-kind SMAE plus MAE/RMSE over all masked entries."""
    if train_reference is None:
        train_reference = np.where(np.asarray(mask, dtype=bool), np.nan, truth)
    parts = smae(imputed, truth, mask, column_kinds, train_reference)
    mae, rmse = mae_rmse(imputed, truth, mask)
    mask = np.asarray(mask, dtype=bool)
    per_kind = {}
    for group in _GROUPS:
        cols = [j for j, k in enumerate(column_kinds) if k.group() == group]
        if cols:
            count = int(mask[:, cols].sum())
            if count:
                per_kind[group] = count
    return ScoreReport(
        smae=parts["smae"],
        mae=mae,
        rmse=rmse,
        n_scored=int(mask.sum()),
        scored_per_kind=per_kind,
        excluded_columns=parts["excluded"],
    )
