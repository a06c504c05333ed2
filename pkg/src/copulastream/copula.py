"""Copula correlation fitting: offline EM, minibatch EM, and online updates.

The online recursion follows the stochastic-approximation form: the expected
second-moment statistic is exponentially averaged across batches, and the
correlation parameter is the unit-diagonal projection of that running
statistic. Keeping the average in statistic space (rather than averaging the
projected parameter) is what makes the weighted closed form over past batch
moments hold exactly.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    CopulaStreamError,
    DataError,
    DomainError,
    NumericalError,
    SchemaError,
)
from .marginals import DEFAULT_WINDOW_SIZE, ColumnKind, MarginalModel
from .truncnorm import EStepResult, RowObservation, row_estep

DEFAULT_ONLINE_GAMMA = 0.5
DEFAULT_DECAY_C = 5.0
PD_EIGEN_FLOOR = 1e-8
SNAPSHOT_VERSION = 1

_REDUCE_BLOCK = 16


@dataclass(frozen=True)
class ConstantSchedule:
    """Constant step size, the default for streams with drifting correlation."""

    gamma: float = DEFAULT_ONLINE_GAMMA

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"constant step size must lie in (0, 1), got {self.gamma}")

    def __call__(self, t: int) -> float:
        return self.gamma


@dataclass(frozen=True)
class DecayingSchedule:
    """Step size c/(t+c); square-summable but not summable, as convergence requires."""

    c: float = DEFAULT_DECAY_C

    def __post_init__(self):
        if self.c <= 0:
            raise ConfigError(f"decay constant must be positive, got {self.c}")

    def __call__(self, t: int) -> float:
        return self.c / (t + self.c)


def scale_to_correlation(matrix: np.ndarray) -> np.ndarray:
    """Rescale a symmetric positive-diagonal matrix to unit diagonal."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=1e-8, rtol=0.0):
        raise DomainError("matrix is not symmetric")
    diag = np.diagonal(A)
    if np.any(diag <= 0):
        raise DomainError(f"non-positive diagonal entry {diag.min()!r}")
    d = 1.0 / np.sqrt(diag)
    C = 0.5 * (A + A.T) * np.outer(d, d)
    np.fill_diagonal(C, 1.0)
    return C


def ensure_positive_definite(C: np.ndarray, floor: float = PD_EIGEN_FLOOR) -> np.ndarray:
    """Shrink a correlation matrix toward the identity until it is safely PD."""
    if np.linalg.eigvalsh(C)[0] >= floor:
        return C
    eye = np.eye(C.shape[0])
    for lam in (1e-4, 1e-3, 1e-2, 1e-1):
        cand = (1.0 - lam) * C + lam * eye
        np.fill_diagonal(cand, 1.0)
        if np.linalg.eigvalsh(cand)[0] >= floor:
            return cand
    raise NumericalError(
        "could not restore positive definiteness by shrinkage",
        detail=f"min eigenvalue {np.linalg.eigvalsh(C)[0]:.3e}",
    )


class CopulaModel:
    """Correlation matrix plus one marginal model per column."""

    def __init__(self, kinds, window_size: int = DEFAULT_WINDOW_SIZE, sigma=None):
        self.kinds: list[ColumnKind] = list(kinds)
        if not self.kinds:
            raise SchemaError("model needs at least one column")
        self.window_size = int(window_size)
        self.marginals = [
            MarginalModel(kind, self.window_size, label=j) for j, kind in enumerate(self.kinds)
        ]
        if sigma is None:
            self.sigma = np.eye(self.p)
        else:
            self.sigma = np.array(sigma, dtype=float)
            self.validate_sigma()

    @property
    def p(self) -> int:
        return len(self.kinds)

    @property
    def is_fitted(self) -> bool:
        return all(m.is_fitted for m in self.marginals)

    def validate_sigma(self) -> None:
        s = self.sigma
        if s.shape != (self.p, self.p):
            raise DomainError(f"sigma shape {s.shape} does not match p={self.p}")
        if not np.allclose(s, s.T, atol=1e-8, rtol=0.0):
            raise DomainError("sigma is not symmetric")
        if not np.allclose(np.diagonal(s), 1.0, atol=1e-8):
            raise DomainError("sigma does not have unit diagonal")
        if np.linalg.eigvalsh(s)[0] <= 0:
            raise NumericalError(
                "sigma is not positive definite",
                detail=f"min eigenvalue {np.linalg.eigvalsh(s)[0]:.3e}",
            )

    def copy(self) -> "CopulaModel":
        dup = CopulaModel.__new__(CopulaModel)
        dup.kinds = list(self.kinds)
        dup.window_size = self.window_size
        dup.marginals = [m.copy() for m in self.marginals]
        dup.sigma = self.sigma.copy()
        return dup

    def update_windows(self, X: np.ndarray) -> None:
        """Push every observed value of the batch into its column window."""
        for j, marginal in enumerate(self.marginals):
            col = X[:, j]
            for v in col[~np.isnan(col)]:
                marginal.update(v)

    def batch_regions(self, X: np.ndarray):
        """Latent regions for every cell of a batch.

        Returns (lower, upper, missing) arrays of shape (n, p).
        """
        n = X.shape[0]
        lower = np.empty((n, self.p))
        upper = np.empty((n, self.p))
        missing = np.empty((n, self.p), dtype=bool)
        for j, marginal in enumerate(self.marginals):
            lo, hi, miss = _column_regions(marginal, X[:, j])
            lower[:, j] = lo
            upper[:, j] = hi
            missing[:, j] = miss
        return lower, upper, missing

    def row_observation(self, raw_row) -> RowObservation:
        lo, hi, miss = self.batch_regions(np.asarray(raw_row, dtype=float).reshape(1, -1))
        return RowObservation(lo[0], hi[0], miss[0])


def _column_regions(marginal: MarginalModel, col: np.ndarray):
    """Vectorized observation -> latent region map for one column."""
    from scipy.special import ndtri

    vals = np.asarray(col, dtype=float)
    miss = np.isnan(vals)
    lower = np.full(vals.shape, -np.inf)
    upper = np.full(vals.shape, np.inf)
    if miss.all():
        return lower, upper, miss
    w = marginal.sorted_window()
    n = len(w)
    v = vals[~miss]
    kind = marginal.kind
    if kind.is_continuous:
        counts = np.searchsorted(w, v, side="right")
        q = np.clip(counts, 1, n) / (n + 1.0)
        z = ndtri(q)
        lower[~miss] = z
        upper[~miss] = z
    else:
        if np.any(v != np.floor(v)) or np.any(v < kind.first_level) or np.any(v > kind.last_level):
            bad = v[(v != np.floor(v)) | (v < kind.first_level) | (v > kind.last_level)][0]
            raise DomainError(
                f"column {marginal.label}: value {bad!r} is not a valid level in "
                f"[{kind.first_level}, {kind.last_level}]"
            )
        q_lo = 0.5 / (n + 1.0)
        q_hi = (n + 0.5) / (n + 1.0)
        c_lo = np.searchsorted(w, v, side="left")
        c_hi = np.searchsorted(w, v, side="right")
        lower[~miss] = ndtri(np.clip(c_lo / (n + 1.0), q_lo, q_hi))
        upper[~miss] = ndtri(np.clip(c_hi / (n + 1.0), q_lo, q_hi))
    return lower, upper, miss


# -- batch E-step with a worker-count-independent reduction -------------------


def _block_moment_sum(sigma, lower, upper, missing, offset):
    from .truncnorm import MAX_ORDINAL_SWEEPS, ORDINAL_SWEEP_TOL, _estep_core

    total = np.zeros_like(sigma)
    for i in range(lower.shape[0]):
        try:
            _, ezz = _estep_core(
                sigma, lower[i], upper[i], missing[i], ORDINAL_SWEEP_TOL, MAX_ORDINAL_SWEEPS
            )
        except CopulaStreamError as exc:
            raise NumericalError(f"E-step failed at row {offset + i}: {exc}") from exc
        total += ezz
    return total


def batch_expected_moments(sigma, lower, upper, missing, workers: int = 1) -> np.ndarray:
    """Mean of E[z z^T | x_O] over the rows of a batch.

    Rows are summed in fixed-size blocks and block sums are combined in index
    order, so the result is bit-identical for any worker count.
    """
    n = lower.shape[0]
    blocks = [(s, min(s + _REDUCE_BLOCK, n)) for s in range(0, n, _REDUCE_BLOCK)]
    if workers <= 1 or len(blocks) == 1:
        partials = [
            _block_moment_sum(sigma, lower[s:e], upper[s:e], missing[s:e], s) for s, e in blocks
        ]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_block_moment_sum, sigma, lower[s:e], upper[s:e], missing[s:e], s)
                for s, e in blocks
            ]
            partials = [f.result() for f in futures]
    total = np.zeros_like(sigma)
    for part in partials:
        total += part
    return total / n


def mstep_offline(batch_moments) -> np.ndarray:
    """Correlation-scaled mean of per-row second-moment matrices."""
    mats = [m.ezz if isinstance(m, EStepResult) else np.asarray(m, dtype=float) for m in batch_moments]
    if not mats:
        raise DomainError("mstep_offline needs at least one moment matrix")
    total = np.zeros_like(mats[0])
    for s in range(0, len(mats), _REDUCE_BLOCK):
        block = np.zeros_like(total)
        for m in mats[s : s + _REDUCE_BLOCK]:
            block += m
        total += block
    mean = total / len(mats)
    min_eig = float(np.linalg.eigvalsh(mean)[0])
    if min_eig < 1e-10:
        raise NumericalError(
            "mean second-moment matrix is not positive definite",
            detail=f"smallest eigenvalue {min_eig:.3e}",
        )
    return scale_to_correlation(mean)


# -- online EM ----------------------------------------------------------------


@dataclass
class OnlineEmState:
    """Model plus the running pre-projection statistic of the online EM."""

    model: CopulaModel
    schedule: Callable[[int], float] = field(default_factory=ConstantSchedule)
    t: int = 0
    stat: np.ndarray | None = None

    def __post_init__(self):
        if self.stat is None:
            self.stat = self.model.sigma.copy()

    def copy(self) -> "OnlineEmState":
        return OnlineEmState(self.model.copy(), self.schedule, self.t, self.stat.copy())


def online_update(
    state: OnlineEmState,
    X: np.ndarray,
    *,
    update_marginals: bool = True,
    workers: int = 1,
) -> OnlineEmState:
    """Advance the online EM by one batch (mutates and returns ``state``).

    The batch must have more rows than columns. Marginal windows absorb the
    batch's observed values before the E-step unless ``update_marginals`` is
    false (minibatch mode, where marginals were fitted offline).
    """
    X = np.asarray(X, dtype=float)
    model = state.model
    if X.ndim != 2 or X.shape[1] != model.p:
        raise DomainError(f"batch shape {X.shape} does not match p={model.p}")
    n = X.shape[0]
    if n <= model.p:
        raise ConfigError(f"batch size {n} must exceed the data dimension {model.p}")
    gamma = float(state.schedule(state.t + 1))
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"step size at t={state.t + 1} is {gamma}, outside (0, 1]")
    if update_marginals:
        model.update_windows(X)
    lower, upper, missing = model.batch_regions(X)
    moments = batch_expected_moments(model.sigma, lower, upper, missing, workers=workers)
    state.stat = (1.0 - gamma) * state.stat + gamma * moments
    model.sigma = ensure_positive_definite(scale_to_correlation(state.stat))
    state.t += 1
    return state


# -- offline and minibatch fitting ---------------------------------------------


def _fit_marginals_offline(X: np.ndarray, kinds) -> CopulaModel:
    n = X.shape[0]
    model = CopulaModel(kinds, window_size=max(n, 1))
    for j, marginal in enumerate(model.marginals):
        col = X[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            raise SchemaError(f"column {j} has no observed values")
        marginal.extend(observed)
    return model


def fit_offline(
    X: np.ndarray,
    kinds,
    *,
    max_iter: int = 50,
    tol: float = 1e-3,
    workers: int = 1,
) -> CopulaModel:
    """Full EM fit: marginals from all data once, then iterate the M-step.

    Stops when the relative Frobenius change of the correlation falls below
    ``tol`` or after ``max_iter`` iterations.
    """
    X = np.asarray(X, dtype=float)
    kinds = list(kinds)
    if X.ndim != 2 or X.shape[1] != len(kinds):
        raise SchemaError(f"data shape {X.shape} does not match {len(kinds)} declared columns")
    if X.shape[0] <= len(kinds):
        raise ConfigError(f"need more rows than columns, got shape {X.shape}")
    model = _fit_marginals_offline(X, kinds)
    lower, upper, missing = model.batch_regions(X)
    sigma = model.sigma
    n_iter = 0
    for _ in range(max_iter):
        mean = batch_expected_moments(sigma, lower, upper, missing, workers=workers)
        min_eig = float(np.linalg.eigvalsh(mean)[0])
        if min_eig < 1e-10:
            raise NumericalError(
                "mean second-moment matrix is not positive definite",
                detail=f"smallest eigenvalue {min_eig:.3e}",
            )
        new_sigma = ensure_positive_definite(scale_to_correlation(mean))
        n_iter += 1
        change = np.linalg.norm(new_sigma - sigma) / max(np.linalg.norm(sigma), 1e-30)
        sigma = new_sigma
        if change < tol:
            break
    model.sigma = sigma
    model.n_iter_ = n_iter
    return model


def fit_minibatch(
    X: np.ndarray,
    kinds,
    *,
    batch_size: int = 100,
    schedule: Callable[[int], float] | None = None,
    workers: int = 1,
) -> CopulaModel:
    """Minibatch EM: offline marginals, one online pass over consecutive batches."""
    X = np.asarray(X, dtype=float)
    kinds = list(kinds)
    p = len(kinds)
    if batch_size <= p:
        raise ConfigError(f"batch_size {batch_size} must exceed the data dimension {p}")
    if X.shape[0] < batch_size:
        raise ConfigError(f"data has {X.shape[0]} rows, fewer than batch_size {batch_size}")
    model = _fit_marginals_offline(X, kinds)
    state = OnlineEmState(model, schedule or DecayingSchedule())
    for start in range(0, X.shape[0], batch_size):
        batch = X[start : start + batch_size]
        if batch.shape[0] <= p:
            warnings.warn(
                f"skipping trailing batch of {batch.shape[0]} rows (need > {p})",
                stacklevel=2,
            )
            break
        online_update(state, batch, update_marginals=False, workers=workers)
    return state.model


# -- imputation -----------------------------------------------------------------


def impute_row(model: CopulaModel, raw_row) -> tuple[np.ndarray, bool]:
    """Fill the missing entries of one row with the copula conditional mean.

    Returns the completed row and a flag marking rows that were fully missing
    (those fall back to the latent-mean imputation in every coordinate).
    """
    raw = np.asarray(raw_row, dtype=float)
    if raw.shape != (model.p,):
        raise DomainError(f"row has shape {raw.shape}, expected ({model.p},)")
    miss = np.isnan(raw)
    if not miss.any():
        return raw.copy(), False
    out = raw.copy()
    if miss.all():
        for j, marginal in enumerate(model.marginals):
            out[j] = marginal.from_latent(0.0)
        return out, True
    row = model.row_observation(raw)
    res = row_estep(row, model.sigma)
    for j in np.flatnonzero(miss):
        out[j] = model.marginals[j].from_latent(res.ez[j])
    return out, False


def impute_matrix(model: CopulaModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Impute every row of ``X``; returns (completed matrix, fully-missing mask)."""
    X = np.asarray(X, dtype=float)
    out = np.empty_like(X)
    fully_missing = np.zeros(X.shape[0], dtype=bool)
    lower, upper, missing = model.batch_regions(X)
    for i in range(X.shape[0]):
        miss = missing[i]
        if not miss.any():
            out[i] = X[i]
            continue
        if miss.all():
            out[i] = [m.from_latent(0.0) for m in model.marginals]
            fully_missing[i] = True
            continue
        res = row_estep(RowObservation(lower[i], upper[i], miss), model.sigma)
        out[i] = X[i]
        for j in np.flatnonzero(miss):
            out[i, j] = model.marginals[j].from_latent(res.ez[j])
    return out, fully_missing


# -- snapshots -------------------------------------------------------------------


def model_to_payload(model: CopulaModel) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "p": model.p,
        "window_size": model.window_size,
        "kinds": [
            {"name": k.name, "levels": k.levels, "first_level": k.first_level}
            for k in model.kinds
        ],
        "sigma": [[float(v) for v in row] for row in model.sigma],
        "windows": [m.window for m in model.marginals],
        "observed_counts": [m.observed_count for m in model.marginals],
    }


def model_from_payload(payload: dict) -> CopulaModel:
    version = payload.get("version")
    if version != SNAPSHOT_VERSION:
        raise DataError(f"unsupported snapshot version {version!r}")
    kinds = [
        ColumnKind(k["name"], k["levels"], k["first_level"]) for k in payload["kinds"]
    ]
    model = CopulaModel(kinds, window_size=payload["window_size"])
    model.sigma = np.array(payload["sigma"], dtype=float)
    model.validate_sigma()
    for marginal, window, count in zip(
        model.marginals, payload["windows"], payload["observed_counts"]
    ):
        for v in window:
            marginal.update(v)
        marginal.observed_count = int(count)
    return model


def save_model(model: CopulaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_payload(model), fh)


def load_model(path) -> CopulaModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_payload(json.load(fh))
