"""Correlation change point detection with a Monte Carlo test and online FDR.

The deviation statistic compares the correlation before and after a data
batch; its null distribution is simulated by re-running the identical model
update on synthetic batches drawn from the pre-batch model with the observed
missingness pattern. Decisions across the stream are gated by a LORD-style
alpha-investing rule so the false discovery rate stays controlled.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .copula import ConstantSchedule, CopulaModel, OnlineEmState, online_update
from .errors import ConfigError, CopulaStreamError, DomainError, NumericalError
from .marginals import MarginalModel

EIGEN_FLOOR = 1e-10

# Spend sequence gamma_k proportional to 1/k^2, normalized to sum to one.
_SPEND_SCALE = 6.0 / math.pi**2


def correlation_deviation(sigma_old: np.ndarray, sigma_new: np.ndarray) -> float:
    """Frobenius deviation || S^{-1/2} S~ S^{-1/2} - I ||_F between correlations."""
    A = np.asarray(sigma_old, dtype=float)
    B = np.asarray(sigma_new, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"incompatible correlation shapes {A.shape} and {B.shape}")
    if np.array_equal(A, B):
        return 0.0
    eigvals, Q = np.linalg.eigh(A)
    if eigvals[0] < EIGEN_FLOOR:
        raise NumericalError(
            "correlation matrix is numerically singular",
            detail=f"min eigenvalue {eigvals[0]:.3e} below floor {EIGEN_FLOOR}",
        )
    inv_sqrt = (Q / np.sqrt(eigvals)) @ Q.T
    M = inv_sqrt @ B @ inv_sqrt
    M[np.diag_indices_from(M)] -= 1.0
    return float(np.linalg.norm(M))


# -- sampling from a fitted model ------------------------------------------------


def _sample_column(marginal: MarginalModel, z: np.ndarray) -> np.ndarray:
    if marginal.kind.is_continuous:
        return marginal.from_latent_vec(z)
    cuts = marginal.ordinal_cutpoints()
    levels = marginal.kind.level_values().astype(float)
    return levels[np.searchsorted(cuts, z, side="left")]


def sample_gc_batch(model: CopulaModel, missing_mask: np.ndarray, rng) -> np.ndarray:
    """Draw rows from the fitted copula and blank out the given missing pattern."""
    mask = np.asarray(missing_mask, dtype=bool)
    n, p = mask.shape
    if p != model.p:
        raise DomainError(f"mask has {p} columns, model has {model.p}")
    L = np.linalg.cholesky(model.sigma)
    Z = rng.standard_normal((n, p)) @ L.T
    X = np.empty((n, p))
    for j, marginal in enumerate(model.marginals):
        X[:, j] = _sample_column(marginal, Z[:, j])
    X[mask] = np.nan
    return X


def sample_gc_row(model: CopulaModel, missing_pattern, rng) -> np.ndarray:
    """Draw one row, masked at ``missing_pattern`` (an index set or boolean mask)."""
    arr = np.asarray(missing_pattern)
    if arr.dtype == np.bool_:
        pattern = arr.astype(bool)
    else:
        pattern = np.zeros(model.p, dtype=bool)
        if arr.size:
            pattern[arr.astype(int)] = True
    return sample_gc_batch(model, pattern.reshape(1, -1), rng)[0]


# -- Monte Carlo test --------------------------------------------------------------


@dataclass
class CpdResult:
    """Outcome of one Monte Carlo change point test."""

    statistic: float
    mc_statistics: np.ndarray
    p_value: float
    decision: bool
    biased: bool = False


def _as_state(model_or_state) -> OnlineEmState:
    if isinstance(model_or_state, OnlineEmState):
        return model_or_state
    return OnlineEmState(model_or_state, ConstantSchedule())


def _batch_slices(n: int, p: int, batch_size: int | None) -> list[tuple[int, int]]:
    if batch_size is None:
        return [(0, n)]
    if batch_size <= p:
        raise ConfigError(f"batch_size {batch_size} must exceed the data dimension {p}")
    slices = []
    for s in range(0, n, batch_size):
        e = min(s + batch_size, n)
        if e - s <= p:
            raise ConfigError(
                f"trailing batch of {e - s} rows cannot update a {p}-dimensional model"
            )
        slices.append((s, e))
    return slices


def _apply_updates(state: OnlineEmState, X, slices, update_marginals: bool) -> OnlineEmState:
    for s, e in slices:
        online_update(state, X[s:e], update_marginals=update_marginals)
    return state


def _mc_replicate(index, state0, mask, slices, seed, update_marginals):
    rng = np.random.default_rng(seed)
    synthetic = sample_gc_batch(state0.model, mask, rng)
    replica = state0.copy()
    try:
        _apply_updates(replica, synthetic, slices, update_marginals)
    except CopulaStreamError as exc:
        raise NumericalError(f"null replicate {index}: {exc}") from exc
    return correlation_deviation(state0.model.sigma, replica.model.sigma)


def mc_cpd_test(
    model_t0,
    new_data,
    B: int = 99,
    *,
    seed=0,
    alpha: float = 0.05,
    batch_size: int | None = None,
    biased: bool = False,
    update_marginals: bool = True,
    workers: int = 1,
) -> CpdResult:
    """Monte Carlo test for a correlation change across ``new_data``.

    The observed statistic comes from running the production update from the
    time-t0 model over the new rows. Each of the B replicates draws a
    same-shaped batch from the t0 model with the observed missingness pattern
    and runs the identical update. The empirical p-value is
    (#{s <= s_j} + 1)/(B + 1); with ``biased=True`` the add-one is dropped,
    which can return 0 and effectively tests at level ~1/(B+1).
    """
    if B < 1:
        raise ConfigError(f"need at least one Monte Carlo sample, got B={B}")
    state0 = _as_state(model_t0)
    X = np.asarray(new_data, dtype=float)
    p = state0.model.p
    if X.ndim != 2 or X.shape[1] != p:
        raise DomainError(f"new data shape {X.shape} does not match p={p}")
    if X.shape[0] <= p:
        raise ConfigError(f"need more than p={p} new rows, got {X.shape[0]}")
    slices = _batch_slices(X.shape[0], p, batch_size)

    sigma_t0 = state0.model.sigma.copy()
    real = _apply_updates(state0.copy(), X, slices, update_marginals)
    statistic = correlation_deviation(sigma_t0, real.model.sigma)

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(B)
    mask = np.isnan(X)
    if workers <= 1:
        stats = [
            _mc_replicate(j, state0, mask, slices, child, update_marginals)
            for j, child in enumerate(children)
        ]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_mc_replicate, j, state0, mask, slices, child, update_marginals)
                for j, child in enumerate(children)
            ]
            stats = [f.result() for f in futures]
    mc_statistics = np.asarray(stats)
    count = int(np.sum(statistic <= mc_statistics))
    p_value = count / (B + 1) if biased else (count + 1) / (B + 1)
    return CpdResult(statistic, mc_statistics, p_value, bool(p_value < alpha), biased)


# -- online FDR (LORD-style alpha investing) ---------------------------------------


def _spend(k: int) -> float:
    return _SPEND_SCALE / (k * k)


@dataclass
class FdrState:
    """Decision history and parameters of the LORD-style investing rule.

    The rule starts with wealth ``wealth_fraction * alpha``, spends it along
    the 1/k^2 sequence, and earns back alpha-scaled spend streams at each
    rejection, so the emitted level depends only on past decisions.
    """

    alpha: float = 0.05
    wealth_fraction: float = 0.5
    decisions: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.wealth_fraction < 1.0:
            raise ConfigError(
                f"wealth_fraction must lie in (0, 1), got {self.wealth_fraction}"
            )

    def record(self, decision: bool) -> None:
        self.decisions.append(bool(decision))

    @property
    def rejection_times(self) -> list[int]:
        return [i + 1 for i, d in enumerate(self.decisions) if d]


def fdr_alpha(state: FdrState) -> float:
    """Significance level for the next test given the decision history."""
    t = len(state.decisions) + 1
    w0 = state.wealth_fraction * state.alpha
    level = w0 * _spend(t)
    taus = state.rejection_times
    if taus:
        level += (state.alpha - w0) * _spend(t - taus[0])
        for tau in taus[1:]:
            level += state.alpha * _spend(t - tau)
    return level


# -- sequential detection loop ------------------------------------------------------


@dataclass
class DetectionRecord:
    """Per-batch outcome of the online detection loop."""

    t: int
    statistic: float
    p_value: float
    alpha_t: float
    decision: bool
    suppressed: bool = False
    low_alpha_warning: bool = False


def online_cpd_loop(
    batches: Iterable[np.ndarray],
    model_or_state,
    *,
    B: int = 99,
    alpha: float = 0.05,
    burn_in: int = 0,
    warmup: int = 1,
    biased: bool = False,
    wealth_fraction: float = 0.5,
    seed=0,
    update_marginals: bool = True,
    workers: int = 1,
) -> Iterator[DetectionRecord]:
    """Run the model update plus FDR-gated Monte Carlo test over a batch stream.

    The first ``warmup`` batches only update the model (a cold-start model has
    no marginals to sample from). After any detection, ``burn_in`` further
    batches update without testing so the estimate can settle on the new
    correlation. Suppressed batches record a non-rejection in the FDR history
    and report NaN p-value and level.
    """
    state = _as_state(model_or_state).copy()
    fdr = FdrState(alpha, wealth_fraction)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    burn_remaining = 0
    min_p = 1.0 / (B + 1)
    for t, batch in enumerate(batches, 1):
        child = root.spawn(1)[0]
        pre_sigma = state.model.sigma.copy()
        if t <= warmup or burn_remaining > 0:
            online_update(state, batch, update_marginals=update_marginals, workers=workers)
            statistic = correlation_deviation(pre_sigma, state.model.sigma)
            if burn_remaining > 0:
                burn_remaining -= 1
            fdr.record(False)
            yield DetectionRecord(t, statistic, math.nan, math.nan, False, suppressed=True)
            continue
        alpha_t = fdr_alpha(fdr)
        low_alpha = alpha_t < min_p and not biased
        if low_alpha:
            warnings.warn(
                f"t={t}: allocated level {alpha_t:.3e} is below the smallest "
                f"achievable p-value {min_p:.3e}; the test cannot reject",
                stacklevel=2,
            )
        result = mc_cpd_test(
            state,
            batch,
            B,
            seed=child,
            alpha=alpha_t,
            biased=biased,
            update_marginals=update_marginals,
            workers=workers,
        )
        online_update(state, batch, update_marginals=update_marginals, workers=workers)
        fdr.record(result.decision)
        if result.decision and burn_in > 0:
            burn_remaining = burn_in
        yield DetectionRecord(
            t, result.statistic, result.p_value, alpha_t, result.decision, False, low_alpha
        )
