"""Synthetic mixed-type copula streams with planted correlation changes.

Reproduces the benchmark recipe: continuous columns follow an exponential
distribution with rate 1/3, ordinal and binary columns come from random
latent cutpoints shared across segments (the marginals never change, only
the correlation does), and entries are masked completely at random or by a
value-dependent mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .copula import scale_to_correlation
from .errors import ConfigError, DomainError
from .marginals import ColumnKind

EXP_RATE = 1.0 / 3.0
CUTPOINT_RANGE = 1.5
# Binary columns use a narrower central range: a single cut drawn on the full
# range yields badly imbalanced columns that no imputer can beat the median on.
BINARY_CUTPOINT_RANGE = 0.75

# Value-dependent masking probabilities: larger values go missing less often.
MNAR_HIGH, MNAR_MID, MNAR_LOW = 0.2, 0.4, 0.6


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; defaults mirror the 15-dimensional benchmark."""

    p_cont: int = 5
    p_ord: int = 5
    p_bin: int = 5
    ordinal_levels: int = 5
    n_per_segment: int = 2000
    n_segments: int = 3
    missing_ratio: float = 0.4
    mechanism: str = "mcar"
    seed: int = 0

    def __post_init__(self):
        for name in ("p_cont", "p_ord", "p_bin", "ordinal_levels", "n_per_segment", "n_segments"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ConfigError(f"missing_ratio must lie in [0, 1), got {self.missing_ratio}")
        if self.mechanism not in ("mcar", "mnar"):
            raise ConfigError(f"mechanism must be 'mcar' or 'mnar', got {self.mechanism!r}")

    @property
    def p(self) -> int:
        return self.p_cont + self.p_ord + self.p_bin

    @property
    def n_rows(self) -> int:
        return self.n_per_segment * self.n_segments

    @property
    def change_points(self) -> tuple[int, ...]:
        """Row indices at which a new correlation segment begins."""
        return tuple(self.n_per_segment * k for k in range(1, self.n_segments))

    def kinds(self) -> list[ColumnKind]:
        return (
            [ColumnKind.continuous()] * self.p_cont
            + [ColumnKind.ordinal(self.ordinal_levels)] * self.p_ord
            + [ColumnKind.binary()] * self.p_bin
        )


def random_correlation(p: int, seed) -> np.ndarray:
    """Random correlation matrix: scale G G^T + 0.1 I for Gaussian G."""
    if p < 1:
        raise DomainError(f"dimension must be positive, got {p}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    G = rng.standard_normal((p, p))
    return scale_to_correlation(G @ G.T + 0.1 * np.eye(p))


@dataclass
class SynthStream:
    """Generated stream: masked data, complete truth, mask, and segment labels."""

    data: np.ndarray
    truth: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    kinds: list[ColumnKind]
    sigmas: list[np.ndarray] = field(default_factory=list)
    config: SynthConfig | None = None


def _continuous_from_latent(z: np.ndarray) -> np.ndarray:
    # Exponential quantile transform of Phi(z); log1p keeps the upper tail exact.
    return -np.log1p(-ndtr(z)) / EXP_RATE


def generate_stream(cfg: SynthConfig) -> SynthStream:
    """Generate the masked stream together with ground truth and segment labels."""
    kinds = cfg.kinds()
    p = cfg.p
    root = np.random.SeedSequence(cfg.seed)
    ss_cuts, ss_mask, *ss_segments = root.spawn(2 + cfg.n_segments)

    rng_cuts = np.random.default_rng(ss_cuts)
    cutpoints = []
    for kind in kinds:
        if kind.is_continuous:
            cutpoints.append(None)
        else:
            span = BINARY_CUTPOINT_RANGE if kind.is_binary else CUTPOINT_RANGE
            cuts = np.sort(rng_cuts.uniform(-span, span, kind.levels - 1))
            cutpoints.append(cuts)

    truth = np.empty((cfg.n_rows, p))
    labels = np.empty(cfg.n_rows, dtype=int)
    sigmas = []
    for seg, ss in enumerate(ss_segments):
        rng = np.random.default_rng(ss)
        sigma = random_correlation(p, rng)
        sigmas.append(sigma)
        L = np.linalg.cholesky(sigma)
        Z = rng.standard_normal((cfg.n_per_segment, p)) @ L.T
        start = seg * cfg.n_per_segment
        stop = start + cfg.n_per_segment
        labels[start:stop] = seg
        for j, kind in enumerate(kinds):
            if kind.is_continuous:
                truth[start:stop, j] = _continuous_from_latent(Z[:, j])
            else:
                levels = kind.level_values().astype(float)
                truth[start:stop, j] = levels[np.searchsorted(cutpoints[j], Z[:, j], side="left")]

    rng_mask = np.random.default_rng(ss_mask)
    if cfg.mechanism == "mcar":
        mask = rng_mask.random((cfg.n_rows, p)) < cfg.missing_ratio
    else:
        mask = mask_mnar(truth, kinds, rng_mask)

    data = truth.copy()
    data[mask] = np.nan
    return SynthStream(data, truth, mask, labels, kinds, sigmas, cfg)


def mask_mnar(data: np.ndarray, kinds, seed) -> np.ndarray:
    """Value-dependent mask: entries with smaller values go missing more often.

    Continuous columns: above the 75% quantile 20%, between quantiles 40%,
    below the 25% quantile 60%. Ordinal columns: above the middle level 20%,
    at it 40%, below it 60% (for five levels: {4,5}, {3}, {1,2}; for binary:
    1 at 20%, 0 at 60%). A constant column degenerates to the middle band.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    prob = np.full((n, p), MNAR_MID)
    for j, kind in enumerate(kinds):
        col = data[:, j]
        if kind.is_continuous:
            q25, q75 = np.quantile(col, [0.25, 0.75])
            prob[col > q75, j] = MNAR_HIGH
            prob[col < q25, j] = MNAR_LOW
        else:
            mid = (kind.first_level + kind.last_level) / 2.0
            prob[col > mid, j] = MNAR_HIGH
            prob[col < mid, j] = MNAR_LOW
            prob[col == mid, j] = MNAR_MID
    return rng.random((n, p)) < prob
