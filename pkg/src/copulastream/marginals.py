"""Per-column empirical marginals over a running observation window.

Each column keeps the ``k`` most recent observed (non-missing) values and
exposes the two monotone maps of the copula model: observation -> latent
region, and latent value -> observation. The empirical CDF is scaled by
``n/(n+1)`` so every latent boundary stays finite.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError, MisuseError, NotFittedError, SchemaError

DEFAULT_WINDOW_SIZE = 200

_NEG_INF = float("-inf")
_POS_INF = float("inf")


@dataclass(frozen=True)
class ColumnKind:
    """Declared type of a column: continuous, or ordinal with a fixed level set.

    Binary columns are ordinal columns with two levels (0 and 1 by default).
    Ordinal levels are the consecutive integers ``first_level, ...,
    first_level + levels - 1``.
    """

    name: str
    levels: int | None = None
    first_level: int = 0

    @classmethod
    def continuous(cls) -> "ColumnKind":
        return cls("continuous")

    @classmethod
    def ordinal(cls, levels: int, first_level: int = 1) -> "ColumnKind":
        if levels < 2:
            raise DomainError(f"ordinal columns need at least 2 levels, got {levels}")
        return cls("ordinal", levels, first_level)

    @classmethod
    def binary(cls) -> "ColumnKind":
        return cls.ordinal(2, first_level=0)

    @property
    def is_continuous(self) -> bool:
        return self.name == "continuous"

    @property
    def is_ordinal(self) -> bool:
        return self.name == "ordinal"

    @property
    def is_binary(self) -> bool:
        return self.is_ordinal and self.levels == 2

    @property
    def last_level(self) -> int:
        if not self.is_ordinal:
            raise MisuseError("continuous columns have no levels")
        return self.first_level + self.levels - 1

    def level_values(self) -> np.ndarray:
        """All admissible level values in increasing order."""
        if not self.is_ordinal:
            raise MisuseError("continuous columns have no levels")
        return np.arange(self.first_level, self.first_level + self.levels)

    def group(self) -> str:
        """Scoring bucket: 'continuous', 'binary', or 'ordinal'."""
        if self.is_continuous:
            return "continuous"
        return "binary" if self.is_binary else "ordinal"

    def spec_token(self) -> str:
        """Token used in CSV schema directives ('cont', 'bin', 'ordN')."""
        if self.is_continuous:
            return "cont"
        if self.is_binary and self.first_level == 0:
            return "bin"
        return f"ord{self.levels}"


def parse_schema(spec) -> list[ColumnKind]:
    """Parse a schema given as 'cont,ord5,bin' or a list of such tokens."""
    if isinstance(spec, str):
        tokens = [t.strip() for t in spec.split(",")]
    else:
        tokens = list(spec)
    kinds = []
    for i, tok in enumerate(tokens):
        if isinstance(tok, ColumnKind):
            kinds.append(tok)
            continue
        t = str(tok).strip().lower()
        if t in ("cont", "continuous", "c"):
            kinds.append(ColumnKind.continuous())
        elif t in ("bin", "binary", "b"):
            kinds.append(ColumnKind.binary())
        elif t.startswith("ord"):
            try:
                kinds.append(ColumnKind.ordinal(int(t[3:])))
            except (ValueError, DomainError) as exc:
                raise SchemaError(f"column {i}: bad ordinal token {tok!r}") from exc
        else:
            raise SchemaError(f"column {i}: unknown kind token {tok!r}")
    if not kinds:
        raise SchemaError("empty schema")
    return kinds


@dataclass(frozen=True)
class LatentRegion:
    """Preimage of one observation under the marginal transform.

    A point for an observed continuous value, an interval for an observed
    ordinal level, and the whole real line (with ``missing=True``) for a
    missing entry.
    """

    lower: float
    upper: float
    missing: bool = False

    @property
    def is_point(self) -> bool:
        return not self.missing and self.lower == self.upper

    @classmethod
    def missing_region(cls) -> "LatentRegion":
        return cls(_NEG_INF, _POS_INF, missing=True)


class MarginalModel:
    """Running-window empirical marginal distribution for one column.

    Parameters
    ----------
    kind : ColumnKind
        Declared column type.
    window_size : int
        Capacity ``k`` of the observation window. Only observed values are
        stored; the oldest value is evicted once the window is full.
    label : str or int, optional
        Column name used in error messages.
    """

    def __init__(self, kind: ColumnKind, window_size: int = DEFAULT_WINDOW_SIZE, label=None):
        if window_size < 1:
            raise DomainError(f"window_size must be positive, got {window_size}")
        self.kind = kind
        self.window_size = int(window_size)
        self.label = label
        self._window: deque[float] = deque(maxlen=self.window_size)
        self.observed_count = 0
        self._sorted: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._window)

    @property
    def is_fitted(self) -> bool:
        return len(self._window) > 0

    @property
    def window(self) -> list[float]:
        """Window contents, oldest first."""
        return list(self._window)

    def copy(self) -> "MarginalModel":
        dup = MarginalModel(self.kind, self.window_size, self.label)
        dup._window.extend(self._window)
        dup.observed_count = self.observed_count
        return dup

    def _name(self) -> str:
        return f"column {self.label}" if self.label is not None else "column"

    def update(self, value) -> None:
        """Append one observed value, evicting the oldest if the window is full."""
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            raise DomainError(f"{self._name()}: cannot store non-finite value {value!r}")
        if self.kind.is_ordinal:
            if v != int(v) or not (self.kind.first_level <= v <= self.kind.last_level):
                raise DomainError(
                    f"{self._name()}: value {value!r} is not a valid level in "
                    f"[{self.kind.first_level}, {self.kind.last_level}]"
                )
        self._window.append(v)
        self.observed_count += 1
        self._sorted = None

    def extend(self, values) -> None:
        for v in values:
            self.update(v)

    def sorted_window(self) -> np.ndarray:
        if self._sorted is None:
            if not self._window:
                raise NotFittedError(f"{self._name()}: empty window")
            self._sorted = np.sort(np.asarray(self._window, dtype=float))
        return self._sorted

    # -- observation -> latent ------------------------------------------------

    def _boundary_quantile(self, count: int, n: int) -> float:
        # Scaled ECDF value clamped so Phi^-1 stays finite on both sides.
        return min(max(count / (n + 1.0), 0.5 / (n + 1.0)), (n + 0.5) / (n + 1.0))

    def to_latent_region(self, value) -> LatentRegion:
        """Map one observation (or NaN for missing) to its latent region."""
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return LatentRegion.missing_region()
        v = float(value)
        if math.isnan(v):
            return LatentRegion.missing_region()
        w = self.sorted_window()
        n = len(w)
        if self.kind.is_continuous:
            count = int(np.searchsorted(w, v, side="right"))
            q = min(max(count, 1), n) / (n + 1.0)
            z = float(ndtri(q))
            return LatentRegion(z, z)
        if v != int(v) or not (self.kind.first_level <= v <= self.kind.last_level):
            raise DomainError(
                f"{self._name()}: observed value {value!r} is not a valid level"
            )
        c_lo = int(np.searchsorted(w, v, side="left"))
        c_hi = int(np.searchsorted(w, v, side="right"))
        lo = float(ndtri(self._boundary_quantile(c_lo, n)))
        hi = float(ndtri(self._boundary_quantile(c_hi, n)))
        return LatentRegion(lo, hi)

    # -- latent -> observation ------------------------------------------------

    def from_latent(self, z: float) -> float:
        """Empirical quantile of the window at probability Phi(z).

        Uses the lower (order-statistic) quantile so ordinal outputs are
        always stored levels.
        """
        w = self.sorted_window()
        n = len(w)
        q = float(ndtr(z))
        idx = int(math.ceil(q * n))
        idx = min(max(idx, 1), n)
        return float(w[idx - 1])

    def from_latent_vec(self, z: np.ndarray) -> np.ndarray:
        w = self.sorted_window()
        n = len(w)
        idx = np.ceil(ndtr(np.asarray(z, dtype=float)) * n).astype(int)
        np.clip(idx, 1, n, out=idx)
        return w[idx - 1]

    def ordinal_cutpoints(self) -> np.ndarray:
        """Latent thresholds between consecutive levels (length levels - 1)."""
        if not self.kind.is_ordinal:
            raise MisuseError(f"{self._name()}: cutpoints are only defined for ordinal columns")
        w = self.sorted_window()
        n = len(w)
        cuts = np.empty(self.kind.levels - 1)
        for i, lev in enumerate(self.kind.level_values()[:-1]):
            c = int(np.searchsorted(w, lev, side="right"))
            cuts[i] = ndtri(self._boundary_quantile(c, n))
        return cuts
