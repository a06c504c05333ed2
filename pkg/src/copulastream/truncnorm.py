"""Truncated-normal moments and conditional latent moments for one row.

Observed continuous coordinates pin the latent vector to a point, observed
ordinal coordinates confine it to an interval, and missing coordinates leave
it free. ``row_estep`` approximates E[z | x_O] and E[z z^T | x_O] with a
coordinatewise scheme: each interval coordinate is treated as a univariate
truncated normal conditioned on the current estimates of the other observed
coordinates, swept to a fixed point; missing coordinates then receive the
Gaussian conditional mean and covariance, with interval-coordinate variance
propagated through the regression map.

``truncmvn_oracle`` is a seeded rejection sampler for the same moments, used
only to validate the approximation in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, OracleInfeasibleError
from .marginals import LatentRegion

ORDINAL_SWEEP_TOL = 1e-4
MAX_ORDINAL_SWEEPS = 50
MASS_FLOOR = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INF = math.inf
_exp = math.exp
_erfc = math.erfc
_sqrt = math.sqrt


def truncnorm_moments(mu, sigma2, lower, upper):
    """Mean and variance of N(mu, sigma2) truncated to [lower, upper].

    A point region (lower == upper) returns (lower, 0); an unbounded region
    returns (mu, sigma2). When the truncation mass underflows ``MASS_FLOOR``
    the boundary nearest to mu is returned with zero variance.
    """
    if sigma2 <= 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if lower > upper:
        raise DomainError(f"empty truncation region [{lower}, {upper}]")
    if lower == upper:
        if lower == -_INF or lower == _INF:
            raise DomainError("point region at infinity")
        return float(lower), 0.0
    lo_inf = lower == -_INF
    hi_inf = upper == _INF
    if lo_inf and hi_inf:
        return float(mu), float(sigma2)

    s = _sqrt(sigma2)
    a = -_INF if lo_inf else (lower - mu) / s
    b = _INF if hi_inf else (upper - mu) / s
    if a > 0.0:
        # complementary form keeps precision when both bounds sit in the upper tail
        mass = 0.5 * _erfc(a * _INV_SQRT2)
        if not hi_inf:
            mass -= 0.5 * _erfc(b * _INV_SQRT2)
    else:
        mass = 0.5 * _erfc(-b * _INV_SQRT2) - 0.5 * _erfc(-a * _INV_SQRT2)
    if mass < MASS_FLOOR:
        if lo_inf:
            return float(upper), 0.0
        if hi_inf:
            return float(lower), 0.0
        nearest = lower if abs(mu - lower) <= abs(upper - mu) else upper
        return float(nearest), 0.0

    if lo_inf:
        pa = 0.0
        apa = 0.0
    else:
        pa = _exp(-0.5 * a * a) * _INV_SQRT_2PI
        apa = a * pa
    if hi_inf:
        pb = 0.0
        bpb = 0.0
    else:
        pb = _exp(-0.5 * b * b) * _INV_SQRT_2PI
        bpb = b * pb
    ratio = (pa - pb) / mass
    mean = mu + s * ratio
    var = sigma2 * (1.0 + (apa - bpb) / mass - ratio * ratio)
    if var < 0.0:
        var = 0.0
    if not lo_inf and mean < lower:
        mean = lower
    elif not hi_inf and mean > upper:
        mean = upper
    return float(mean), float(var)


@dataclass
class RowObservation:
    """Latent regions of one data row, split into observed and missing parts."""

    lower: np.ndarray
    upper: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        if not (self.lower.shape == self.upper.shape == self.missing.shape):
            raise DomainError("lower, upper and missing must have equal length")

    @classmethod
    def from_regions(cls, regions: list[LatentRegion]) -> "RowObservation":
        return cls(
            np.array([r.lower for r in regions]),
            np.array([r.upper for r in regions]),
            np.array([r.missing for r in regions]),
        )

    def __len__(self) -> int:
        return self.lower.shape[0]

    @property
    def observed_set(self) -> np.ndarray:
        return np.flatnonzero(~self.missing)

    @property
    def missing_set(self) -> np.ndarray:
        return np.flatnonzero(self.missing)


@dataclass
class EStepResult:
    """Conditional latent moments E[z | x_O] and E[z z^T | x_O]."""

    ez: np.ndarray
    ezz: np.ndarray


def _submatrix(mat: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.take(np.take(mat, rows, 0), cols, 1)


def _inv_spd(mat: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix, with a ridge fallback."""
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.inv(mat + 1e-6 * np.eye(mat.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "observed-block correlation matrix is singular",
            detail=f"condition estimate {np.linalg.cond(mat):.3e}",
        ) from exc


def _estep_core_numpy(
    sigma: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    miss: np.ndarray,
    tol: float,
    max_sweeps: int,
    init_ordinal: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    p = sigma.shape[0]
    obs = np.flatnonzero(~miss)
    if obs.size == 0:
        return np.zeros(p), sigma.copy()
    mis = np.flatnonzero(miss)

    lo = lower[obs]
    hi = upper[obs]
    if np.isnan(lo).any() or np.isnan(hi).any():
        raise DomainError("non-finite latent region for an observed coordinate")
    point = lo == hi
    if np.isinf(lo[point]).any():
        raise DomainError("point region at infinity for an observed coordinate")
    interval = np.flatnonzero(~point)

    z = np.where(point, lo, 0.0)
    var = np.zeros(obs.size)
    all_continuous = interval.size == 0
    if all_continuous and mis.size == 0:
        ez = np.zeros(p)
        ez[obs] = z
        return ez, np.outer(ez, ez)

    J = _inv_spd(_submatrix(sigma, obs, obs))

    v_dd = None
    if interval.size:
        if init_ordinal is not None:
            z[interval] = init_ordinal[obs[interval]]
            for i in interval:
                var[i] = truncnorm_moments(0.0, 1.0, lo[i], hi[i])[1]
        else:
            for i in interval:
                z[i], var[i] = truncnorm_moments(0.0, 1.0, lo[i], hi[i])
        jz = J @ z
        jdiag = np.diagonal(J)
        for _ in range(max_sweeps):
            max_delta = 0.0
            for i in interval:
                s2 = 1.0 / jdiag[i]
                m, v = truncnorm_moments(z[i] - jz[i] * s2, s2, lo[i], hi[i])
                var[i] = v
                d = m - z[i]
                if d != 0.0:
                    jz += d * J[:, i]
                    z[i] = m
                    if d < 0.0:
                        d = -d
                    if d > max_delta:
                        max_delta = d
            if max_delta < tol:
                break
        # Covariance among interval coordinates: the conditional covariance
        # given the point coordinates, shrunk on both sides by the ratio of
        # truncated to untruncated variance, with the diagonal restored to the
        # truncated variances. PSD since truncation never inflates variance.
        if interval.size == 1:
            v_dd = var[interval].reshape(1, 1)
        else:
            c_dd = _inv_spd(_submatrix(J, interval, interval))
            c_dd = 0.5 * (c_dd + c_dd.T)
            ratio = var[interval] / np.diagonal(c_dd)
            v_dd = c_dd * np.outer(ratio, ratio)
            np.fill_diagonal(v_dd, var[interval])

    ez = np.zeros(p)
    ez[obs] = z
    cov = np.zeros((p, p))
    if interval.size:
        ord_idx = obs[interval]
        cov[np.ix_(ord_idx, ord_idx)] = v_dd
    if mis.size:
        sigma_mo = _submatrix(sigma, mis, obs)
        A = sigma_mo @ J
        ez[mis] = A @ z
        c_mm = _submatrix(sigma, mis, mis) - A @ sigma_mo.T
        if interval.size:
            A_d = A[:, interval]
            cross = A_d @ v_dd
            c_mm = c_mm + cross @ A_d.T
            cov[np.ix_(mis, ord_idx)] = cross
            cov[np.ix_(ord_idx, mis)] = cross.T
        cov[np.ix_(mis, mis)] = 0.5 * (c_mm + c_mm.T)
    ezz = cov + np.outer(ez, ez)
    return ez, ezz


_EMPTY_INIT = np.empty(0)


def _estep_core(
    sigma: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    miss: np.ndarray,
    tol: float,
    max_sweeps: int,
    init_ordinal: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Compiled-kernel E-step with a ridge-based fallback on singular blocks."""
    from ._kernels import _estep_row_kernel

    p = sigma.shape[0]
    ez = np.empty(p)
    ezz = np.empty((p, p))
    use_init = init_ordinal is not None
    init = init_ordinal if use_init else _EMPTY_INIT
    try:
        _estep_row_kernel(sigma, lower, upper, miss, tol, max_sweeps, init, use_init, ez, ezz)
        return ez, ezz
    except np.linalg.LinAlgError:
        return _estep_core_numpy(
            sigma, lower, upper, miss, tol, max_sweeps, init_ordinal=init_ordinal
        )
    except ValueError as exc:
        raise DomainError(str(exc)) from exc


def row_estep(
    row: RowObservation,
    sigma: np.ndarray,
    *,
    tol: float = ORDINAL_SWEEP_TOL,
    max_sweeps: int = MAX_ORDINAL_SWEEPS,
    init_ordinal: np.ndarray | None = None,
) -> EStepResult:
    """Approximate conditional latent moments of one row under correlation ``sigma``.

    ``init_ordinal`` optionally seeds the interval-coordinate estimates (full
    length-p vector; only interval positions are read), which is used to check
    fixed-point stability.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if len(row) != p:
        raise DomainError(f"row has {len(row)} regions for a {p}-dimensional model")
    init = None if init_ordinal is None else np.asarray(init_ordinal, dtype=float)
    ez, ezz = _estep_core(
        sigma, row.lower, row.upper, row.missing, tol, max_sweeps, init_ordinal=init
    )
    return EStepResult(ez, ezz)


_ORACLE_CHUNK = 1 << 16
_ORACLE_MIN_PROPOSALS = 2_000_000
_ORACLE_RATE_FLOOR = 1e-6


def truncmvn_oracle(regions, sigma, draws: int, seed: int) -> EStepResult:
    """Rejection-sampling estimate of the moments computed by ``row_estep``.

    Point coordinates are conditioned on exactly; the remaining coordinates
    are drawn from the implied Gaussian conditional and accepted when every
    interval constraint holds. Deterministic for a fixed seed. Raises
    ``OracleInfeasibleError`` when the acceptance rate falls below 1e-6.
    """
    if draws <= 0:
        raise DomainError("draws must be positive")
    if isinstance(regions, RowObservation):
        row = regions
    else:
        row = RowObservation.from_regions(list(regions))
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if len(row) != p:
        raise DomainError("region count does not match sigma dimension")

    point = (~row.missing) & (row.lower == row.upper)
    fixed = np.flatnonzero(point)
    free = np.flatnonzero(~point)
    z_fixed = row.lower[fixed]

    ez = np.zeros(p)
    ezz = np.zeros((p, p))
    ez[fixed] = z_fixed
    ezz[np.ix_(fixed, fixed)] = np.outer(z_fixed, z_fixed)
    if free.size == 0:
        return EStepResult(ez, ezz)

    if fixed.size:
        inv_ff = _inv_spd(_submatrix(sigma, fixed, fixed))
        B = _submatrix(sigma, free, fixed) @ inv_ff
        mu = B @ z_fixed
        C = _submatrix(sigma, free, free) - B @ _submatrix(sigma, fixed, free)
        C = 0.5 * (C + C.T)
    else:
        mu = np.zeros(free.size)
        C = _submatrix(sigma, free, free)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(C + 1e-12 * np.eye(free.size))

    lo = row.lower[free]
    hi = row.upper[free]
    rng = np.random.default_rng(seed)
    n_acc = 0
    n_prop = 0
    sum_z = np.zeros(free.size)
    sum_zz = np.zeros((free.size, free.size))
    while n_acc < draws:
        x = rng.standard_normal((_ORACLE_CHUNK, free.size)) @ L.T + mu
        n_prop += _ORACLE_CHUNK
        ok = np.all((x > lo) & (x <= hi), axis=1)
        acc = x[ok]
        take = min(acc.shape[0], draws - n_acc)
        if take:
            acc = acc[:take]
            sum_z += acc.sum(axis=0)
            sum_zz += acc.T @ acc
            n_acc += take
        if n_prop >= _ORACLE_MIN_PROPOSALS and n_acc / n_prop < _ORACLE_RATE_FLOOR:
            raise OracleInfeasibleError(
                f"acceptance rate {n_acc / n_prop:.2e} below {_ORACLE_RATE_FLOOR}"
            )

    mean_free = sum_z / draws
    second_free = sum_zz / draws
    ez[free] = mean_free
    ezz[np.ix_(free, free)] = second_free
    if fixed.size:
        cross = np.outer(z_fixed, mean_free)
        ezz[np.ix_(fixed, free)] = cross
        ezz[np.ix_(free, fixed)] = cross.T
    return EStepResult(ez, ezz)
