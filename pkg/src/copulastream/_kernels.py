"""Compiled inner loop of the row E-step.

Mirrors the reference implementation in ``truncnorm._estep_core_numpy``; the
wrapper there falls back to the reference path if the compiled kernel hits a
singular observed block (the reference path applies a diagonal ridge).
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_MASS_FLOOR = 1e-12


@njit(cache=True)
def _tn_moments(mu, s2, lo, hi):
    # mean/variance of N(mu, s2) on [lo, hi]; assumes s2 > 0 and lo <= hi
    if lo == hi:
        return lo, 0.0
    lo_inf = lo == -np.inf
    hi_inf = hi == np.inf
    if lo_inf and hi_inf:
        return mu, s2
    s = math.sqrt(s2)
    a = -np.inf if lo_inf else (lo - mu) / s
    b = np.inf if hi_inf else (hi - mu) / s
    if a > 0.0:
        mass = 0.5 * math.erfc(a * _INV_SQRT2)
        if not hi_inf:
            mass -= 0.5 * math.erfc(b * _INV_SQRT2)
    else:
        mass = 0.5 * math.erfc(-b * _INV_SQRT2) - 0.5 * math.erfc(-a * _INV_SQRT2)
    if mass < _MASS_FLOOR:
        if lo_inf:
            return hi, 0.0
        if hi_inf:
            return lo, 0.0
        if abs(mu - lo) <= abs(hi - mu):
            return lo, 0.0
        return hi, 0.0
    pa = 0.0
    apa = 0.0
    if not lo_inf:
        pa = math.exp(-0.5 * a * a) * _INV_SQRT_2PI
        apa = a * pa
    pb = 0.0
    bpb = 0.0
    if not hi_inf:
        pb = math.exp(-0.5 * b * b) * _INV_SQRT_2PI
        bpb = b * pb
    ratio = (pa - pb) / mass
    mean = mu + s * ratio
    var = s2 * (1.0 + (apa - bpb) / mass - ratio * ratio)
    if var < 0.0:
        var = 0.0
    if not lo_inf and mean < lo:
        mean = lo
    elif not hi_inf and mean > hi:
        mean = hi
    return mean, var


@njit(cache=True)
def _estep_row_kernel(sigma, lo_row, up_row, miss_row, tol, max_sweeps, init_vals, use_init, ez, ezz):
    p = sigma.shape[0]
    n_obs = 0
    for j in range(p):
        if not miss_row[j]:
            n_obs += 1
    if n_obs == 0:
        for i in range(p):
            ez[i] = 0.0
            for j in range(p):
                ezz[i, j] = sigma[i, j]
        return

    n_mis = p - n_obs
    obs = np.empty(n_obs, np.int64)
    mis = np.empty(n_mis, np.int64)
    a = 0
    b = 0
    for j in range(p):
        if miss_row[j]:
            mis[b] = j
            b += 1
        else:
            obs[a] = j
            a += 1

    lo = np.empty(n_obs)
    hi = np.empty(n_obs)
    for i in range(n_obs):
        lo[i] = lo_row[obs[i]]
        hi[i] = up_row[obs[i]]
        if np.isnan(lo[i]) or np.isnan(hi[i]):
            raise ValueError("non-finite latent region for an observed coordinate")

    n_int = 0
    for i in range(n_obs):
        if lo[i] != hi[i]:
            n_int += 1
        elif np.isinf(lo[i]):
            raise ValueError("point region at infinity for an observed coordinate")
    interval = np.empty(n_int, np.int64)
    c = 0
    for i in range(n_obs):
        if lo[i] != hi[i]:
            interval[c] = i
            c += 1

    z = np.empty(n_obs)
    var = np.zeros(n_obs)
    for i in range(n_obs):
        z[i] = lo[i] if lo[i] == hi[i] else 0.0

    for i in range(p):
        ez[i] = 0.0

    if n_int == 0 and n_mis == 0:
        for i in range(n_obs):
            ez[obs[i]] = z[i]
        for i in range(p):
            for j in range(p):
                ezz[i, j] = ez[i] * ez[j]
        return

    S_oo = np.empty((n_obs, n_obs))
    for i in range(n_obs):
        for j in range(n_obs):
            S_oo[i, j] = sigma[obs[i], obs[j]]
    J = np.linalg.inv(S_oo)

    v_dd = np.zeros((n_int, n_int))
    if n_int > 0:
        for c in range(n_int):
            i = interval[c]
            if use_init:
                z[i] = init_vals[obs[i]]
                var[i] = _tn_moments(0.0, 1.0, lo[i], hi[i])[1]
            else:
                z[i], var[i] = _tn_moments(0.0, 1.0, lo[i], hi[i])
        jz = J @ z
        for _ in range(max_sweeps):
            max_delta = 0.0
            for c in range(n_int):
                i = interval[c]
                s2 = 1.0 / J[i, i]
                m, v = _tn_moments(z[i] - jz[i] * s2, s2, lo[i], hi[i])
                var[i] = v
                d = m - z[i]
                if d != 0.0:
                    for r in range(n_obs):
                        jz[r] += d * J[r, i]
                    z[i] = m
                    if d < 0.0:
                        d = -d
                    if d > max_delta:
                        max_delta = d
            if max_delta < tol:
                break
        # interval-block covariance: conditional covariance shrunk on both
        # sides by truncated/untruncated variance ratios, diagonal restored
        if n_int == 1:
            v_dd[0, 0] = var[interval[0]]
        else:
            J_dd = np.empty((n_int, n_int))
            for r in range(n_int):
                for s in range(n_int):
                    J_dd[r, s] = J[interval[r], interval[s]]
            c_dd = np.linalg.inv(J_dd)
            # exact symmetry: LU-based inverses drift in the last bits
            for r in range(n_int):
                for s in range(r):
                    m = 0.5 * (c_dd[r, s] + c_dd[s, r])
                    c_dd[r, s] = m
                    c_dd[s, r] = m
            ratio = np.empty(n_int)
            for r in range(n_int):
                ratio[r] = var[interval[r]] / c_dd[r, r]
            for r in range(n_int):
                for s in range(n_int):
                    if r != s:
                        v_dd[r, s] = c_dd[r, s] * (ratio[r] * ratio[s])
                v_dd[r, r] = var[interval[r]]

    for i in range(n_obs):
        ez[obs[i]] = z[i]

    for i in range(p):
        for j in range(p):
            ezz[i, j] = 0.0
    for r in range(n_int):
        for s in range(n_int):
            ezz[obs[interval[r]], obs[interval[s]]] = v_dd[r, s]

    if n_mis > 0:
        S_mo = np.empty((n_mis, n_obs))
        for i in range(n_mis):
            for j in range(n_obs):
                S_mo[i, j] = sigma[mis[i], obs[j]]
        A = S_mo @ J
        ez_mis = A @ z
        for i in range(n_mis):
            ez[mis[i]] = ez_mis[i]
        c_mm = np.empty((n_mis, n_mis))
        for i in range(n_mis):
            for j in range(n_mis):
                acc = sigma[mis[i], mis[j]]
                for k in range(n_obs):
                    acc -= A[i, k] * S_mo[j, k]
                c_mm[i, j] = acc
        if n_int > 0:
            cross = np.zeros((n_mis, n_int))
            for i in range(n_mis):
                for s in range(n_int):
                    acc = 0.0
                    for r in range(n_int):
                        acc += A[i, interval[r]] * v_dd[r, s]
                    cross[i, s] = acc
            for i in range(n_mis):
                for j in range(n_mis):
                    acc = 0.0
                    for s in range(n_int):
                        acc += cross[i, s] * A[j, interval[s]]
                    c_mm[i, j] += acc
            for i in range(n_mis):
                for s in range(n_int):
                    ezz[mis[i], obs[interval[s]]] = cross[i, s]
                    ezz[obs[interval[s]], mis[i]] = cross[i, s]
        for i in range(n_mis):
            for j in range(n_mis):
                ezz[mis[i], mis[j]] = 0.5 * (c_mm[i, j] + c_mm[j, i])

    for i in range(p):
        for j in range(p):
            ezz[i, j] += ez[i] * ez[j]
