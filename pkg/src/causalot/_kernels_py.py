"""NumPy implementations of the compiled kernels (same signatures and results)."""
from __future__ import annotations

import numpy as np

MAX_DEPTH = 40


def price(colptr, rowind, vals, c, y, eligible, start, end, tol, first):
    lo, hi = colptr[start], colptr[end]
    ncol = end - start
    if ncol <= 0:
        return -1, 0.0
    counts = np.diff(colptr[start : end + 1])
    cols = np.repeat(np.arange(ncol), counts)
    d = c[start:end] - np.bincount(cols, weights=y[rowind[lo:hi]] * vals[lo:hi], minlength=ncol)
    cand = (d < -tol) & eligible[start:end].astype(bool)
    if not cand.any():
        return -1, 0.0
    if first:
        j = int(np.argmax(cand))
    else:
        dd = np.where(cand, d, np.inf)
        j = int(np.argmin(dd))
    return start + j, float(d[j])


def ratio_test(xb, d, basis, piv_tol, bland):
    rows = np.flatnonzero(d > piv_tol)
    if len(rows) == 0:
        return -1
    r = -1
    best = 0.0
    for i in rows:
        t = max(xb[i], 0.0) / d[i]
        if r < 0 or t < best - 1e-12 * (1.0 + best):
            r, best = i, t
        elif t <= best + 1e-12 * (1.0 + best):
            if bland:
                if basis[i] < basis[r]:
                    r, best = i, min(t, best)
            elif d[i] > d[r]:
                r, best = i, min(t, best)
    return int(r)


def eta_update(binv, d, r):
    binv[r] /= d[r]
    f = d.copy()
    f[r] = 0.0
    binv -= np.outer(f, binv[r])


def _bessel_step(r, h, db, pool, used):
    hs = [h]
    dbs = [db]
    while hs:
        hh, b = hs[-1], dbs[-1]
        prop = r + hh / r + b
        if prop > 0.0 and 4.0 * hh <= r * r:
            r = prop
            hs.pop()
            dbs.pop()
            continue
        if len(hs) + 1 >= MAX_DEPTH or used >= len(pool):
            r = abs(prop)
            hs.pop()
            dbs.pop()
            continue
        mid = 0.5 * b + np.sqrt(0.25 * hh) * pool[used]
        used += 1
        dbs[-1] = b - mid
        hs[-1] = 0.5 * hh
        dbs.append(mid)
        hs.append(0.5 * hh)
    return r, used


def bessel_paths(r0, dt, dB, pool):
    n, g = dB.shape
    R = np.empty((n, g + 1))
    R[:, 0] = r0
    used = np.zeros(n, dtype=np.int64)
    for k in range(g):
        r = R[:, k]
        prop = r + dt / r + dB[:, k]
        R[:, k + 1] = prop
        for i in np.flatnonzero((prop <= 0.0) | (4.0 * dt > r * r)):
            R[i, k + 1], used[i] = _bessel_step(r[i], dt, dB[i, k], pool[i], int(used[i]))
    return R, used
