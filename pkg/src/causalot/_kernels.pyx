# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the simplex solver and the Bessel path simulator."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

DEF MAX_DEPTH = 40


def price(const cnp.int64_t[:] colptr, const cnp.int64_t[:] rowind,
          const double[:] vals, const double[:] c, const double[:] y,
          const cnp.uint8_t[:] eligible, Py_ssize_t start, Py_ssize_t end,
          double tol, bint first):
    """Entering column in ``[start, end)``: most negative reduced cost, or the
    first one below ``-tol`` when ``first`` is set. Returns (j, d_j) or (-1, 0)."""
    cdef Py_ssize_t j, p
    cdef double d, best = -tol
    cdef Py_ssize_t arg = -1
    for j in range(start, end):
        if not eligible[j]:
            continue
        d = c[j]
        for p in range(colptr[j], colptr[j + 1]):
            d -= y[rowind[p]] * vals[p]
        if d < best:
            best = d
            arg = j
            if first:
                break
    if arg < 0:
        return -1, 0.0
    return arg, best


def ratio_test(const double[:] xb, const double[:] d, const cnp.int64_t[:] basis,
               double piv_tol, bint bland):
    """Leaving row for the min-ratio test; ties go to the smallest basic index
    under ``bland`` and to the largest pivot otherwise. Returns -1 if unbounded."""
    cdef Py_ssize_t i, m = xb.shape[0], r = -1
    cdef double t, best = 0.0, x
    for i in range(m):
        if d[i] > piv_tol:
            x = xb[i]
            if x < 0.0:
                x = 0.0
            t = x / d[i]
            if r < 0 or t < best - 1e-12 * (1.0 + best):
                r = i
                best = t
            elif t <= best + 1e-12 * (1.0 + best):
                if bland:
                    if basis[i] < basis[r]:
                        r = i
                        best = t if t < best else best
                elif d[i] > d[r]:
                    r = i
                    best = t if t < best else best
    return r


def eta_update(double[:, ::1] binv, const double[:] d, Py_ssize_t r):
    """In-place product-form update of an explicit basis inverse."""
    cdef Py_ssize_t i, j, m = binv.shape[0]
    cdef double piv = d[r], f
    for j in range(m):
        binv[r, j] /= piv
    for i in range(m):
        if i == r:
            continue
        f = d[i]
        if f == 0.0:
            continue
        for j in range(m):
            binv[i, j] -= f * binv[r, j]


cdef double _bessel_step(double r, double h, double db, const double[:] pool,
                         Py_ssize_t* used) noexcept nogil:
    """Advance dR = dt/R + dB over one interval; split by a Brownian-bridge
    midpoint whenever the Euler proposal is not positive or the drift step
    dt/R exceeds R/4."""
    cdef double hs[MAX_DEPTH]
    cdef double dbs[MAX_DEPTH]
    cdef int top = 0
    cdef double prop, mid, hh
    hs[0] = h
    dbs[0] = db
    while top >= 0:
        hh = hs[top]
        prop = r + hh / r + dbs[top]
        if prop > 0.0 and 4.0 * hh <= r * r:
            r = prop
            top -= 1
            continue
        if top + 2 >= MAX_DEPTH or used[0] >= pool.shape[0]:
            r = fabs(prop)
            top -= 1
            continue
        mid = 0.5 * dbs[top] + sqrt(0.25 * hh) * pool[used[0]]
        used[0] += 1
        # replace the interval by its two halves, first half on top
        dbs[top + 1] = mid
        hs[top + 1] = 0.5 * hh
        dbs[top] = dbs[top] - mid
        hs[top] = 0.5 * hh
        top += 1
    return r


def bessel_paths(double r0, double dt, const double[:, ::1] dB, const double[:, ::1] pool):
    """Simulate R on the grid for every row of ``dB``; returns (R, splits)."""
    cdef Py_ssize_t n = dB.shape[0], g = dB.shape[1], i, k
    cdef Py_ssize_t used
    R_arr = np.empty((n, g + 1))
    splits_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] R = R_arr
    cdef cnp.int64_t[:] splits = splits_arr
    for i in range(n):
        used = 0
        R[i, 0] = r0
        for k in range(g):
            R[i, k + 1] = _bessel_step(R[i, k], dt, dB[i, k], pool[i], &used)
        splits[i] = used
    return R_arr, splits_arr
