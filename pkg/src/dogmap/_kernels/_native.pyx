# Compiled twins of the kernels in ``_pure``.  Semantics and float
# operation order must match the numpy versions exactly; the parity tests
# assert bit-identical outputs.

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def combine_masses(occ_a, free_a, occ_b, free_b):
    """Elementwise Dempster combination; see ``_pure.combine_masses``."""
    shape = np.asarray(occ_a).shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] oa = np.ascontiguousarray(occ_a, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fa = np.ascontiguousarray(free_a, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ob = np.ascontiguousarray(occ_b, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fb = np.ascontiguousarray(free_b, dtype=np.float64).ravel()
    cdef Py_ssize_t n = oa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] occ = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] free = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] conflict = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double ua, ub, k, denom
    for i in range(n):
        ua = 1.0 - oa[i] - fa[i]
        ub = 1.0 - ob[i] - fb[i]
        k = oa[i] * fb[i] + fa[i] * ob[i]
        denom = 1.0 - k
        conflict[i] = k
        occ[i] = (oa[i] * ob[i] + oa[i] * ub + ua * ob[i]) / denom
        free[i] = (fa[i] * fb[i] + fa[i] * ub + ua * fb[i]) / denom
    return occ.reshape(shape), free.reshape(shape), conflict.reshape(shape)


def raytrace_labels(u, v, n_cells):
    """Integer DDA ray walk; see ``_pure.raytrace_labels``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] uu = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vv = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef int n = int(n_cells)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] labels = np.zeros((n, n), dtype=np.uint8)
    cdef Py_ssize_t n_pts = uu.shape[0]
    cdef long long c0 = n // 2
    cdef long long r0 = n // 2
    cdef Py_ssize_t i
    cdef long long tc, tr, dc, dr, adc, adr, sc, sr, r, c, kx, ky, ax, ay, steps, s
    cdef bint step_x, step_y
    for i in range(n_pts):
        tc = <long long>floor(uu[i])
        tr = <long long>floor(vv[i])
        dc = tc - c0
        dr = tr - r0
        adc = dc if dc >= 0 else -dc
        adr = dr if dr >= 0 else -dr
        sc = 0 if dc == 0 else (1 if dc > 0 else -1)
        sr = 0 if dr == 0 else (1 if dr > 0 else -1)
        r = r0
        c = c0
        kx = 0
        ky = 0
        steps = adc + adr
        for s in range(steps):
            # Crossing ordinals on a common denominator (exact integer ties).
            ax = (2 * kx + 1) * adr
            ay = (2 * ky + 1) * adc
            step_x = (adr == 0) or (adc > 0 and ax <= ay)
            step_y = (adc == 0) or (adr > 0 and ay <= ax)
            if step_x:
                c += sc
                kx += 1
            if step_y:
                r += sr
                ky += 1
            if r < 0 or r >= n or c < 0 or c >= n:
                break
            if r == tr and c == tc:
                break
            if labels[r, c] < 1:
                labels[r, c] = 1
        if 0 <= tr < n and 0 <= tc < n:
            labels[tr, tc] = 2
    return labels


def accumulate_weights(cell_index, weights, n_flat):
    """Per-cell weight sums; see ``_pure.accumulate_weights``."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ci = np.ascontiguousarray(cell_index, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(int(n_flat), dtype=np.float64)
    cdef Py_ssize_t i, n = ci.shape[0]
    for i in range(n):
        if ci[i] >= 0:
            out[ci[i]] += w[i]
    return out


def velocity_moments(cell_index, weights, vx, vy, n_flat):
    """Per-cell weighted velocity moments; see ``_pure.velocity_moments``."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ci = np.ascontiguousarray(cell_index, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.ascontiguousarray(vx, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.ascontiguousarray(vy, dtype=np.float64)
    cdef int nf = int(n_flat)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sw = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] swx = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] swy = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sxx = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] syy = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sxy = np.zeros(nf, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] count = np.zeros(nf, dtype=np.int64)
    cdef Py_ssize_t i, n = ci.shape[0]
    cdef long long k
    for i in range(n):
        k = ci[i]
        if k < 0:
            continue
        sw[k] += w[i]
        swx[k] += w[i] * x[i]
        swy[k] += w[i] * y[i]
        sxx[k] += w[i] * x[i] * x[i]
        syy[k] += w[i] * y[i] * y[i]
        sxy[k] += w[i] * x[i] * y[i]
        count[k] += 1
    return sw, swx, swy, sxx, syy, sxy, count


def systematic_resample(weights, n_out, offset):
    """Low-variance systematic resampling; see ``_pure.systematic_resample``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    if n == 0:
        raise ValueError("cannot resample from an empty weight vector")
    cdef Py_ssize_t m = int(n_out)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cumulative = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    for i in range(n):
        acc += w[i]
        cumulative[i] = acc
    cdef double total = cumulative[n - 1]
    cdef double off = float(offset)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(m, dtype=np.int64)
    cdef double p
    j = 0
    for i in range(m):
        p = (<double>i + off) / <double>m * total
        while j < n and cumulative[j] <= p:
            j += 1
        out[i] = j if j < n else n - 1
    return out
