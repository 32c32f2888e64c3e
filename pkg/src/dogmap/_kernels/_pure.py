"""Pure numpy implementations of the hot kernels.

These are the reference semantics for the compiled backend in
``_native.pyx``; both must produce bit-identical outputs.  Every float
accumulation here visits elements in input order (``np.bincount`` and
``np.cumsum`` accumulate sequentially), matching the scalar loops on the
compiled side.
"""

from __future__ import annotations

import numpy as np


def combine_masses(occ_a, free_a, occ_b, free_b):
    """Elementwise Dempster combination of two mass assignments.

    Inputs are broadcastable arrays of occupied/free masses with the
    ignorance mass implicit (1 - occ - free).  Returns
    ``(occ, free, conflict)``; cells where ``conflict`` reaches 1 hold
    garbage and must be rejected by the caller.
    """
    occ_a = np.asarray(occ_a, dtype=np.float64)
    free_a = np.asarray(free_a, dtype=np.float64)
    occ_b = np.asarray(occ_b, dtype=np.float64)
    free_b = np.asarray(free_b, dtype=np.float64)
    unk_a = 1.0 - occ_a - free_a
    unk_b = 1.0 - occ_b - free_b
    conflict = occ_a * free_b + free_a * occ_b
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - conflict
        occ = (occ_a * occ_b + occ_a * unk_b + unk_a * occ_b) / denom
        free = (free_a * free_b + free_a * unk_b + unk_a * free_b) / denom
    return occ, free, conflict


def raytrace_labels(u, v, n_cells):
    """Integer DDA ray walk from the grid-center cell to each target point.

    ``u``/``v`` are continuous grid coordinates (column-axis, row-axis) of
    the beam endpoints; the sensor sits at the exact grid center
    ``(n/2, n/2)``.  Cells strictly between the center cell and a target
    cell are marked free (1); in-grid target cells are marked occupied (2);
    rays toward out-of-grid targets are clipped at the boundary with every
    traversed cell marked free.  Precedence is occupied > free > unknown,
    applied with an elementwise max so beam order cannot matter.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = int(n_cells)
    labels = np.zeros((n, n), dtype=np.uint8)
    if u.size == 0:
        return labels

    tc = np.floor(u).astype(np.int64)
    tr = np.floor(v).astype(np.int64)
    c0 = n // 2
    r0 = n // 2

    dc = tc - c0
    dr = tr - r0
    adc = np.abs(dc)
    adr = np.abs(dr)
    sc = np.sign(dc)
    sr = np.sign(dr)

    r = np.full(u.shape, r0, dtype=np.int64)
    c = np.full(u.shape, c0, dtype=np.int64)
    kx = np.zeros(u.shape, dtype=np.int64)
    ky = np.zeros(u.shape, dtype=np.int64)
    active = (adc + adr) > 0

    while active.any():
        # Crossing ordinals on a common denominator: x-boundary kx is hit at
        # parameter (2*kx+1)/(2*adc); comparing (2*kx+1)*adr to (2*ky+1)*adc
        # is exact in integers, so corner ties are deterministic.
        ax = (2 * kx + 1) * adr
        ay = (2 * ky + 1) * adc
        step_x = active & ((adr == 0) | ((adc > 0) & (ax <= ay)))
        step_y = active & ((adc == 0) | ((adr > 0) & (ay <= ax)))
        c = c + np.where(step_x, sc, 0)
        r = r + np.where(step_y, sr, 0)
        kx = kx + step_x
        ky = ky + step_y
        inside = (r >= 0) & (r < n) & (c >= 0) & (c < n)
        active &= inside
        at_target = active & (r == tr) & (c == tc)
        active &= ~at_target
        if active.any():
            np.maximum.at(labels, (r[active], c[active]), np.uint8(1))

    hit = (tr >= 0) & (tr < n) & (tc >= 0) & (tc < n)
    if hit.any():
        np.maximum.at(labels, (tr[hit], tc[hit]), np.uint8(2))
    return labels


def accumulate_weights(cell_index, weights, n_flat):
    """Sum particle weights per flat cell index; index -1 means out of grid."""
    cell_index = np.asarray(cell_index, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    keep = cell_index >= 0
    return np.bincount(cell_index[keep], weights=weights[keep], minlength=n_flat)


def velocity_moments(cell_index, weights, vx, vy, n_flat):
    """Per-cell weighted velocity moments and particle counts.

    Returns ``(sw, swx, swy, sxx, syy, sxy, count)`` where the s-arrays are
    weighted sums of 1, vx, vy, vx*vx, vy*vy, vx*vy and ``count`` is the
    raw number of particles per cell.  Index -1 is skipped.
    """
    cell_index = np.asarray(cell_index, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    keep = cell_index >= 0
    ci = cell_index[keep]
    w = weights[keep]
    x = vx[keep]
    y = vy[keep]
    sw = np.bincount(ci, weights=w, minlength=n_flat)
    swx = np.bincount(ci, weights=w * x, minlength=n_flat)
    swy = np.bincount(ci, weights=w * y, minlength=n_flat)
    sxx = np.bincount(ci, weights=w * x * x, minlength=n_flat)
    syy = np.bincount(ci, weights=w * y * y, minlength=n_flat)
    sxy = np.bincount(ci, weights=w * x * y, minlength=n_flat)
    count = np.bincount(ci, minlength=n_flat)
    return sw, swx, swy, sxx, syy, sxy, count


def systematic_resample(weights, n_out, offset):
    """Low-variance systematic resampling.

    Draws ``n_out`` indices proportional to ``weights`` using equally spaced
    positions ``(i + offset) / n_out * total`` against the running weight
    sum, where ``total`` is that sum's final value (sequential order, so
    both backends agree bitwise).  Zero-weight entries are never selected.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n_out = int(n_out)
    cumulative = np.cumsum(weights)
    total = cumulative[-1]
    positions = (np.arange(n_out, dtype=np.float64) + float(offset)) / n_out * total
    idx = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(idx, weights.size - 1).astype(np.int64)
