# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.  ``_pycore`` holds the reference numpy versions; both
modules expose the same functions with the same semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sin, fabs, floor, ceil

cnp.import_array()

ctypedef cnp.uint8_t u8


def column_centroids(const u8[:, :] img, int threshold, int max_run):
    """Sub-pixel laser row for every column of ``img``.

    Returns ``(v, valid)``.  ``v`` is the intensity-weighted centroid of the
    above-threshold run that contains the brightest pixel of the column.
    """
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t r, c, lo, hi
    cdef int best
    cdef double sw, swr
    v_arr = np.full(w, np.nan, dtype=np.float64)
    ok_arr = np.zeros(w, dtype=np.bool_)
    cdef double[:] v = v_arr
    cdef cnp.npy_bool[:] ok = ok_arr
    best_row = np.zeros(w, dtype=np.intp)
    best_val = np.full(w, -1, dtype=np.int32)
    cdef Py_ssize_t[:] brow = best_row
    cdef int[:] bval = best_val
    cdef u8 px
    # row-major sweep for the per-column maximum (first occurrence wins)
    for r in range(h):
        for c in range(w):
            px = img[r, c]
            if px > bval[c]:
                bval[c] = px
                brow[c] = r
    for c in range(w):
        if bval[c] < threshold:
            continue
        lo = brow[c]
        while lo > 0 and img[lo - 1, c] >= threshold:
            lo -= 1
        hi = brow[c]
        while hi < h - 1 and img[hi + 1, c] >= threshold:
            hi += 1
        if hi - lo + 1 > max_run:
            continue
        sw = 0.0
        swr = 0.0
        for r in range(lo, hi + 1):
            sw += img[r, c]
            swr += img[r, c] * <double>r
        v[c] = swr / sw
        ok[c] = True
    return v_arr, ok_arr


def splat_max(float[:, :] canvas, const double[:] u, const double[:] v,
              double peak, double sigma, int radius):
    """Max-composite an isotropic Gaussian of height ``peak`` at every
    ``(u, v)``.  Returns the touched row range ``(r0, r1)`` (r1 exclusive)."""
    cdef Py_ssize_t h = canvas.shape[0], w = canvas.shape[1]
    cdef Py_ssize_t n = u.shape[0], k, r, c, c0, c1, r0, r1
    cdef Py_ssize_t rmin = h, rmax = 0
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double du, dv, val, gv
    # the Gaussian is separable: one exp per row and per column
    eu_arr = np.empty(2 * radius + 2, dtype=np.float64)
    cdef double[:] eu = eu_arr
    for k in range(n):
        c0 = <Py_ssize_t>ceil(u[k] - radius)
        c1 = <Py_ssize_t>floor(u[k] + radius)
        r0 = <Py_ssize_t>ceil(v[k] - radius)
        r1 = <Py_ssize_t>floor(v[k] + radius)
        if c1 < 0 or r1 < 0 or c0 >= w or r0 >= h:
            continue
        if c0 < 0:
            c0 = 0
        if r0 < 0:
            r0 = 0
        if c1 > w - 1:
            c1 = w - 1
        if r1 > h - 1:
            r1 = h - 1
        if r0 < rmin:
            rmin = r0
        if r1 + 1 > rmax:
            rmax = r1 + 1
        for c in range(c0, c1 + 1):
            du = c - u[k]
            eu[c - c0] = exp(-du * du * inv)
        for r in range(r0, r1 + 1):
            dv = r - v[k]
            gv = peak * exp(-dv * dv * inv)
            for c in range(c0, c1 + 1):
                val = gv * eu[c - c0]
                if val > canvas[r, c]:
                    canvas[r, c] = <float>val
    if rmax == 0:
        return 0, 0
    return rmin, rmax


def cast_rays(const double[:, :] q0, const double[:, :] d,
              const double[:] t_start, const double[:] t_max,
              double amp, double wavenumber, int wave_axis, double phase,
              double half_a, double half_b, double tol, int max_iter):
    """First hit of rays with the sheet ``h = amp * sin(k * s + phase)``.

    Ray coordinates are in the plate frame ``(h, a, b)``; ``s`` is ``a``
    when ``wave_axis == 1``, ``b`` when ``wave_axis == 2``, and the sheet is
    flat when ``wave_axis == 0``.  Sphere tracing with the per-ray Lipschitz
    bound of ``h - f`` never steps across the surface, so the first root is
    found.  Hits outside ``|a| <= half_a, |b| <= half_b`` count as misses.
    """
    cdef Py_ssize_t n = q0.shape[0], i
    cdef int it
    cdef double h0, a0, b0, dh, da, db, ds, lip, t, g, hh, s, env
    t_arr = np.full(n, np.nan, dtype=np.float64)
    hit_arr = np.zeros(n, dtype=np.bool_)
    cdef double[:] t_out = t_arr
    cdef cnp.npy_bool[:] hit = hit_arr
    cdef bint flat = wave_axis == 0 or amp == 0.0
    env = fabs(amp)
    for i in range(n):
        h0 = q0[i, 0]
        a0 = q0[i, 1]
        b0 = q0[i, 2]
        dh = d[i, 0]
        da = d[i, 1]
        db = d[i, 2]
        ds = 0.0
        if wave_axis == 1:
            ds = da
        elif wave_axis == 2:
            ds = db
        lip = fabs(dh)
        if not flat:
            lip += env * wavenumber * fabs(ds)
        if lip == 0.0:
            continue
        t = t_start[i]
        hh = h0 + t * dh
        if hh > env and dh < 0.0:
            t = t + (hh - env) / (-dh)
        for it in range(max_iter):
            if t > t_max[i]:
                break
            hh = h0 + t * dh
            if flat:
                g = hh
            else:
                if wave_axis == 1:
                    s = a0 + t * da
                else:
                    s = b0 + t * db
                g = hh - amp * sin(wavenumber * s + phase)
            if g <= tol:
                if fabs(a0 + t * da) <= half_a and fabs(b0 + t * db) <= half_b:
                    t_out[i] = t
                    hit[i] = True
                break
            if hh > env and dh >= 0.0:
                break
            t += g / lip
    return t_arr, hit_arr


def accumulate_max(double[:, :] depth, u8[:, :] state, const Py_ssize_t[:] ii,
                   const Py_ssize_t[:] jj, const double[:] x):
    """Write depths into cells, keeping the largest (nearest-camera) value.

    Measured values replace interpolated ones.  Indices must be in range.
    Returns the number of cells that changed from invalid to valid."""
    cdef Py_ssize_t n = x.shape[0], k, i, j
    cdef Py_ssize_t newly = 0
    for k in range(n):
        i = ii[k]
        j = jj[k]
        if state[i, j] == 0:
            newly += 1
            depth[i, j] = x[k]
            state[i, j] = 1
        elif state[i, j] == 2:
            depth[i, j] = x[k]
            state[i, j] = 1
        elif x[k] > depth[i, j]:
            depth[i, j] = x[k]
    return newly


def fill_rows(double[:, :] depth, u8[:, :] state, int max_gap, u8 fill_state):
    """Linearly bridge invalid runs of length <= ``max_gap`` along rows."""
    cdef Py_ssize_t rows = depth.shape[0], cols = depth.shape[1]
    cdef Py_ssize_t i, j, last, m, gap
    cdef Py_ssize_t filled = 0
    cdef double d0, d1
    if max_gap <= 0:
        return 0
    for i in range(rows):
        last = -1
        for j in range(cols):
            if state[i, j] == 0:
                continue
            if last >= 0:
                gap = j - last - 1
                if 0 < gap <= max_gap:
                    d0 = depth[i, last]
                    d1 = depth[i, j]
                    for m in range(1, gap + 1):
                        depth[i, last + m] = d0 + (d1 - d0) * m / (gap + 1.0)
                        state[i, last + m] = fill_state
                    filled += gap
            last = j
    return filled
