"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Used automatically when the extension is not built, or when the
environment variable ``SPRAYSCAN_PURE_PYTHON`` is set.
"""

import numpy as np


def column_centroids(img, threshold, max_run):
    img = np.asarray(img)
    h, w = img.shape
    v = np.full(w, np.nan)
    ok = np.zeros(w, dtype=bool)
    if h == 0 or w == 0:
        return v, ok
    best = img.argmax(axis=0)
    cols = np.arange(w)
    peak = img[best, cols]
    live = peak >= threshold
    above = img >= threshold

    # grow each run outward from its brightest pixel, one row per step
    lo = best.copy()
    hi = best.copy()
    grow_lo = live.copy()
    grow_hi = live.copy()
    for _ in range(h):
        grow_lo &= lo > 0
        if grow_lo.any():
            nxt = np.where(grow_lo, lo - 1, 0)
            grow_lo &= above[nxt, cols]
            lo = np.where(grow_lo, nxt, lo)
        grow_hi &= hi < h - 1
        if grow_hi.any():
            nxt = np.where(grow_hi, hi + 1, 0)
            grow_hi &= above[nxt, cols]
            hi = np.where(grow_hi, nxt, hi)
        if not (grow_lo.any() or grow_hi.any()):
            break
        # runs already longer than max_run are rejected anyway
        too_long = (hi - lo + 1) > max_run
        grow_lo &= ~too_long
        grow_hi &= ~too_long

    ok = live & ((hi - lo + 1) <= max_run)
    if not ok.any():
        return v, ok
    rows = np.arange(h)[:, None]
    in_run = (rows >= lo) & (rows <= hi) & ok
    weights = np.where(in_run, img.astype(np.float64), 0.0)
    sw = weights.sum(axis=0)
    swr = (weights * rows).sum(axis=0)
    v[ok] = swr[ok] / sw[ok]
    return v, ok


def splat_max(canvas, u, v, peak, sigma, radius):
    h, w = canvas.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.size == 0:
        return 0, 0
    k = np.arange(2 * radius + 1)
    cc = np.ceil(u - radius)[:, None] + k
    rr = np.ceil(v - radius)[:, None] + k
    c_in = (cc <= np.floor(u + radius)[:, None]) & (cc >= 0) & (cc < w)
    r_in = (rr <= np.floor(v + radius)[:, None]) & (rr >= 0) & (rr < h)
    mask = r_in[:, :, None] & c_in[:, None, :]
    if not mask.any():
        return 0, 0
    inv = 1.0 / (2.0 * sigma * sigma)
    du2 = (cc - u[:, None]) ** 2
    dv2 = (rr - v[:, None]) ** 2
    vals = (peak * np.exp(-dv2 * inv))[:, :, None] * np.exp(-du2 * inv)[:, None, :]
    R = np.broadcast_to(rr[:, :, None], mask.shape)[mask].astype(np.intp)
    C = np.broadcast_to(cc[:, None, :], mask.shape)[mask].astype(np.intp)
    np.maximum.at(canvas, (R, C), vals[mask].astype(np.float32))
    return int(R.min()), int(R.max()) + 1


def cast_rays(q0, d, t_start, t_max, amp, wavenumber, wave_axis, phase,
              half_a, half_b, tol, max_iter):
    q0 = np.asarray(q0, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = q0.shape[0]
    t_out = np.full(n, np.nan)
    hit = np.zeros(n, dtype=bool)
    if n == 0:
        return t_out, hit
    h0, a0, b0 = q0[:, 0], q0[:, 1], q0[:, 2]
    dh, da, db = d[:, 0], d[:, 1], d[:, 2]
    flat = wave_axis == 0 or amp == 0.0
    env = abs(amp)
    ds = da if wave_axis == 1 else db if wave_axis == 2 else np.zeros(n)
    lip = np.abs(dh)
    if not flat:
        lip = lip + env * wavenumber * np.abs(ds)
    t = np.asarray(t_start, dtype=np.float64).copy()
    t_max = np.asarray(t_max, dtype=np.float64)
    hh = h0 + t * dh
    skip = (hh > env) & (dh < 0.0)
    t = np.where(skip, t + (hh - env) / np.where(skip, -dh, 1.0), t)
    active = lip != 0.0
    s0 = a0 if wave_axis == 1 else b0
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ti = t[idx]
        over = ti > t_max[idx]
        hh = h0[idx] + ti * dh[idx]
        if flat:
            g = hh
        else:
            s = s0[idx] + ti * ds[idx]
            g = hh - amp * np.sin(wavenumber * s + phase)
        done = (g <= tol) & ~over
        if done.any():
            k = idx[done]
            inb = (np.abs(a0[k] + t[k] * da[k]) <= half_a) & (np.abs(b0[k] + t[k] * db[k]) <= half_b)
            t_out[k[inb]] = t[k[inb]]
            hit[k[inb]] = True
        leaving = (hh > env) & (dh[idx] >= 0.0)
        stop = over | done | leaving
        active[idx[stop]] = False
        go = ~stop
        t[idx[go]] = ti[go] + g[go] / lip[idx[go]]
    return t_out, hit


def accumulate_max(depth, state, ii, jj, x):
    ii = np.asarray(ii, dtype=np.intp)
    jj = np.asarray(jj, dtype=np.intp)
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0
    R, C = depth.shape
    flat = ii * C + jj
    # per cell: keep the largest incoming value
    order = np.lexsort((-x, flat))
    flat_s = flat[order]
    first = np.ones(flat_s.size, dtype=bool)
    first[1:] = flat_s[1:] != flat_s[:-1]
    cells = flat_s[first]
    best = x[order][first]
    d = depth.reshape(-1)
    s = state.reshape(-1)
    old_state = s[cells]
    newly = int(np.count_nonzero(old_state == 0))
    replace = (old_state != 1) | (best > d[cells])
    d[cells[replace]] = best[replace]
    s[cells] = 1
    return newly


def fill_rows(depth, state, max_gap, fill_state):
    if max_gap <= 0:
        return 0
    filled = 0
    for i in range(depth.shape[0]):
        valid = np.flatnonzero(state[i] != 0)
        if valid.size < 2:
            continue
        gaps = np.diff(valid) - 1
        for k in np.flatnonzero((gaps > 0) & (gaps <= max_gap)):
            last, nxt, gap = valid[k], valid[k + 1], gaps[k]
            d0, d1 = depth[i, last], depth[i, nxt]
            m = np.arange(1, gap + 1)
            depth[i, last + 1:nxt] = d0 + (d1 - d0) * m / (gap + 1.0)
            state[i, last + 1:nxt] = fill_state
            filled += int(gap)
    return filled
