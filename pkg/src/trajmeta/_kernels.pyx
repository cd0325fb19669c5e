# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, NAN
from libc.stdlib cimport malloc, free, calloc

cnp.import_array()

cdef enum:
    NCAT = 6
    NSTATES = 36
    WINDOW = 5

N_TRAJ_STATS = 15
N_MOTIF_STATS = 6


cdef double _entropy_sorted(long long[:] codes, Py_ssize_t n) nogil:
    cdef double h = 0.0, p
    cdef Py_ssize_t i, run = 1
    if n == 0:
        return 0.0
    for i in range(1, n + 1):
        if i < n and codes[i] == codes[i - 1]:
            run += 1
            continue
        p = <double>run / n
        h -= p * log(p)
        run = 1
    return h if h > 0.0 else 0.0


def trajectory_stats(cats, errs, acts, int min_len=1):
    cdef signed char[:] c = np.ascontiguousarray(cats, dtype=np.int8)
    cdef signed char[:] e = np.ascontiguousarray(errs, dtype=np.int8)
    cdef long long[:] a = np.ascontiguousarray(acts, dtype=np.int64)
    cdef Py_ssize_t n = c.shape[0], i, j, m, late_start, cutoff
    cdef double[15] out
    cdef long long[NCAT] counts
    cdef long long[NCAT] window
    cdef long long early, n_err = 0, n_casc = 0, n_rec = 0, runs = 0, run_total = 0, run = 0
    cdef long long distinct = 0, repeats = 0, productive = 0, best
    cdef int mode, new_mode, initial, k
    cdef bint repeat
    for i in range(15):
        out[i] = 0.0
    if n == 0:
        return [out[i] for i in range(15)]
    for k in range(NCAT):
        counts[k] = 0
        window[k] = 0
    for i in range(n):
        counts[c[i]] += 1
    out[0] = <double>counts[0] / n
    out[1] = <double>counts[1] / n
    out[2] = <double>counts[2] / n
    out[3] = <double>counts[3] / n

    cdef long long[:] pairs = np.empty(max(n - 1, 1), dtype=np.int64)
    for i in range(n - 1):
        pairs[i] = c[i] * NCAT + c[i + 1]
    arr = np.asarray(pairs)[: n - 1]
    arr.sort()
    out[4] = _entropy_sorted(arr, n - 1)
    late_start = (3 * n) // 4
    m = 0
    for i in range(late_start, n - 1):
        pairs[m] = c[i] * NCAT + c[i + 1]
        m += 1
    arr = np.asarray(pairs)[:m]
    arr.sort()
    out[8] = _entropy_sorted(arr, m)

    cutoff = (n + 3) // 4
    if counts[0]:
        early = 0
        for i in range(cutoff):
            if c[i] == 0:
                early += 1
        out[5] = <double>early / counts[0]

    out[6] = NAN
    if n > 1:
        for i in range(n):
            if c[i] == 1:
                out[6] = <double>i / (n - 1)
                break

    out[7] = NAN
    if n > 1:
        initial = c[0]
        mode = initial
        for i in range(n):
            window[c[i]] += 1
            if i >= WINDOW:
                window[c[i - WINDOW]] -= 1
            best = window[mode]
            new_mode = mode
            for k in range(NCAT):
                if window[k] > best:
                    best = window[k]
                    new_mode = k
            mode = new_mode
            if mode != initial:
                out[7] = <double>i / (n - 1)
                break

    for i in range(n):
        if not e[i]:
            continue
        n_err += 1
        for j in range(i + 1, min(i + 4, n)):
            if e[j]:
                n_casc += 1
                break
        if i + 1 < n and not e[i + 1]:
            n_rec += 1
    out[9] = <double>n_err / n
    if n_err:
        out[10] = <double>n_casc / n_err
        out[11] = <double>n_rec / n_err

    for i in range(n + 1):
        if i < n and e[i]:
            run += 1
            continue
        if run >= min_len and run > 0:
            runs += 1
            run_total += run
        run = 0
    if runs:
        out[13] = <double>run_total / runs

    for i in range(n):
        repeat = a[i] < distinct
        if repeat:
            repeats += 1
        else:
            distinct += 1
        if not repeat and not e[i]:
            productive += 1
    out[12] = <double>repeats / n
    out[14] = <double>productive / n
    return [out[i] for i in range(15)]


def motif_stats(states, post):
    cdef int[:] s = np.ascontiguousarray(states, dtype=np.int32)
    cdef signed char[:] p = np.ascontiguousarray(post, dtype=np.int8)
    cdef Py_ssize_t n = s.shape[0], i, t, n_motif, n_edge
    cdef long long loops = 0, back = 0, with_post = 0, distinct = 0
    out = [0.0] * 6
    if n < 2:
        return out
    n_motif = n - 1
    cdef long long[:] motifs = np.empty(n_motif, dtype=np.int64)
    for i in range(n_motif):
        motifs[i] = s[i] * NSTATES + s[i + 1]
    srt = np.sort(np.asarray(motifs))
    cdef long long[:] sm = srt
    out[0] = _entropy_sorted(sm, n_motif)
    for i in range(n_motif):
        if i == 0 or sm[i] != sm[i - 1]:
            distinct += 1
    n_edge = n_motif - 1
    cdef long long[:] edges
    if n_edge > 0:
        edges = np.empty(n_edge, dtype=np.int64)
        for i in range(n_edge):
            edges[i] = motifs[i] * (NSTATES * NSTATES) + motifs[i + 1]
            if motifs[i] == motifs[i + 1]:
                loops += 1
        esrt = np.sort(np.asarray(edges))
        out[1] = _entropy_sorted(esrt, n_edge)
        out[2] = <double>loops / n_edge
    out[3] = <double>(n_motif - distinct) / n_motif
    if n_motif >= 3:
        for t in range(2, n_motif):
            if motifs[t] == motifs[t - 2]:
                back += 1
        out[4] = <double>back / (n_motif - 2)
    for i in range(n_motif):
        if p[i] or p[i + 1]:
            with_post += 1
    out[5] = <double>with_post / n_motif
    return out


cdef double _dl_tau2(double[:] y, double[:] v, long long[:] rows) nogil:
    cdef Py_ssize_t k = rows.shape[0], j
    cdef double sw = 0.0, sw2 = 0.0, swy = 0.0, w, mean, q = 0.0, d, c, t
    for j in range(k):
        w = 1.0 / v[rows[j]]
        sw += w
        sw2 += w * w
        swy += w * y[rows[j]]
    mean = swy / sw
    for j in range(k):
        d = y[rows[j]] - mean
        q += d * d / v[rows[j]]
    c = sw - sw2 / sw
    if c <= 0.0:
        return 0.0
    t = (q - (k - 1)) / c
    return t if t > 0.0 else 0.0


cdef double _residual_tau2(double[:] y, double[:] v, long long[:] rows, long long[:] labs,
                           int n_levels, double* sw, double* sw2, double* swy) nogil:
    cdef Py_ssize_t k = rows.shape[0], j
    cdef int g, present = 0
    cdef double w, c = 0.0, q = 0.0, d, t
    cdef long long df
    for g in range(n_levels):
        sw[g] = 0.0
        sw2[g] = 0.0
        swy[g] = 0.0
    for j in range(k):
        g = labs[j]
        w = 1.0 / v[rows[j]]
        sw[g] += w
        sw2[g] += w * w
        swy[g] += w * y[rows[j]]
    for g in range(n_levels):
        if sw[g] > 0.0:
            present += 1
            c += sw[g] - sw2[g] / sw[g]
    df = k - present
    if present < 2 or df < 1:
        return NAN
    for j in range(k):
        g = labs[j]
        d = y[rows[j]] - swy[g] / sw[g]
        q += d * d / v[rows[j]]
    if c <= 0.0:
        return 0.0
    t = (q - df) / c
    return t if t > 0.0 else 0.0


cdef double _r2(double tau2_null, double tau2_res) nogil:
    cdef double r2
    if tau2_res != tau2_res:
        return NAN
    if tau2_null <= 0.0:
        return 0.0
    r2 = 1.0 - tau2_res / tau2_null
    if r2 < 0.0:
        return 0.0
    return r2 if r2 < 1.0 else 1.0


def moderator_tau2(y, v, labels, int n_levels):
    cdef double[:] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef long long[:] labs = np.ascontiguousarray(labels, dtype=np.int64)
    cdef long long[:] rows = np.arange(yy.shape[0], dtype=np.int64)
    cdef double* buf = <double*>calloc(3 * n_levels, sizeof(double))
    cdef double res
    try:
        res = _residual_tau2(yy, vv, rows, labs, n_levels, buf, buf + n_levels, buf + 2 * n_levels)
    finally:
        free(buf)
    return _dl_tau2(yy, vv, rows), res


def r2_from_tau2(double tau2_null, double tau2_res):
    return _r2(tau2_null, tau2_res)


def moderator_r2_many(y, v, idx, labels, int n_levels):
    cdef double[:] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef long long[:, :] ii = np.ascontiguousarray(idx, dtype=np.int64)
    cdef long long[:, :] ll = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t b, nb = ii.shape[0]
    out_arr = np.empty(nb, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef double* buf = <double*>calloc(3 * n_levels, sizeof(double))
    try:
        with nogil:
            for b in range(nb):
                out[b] = _r2(_dl_tau2(yy, vv, ii[b]),
                             _residual_tau2(yy, vv, ii[b], ll[b], n_levels,
                                            buf, buf + n_levels, buf + 2 * n_levels))
    finally:
        free(buf)
    return out_arr.tolist()
