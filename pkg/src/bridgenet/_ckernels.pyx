# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors ``_pykernels`` exactly; see that module for docs."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()


cdef inline int _ctz(unsigned long long x) nogil:
    cdef int k = 0
    while (x & 1ULL) == 0:
        x >>= 1
        k += 1
    return k


cdef double _gray_scan(const double[:, ::1] adj, double[::1] deg, double[::1] conn,
                       char[::1] in_s, int n, double vol_total, int find_mask,
                       double threshold, unsigned long long *best_mask) nogil:
    cdef unsigned long long i, gray, n_cuts = (1ULL << (n - 1))
    cdef int v, u
    cdef double cut = 0.0, vol_s = 0.0, vol_t, denom, val
    cdef double best = INFINITY
    for u in range(n):
        conn[u] = 0.0
        in_s[u] = 0
    best_mask[0] = 0
    for i in range(1, n_cuts):
        v = _ctz(i)
        gray = i ^ (i >> 1)
        if in_s[v]:
            cut += 2.0 * conn[v] - deg[v]
            vol_s -= deg[v]
            in_s[v] = 0
            for u in range(n):
                conn[u] -= adj[u, v]
        else:
            cut += deg[v] - 2.0 * conn[v]
            vol_s += deg[v]
            in_s[v] = 1
            for u in range(n):
                conn[u] += adj[u, v]
        vol_t = vol_total - vol_s
        denom = vol_s if vol_s < vol_t else vol_t
        if denom <= 0.0:
            continue
        val = cut / denom
        if val < 0.0:
            val = 0.0
        if find_mask:
            if val <= threshold and (best_mask[0] == 0 or gray < best_mask[0]):
                best_mask[0] = gray
        elif val < best:
            best = val
    return best


def min_conductance_bruteforce(const double[:, ::1] adj, double eps=1e-12):
    cdef int n = adj.shape[0]
    cdef int u, v
    cdef double vol_total = 0.0, best
    cdef unsigned long long mask = 0
    deg_arr = np.zeros(n, dtype=np.float64)
    conn_arr = np.zeros(n, dtype=np.float64)
    in_arr = np.zeros(n, dtype=np.int8)
    cdef double[::1] deg = deg_arr
    cdef double[::1] conn = conn_arr
    cdef char[::1] in_s = in_arr
    if n < 2:
        return INFINITY, 0
    for u in range(n):
        for v in range(n):
            deg[u] += adj[u, v]
        vol_total += deg[u]
    with nogil:
        best = _gray_scan(adj, deg, conn, in_s, n, vol_total, 0, 0.0, &mask)
        if best != INFINITY:
            _gray_scan(adj, deg, conn, in_s, n, vol_total, 1, best + eps, &mask)
    return best, int(mask)


def prefix_conductances(const double[:, ::1] adj_sorted):
    cdef int n = adj_sorted.shape[0]
    cdef int k, i, j
    cdef double vol_total = 0.0, vol_s = 0.0, internal = 0.0, vol_t, denom
    out_arr = np.full(max(n - 1, 0), np.inf)
    deg_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] deg = deg_arr
    for i in range(n):
        for j in range(n):
            deg[i] += adj_sorted[i, j]
        vol_total += deg[i]
    for k in range(n - 1):
        vol_s += deg[k]
        for i in range(k):
            internal += adj_sorted[k, i]
        vol_t = vol_total - vol_s
        denom = vol_s if vol_s < vol_t else vol_t
        if denom > 0.0:
            out[k] = (vol_s - 2.0 * internal) / denom
            if out[k] < 0.0:
                out[k] = 0.0
    return out_arr


def forward_scaled(const double[:, :, ::1] trans, const double[:, ::1] emis,
                   const double[::1] init):
    cdef int h = emis.shape[0]
    cdef int n = emis.shape[1]
    cdef int t, a, b
    cdef double s, acc
    alpha_arr = np.zeros((h, n))
    scale_arr = np.zeros(h)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] scales = scale_arr
    if h == 0:
        return alpha_arr, scale_arr
    s = 0.0
    for a in range(n):
        alpha[0, a] = init[a] * emis[0, a]
        s += alpha[0, a]
    scales[0] = s
    if s <= 0.0:
        return alpha_arr, scale_arr
    for a in range(n):
        alpha[0, a] /= s
    for t in range(1, h):
        s = 0.0
        for b in range(n):
            acc = 0.0
            for a in range(n):
                acc += alpha[t - 1, a] * trans[t - 1, a, b]
            alpha[t, b] = acc * emis[t, b]
            s += alpha[t, b]
        scales[t] = s
        if s <= 0.0:
            return alpha_arr, scale_arr
        for b in range(n):
            alpha[t, b] /= s
    return alpha_arr, scale_arr


def backward_scaled(const double[:, :, ::1] trans, const double[:, ::1] emis,
                    const double[::1] scales):
    cdef int h = emis.shape[0]
    cdef int n = emis.shape[1]
    cdef int t, a, b
    cdef double acc
    beta_arr = np.ones((h, n))
    cdef double[:, ::1] beta = beta_arr
    for t in range(h - 2, -1, -1):
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += trans[t, a, b] * emis[t + 1, b] * beta[t + 1, b]
            beta[t, a] = acc / scales[t + 1]
    return beta_arr
