"""Pure numpy implementations of the hot kernels.

These are the reference semantics for ``_ckernels``; both backends must agree
to floating-point round-off.
"""

import numpy as np

_CHUNK_BITS = 16


def min_conductance_bruteforce(adj, eps=1e-12):
    """Minimum cut conductance over all cuts that keep vertex ``n-1`` outside.

    Returns ``(value, mask)`` where bit ``v`` of ``mask`` marks vertex ``v`` in
    the cut set.  Among cuts within ``eps`` of the minimum the numerically
    smallest mask wins.  Cuts with a zero-volume side are skipped; if none is
    valid the value is ``inf`` and the mask 0.
    """
    adj = np.ascontiguousarray(adj, dtype=np.float64)
    n = adj.shape[0]
    if n < 2:
        return np.inf, 0
    deg = adj.sum(axis=1)
    vol_total = deg.sum()
    n_cuts = 1 << (n - 1)
    chunk = 1 << min(_CHUNK_BITS, n - 1)
    bits = np.arange(n - 1, dtype=np.int64)

    def _values(lo, hi):
        masks = np.arange(lo, hi, dtype=np.int64)
        x = np.zeros((masks.size, n))
        x[:, : n - 1] = (masks[:, None] >> bits) & 1
        vol_s = x @ deg
        cut = vol_s - np.einsum("ij,ij->i", x @ adj, x)
        denom = np.minimum(vol_s, vol_total - vol_s)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(denom > 0, np.maximum(cut, 0.0) / denom, np.inf)
        return masks, vals

    best = np.inf
    for lo in range(1, n_cuts, chunk):
        _, vals = _values(lo, min(lo + chunk, n_cuts))
        best = min(best, float(vals.min()))
    if not np.isfinite(best):
        return np.inf, 0
    for lo in range(1, n_cuts, chunk):
        masks, vals = _values(lo, min(lo + chunk, n_cuts))
        hits = np.flatnonzero(vals <= best + eps)
        if hits.size:
            return best, int(masks[hits[0]])
    return best, 0


def prefix_conductances(adj_sorted):
    """Conductance of each prefix cut ``{0..k}``, k = 0..n-2, of a reordered
    adjacency matrix; ``inf`` where a side has zero volume."""
    adj_sorted = np.asarray(adj_sorted, dtype=np.float64)
    n = adj_sorted.shape[0]
    if n < 2:
        return np.full(0, np.inf)
    deg = adj_sorted.sum(axis=1)
    vol_s = np.cumsum(deg)[:-1]
    lower = np.tril(adj_sorted, -1).sum(axis=1)
    internal = np.cumsum(lower)[:-1]
    denom = np.minimum(vol_s, deg.sum() - vol_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, np.maximum(vol_s - 2.0 * internal, 0.0) / denom, np.inf)
    return out


def forward_scaled(trans, emis, init):
    h, n = emis.shape
    alpha = np.zeros((h, n))
    scales = np.zeros(h)
    if h == 0:
        return alpha, scales
    a = init * emis[0]
    scales[0] = a.sum()
    if scales[0] <= 0:
        return alpha, scales
    alpha[0] = a / scales[0]
    for t in range(1, h):
        a = (alpha[t - 1] @ trans[t - 1]) * emis[t]
        scales[t] = a.sum()
        if scales[t] <= 0:
            return alpha, scales
        alpha[t] = a / scales[t]
    return alpha, scales


def backward_scaled(trans, emis, scales):
    h, n = emis.shape
    beta = np.ones((h, n))
    for t in range(h - 2, -1, -1):
        beta[t] = trans[t] @ (emis[t + 1] * beta[t + 1]) / scales[t + 1]
    return beta
