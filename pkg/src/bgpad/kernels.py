"""Numeric inner loops, each in a jitted and a pure-numpy flavour.

The public names at the bottom of the module (``rolling_pearson``,
``rbf_gram`` ...) are bound to whichever flavour :mod:`bgpad._accel`
selected.  Both flavours are importable by name for tests and benchmarks.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# rolling Pearson correlation (trailing windows, two-pass per window)
# ---------------------------------------------------------------------------


@njit
def _rolling_pearson_jit(x, y, w):
    n = x.shape[0]
    out = np.zeros(n)
    valid = np.zeros(n, dtype=np.bool_)
    for t in range(w - 1, n):
        lo = t - w + 1
        x0 = x[lo]
        y0 = y[lo]
        xconst = True
        yconst = True
        sx = 0.0
        sy = 0.0
        for k in range(lo, t + 1):
            sx += x[k]
            sy += y[k]
            if x[k] != x0:
                xconst = False
            if y[k] != y0:
                yconst = False
        if xconst or yconst:
            continue
        mx = sx / w
        my = sy / w
        sxy = 0.0
        sxx = 0.0
        syy = 0.0
        for k in range(lo, t + 1):
            dx = x[k] - mx
            dy = y[k] - my
            sxy += dx * dy
            sxx += dx * dx
            syy += dy * dy
        r = sxy / np.sqrt(sxx * syy)
        if r > 1.0:
            r = 1.0
        elif r < -1.0:
            r = -1.0
        out[t] = r
        valid[t] = True
    return out, valid


def _rolling_pearson_np(x, y, w):
    n = x.shape[0]
    out = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    if n < w:
        return out, valid
    xs = np.lib.stride_tricks.sliding_window_view(x, w)
    ys = np.lib.stride_tricks.sliding_window_view(y, w)
    ok = (xs.max(axis=1) != xs.min(axis=1)) & (ys.max(axis=1) != ys.min(axis=1))
    dx = xs - xs.mean(axis=1, keepdims=True)
    dy = ys - ys.mean(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (dx * dy).sum(axis=1) / np.sqrt((dx * dx).sum(axis=1) * (dy * dy).sum(axis=1))
    r = np.clip(np.where(ok, r, 0.0), -1.0, 1.0)
    out[w - 1:] = r
    valid[w - 1:] = ok
    return out, valid


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit
def _rbf_cross_jit(A, B, gamma):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                s += diff * diff
            out[i, j] = np.exp(-gamma * s)
    return out


def _rbf_cross_np(A, B, gamma):
    sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * sq)


@njit
def _linear_cross_jit(A, B):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += A[i, k] * B[j, k]
            out[i, j] = s
    return out


def _linear_cross_np(A, B):
    return A @ B.T


# ---------------------------------------------------------------------------
# SMO for  min 1/2 a'Qa  s.t.  0 <= a_i <= C,  sum a = 1
# ---------------------------------------------------------------------------


@njit
def _smo_jit(Q, alpha, G, C, tol, max_iter, trace):
    n = Q.shape[0]
    it = 0
    gap = np.inf
    ntrace = trace.shape[0]
    while it < max_iter:
        i = -1
        j = -1
        gmin = np.inf
        gmax = -np.inf
        for t in range(n):
            if alpha[t] < C and G[t] < gmin:
                gmin = G[t]
                i = t
            if alpha[t] > 0.0 and G[t] > gmax:
                gmax = G[t]
                j = t
        if i < 0 or j < 0:
            gap = 0.0
            break
        gap = gmax - gmin
        if gap <= tol:
            break
        eta = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        delta = (G[j] - G[i]) / eta
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta >= room_i:
            delta = room_i
        if delta >= room_j:
            delta = room_j
        if delta == room_i:
            alpha[i] = C
        else:
            alpha[i] += delta
        if delta == room_j:
            alpha[j] = 0.0
        else:
            alpha[j] -= delta
        for t in range(n):
            G[t] += delta * (Q[i, t] - Q[j, t])
        it += 1
        if it <= ntrace:
            s = 0.0
            for t in range(n):
                s += alpha[t] * G[t]
            trace[it - 1] = 0.5 * s
    return it, gap


def _smo_step_np(alpha, G, C, row_i, row_j, i, j, qii, qjj):
    """One pair update shared by the numpy and row-cache solvers."""
    eta = qii + qjj - 2.0 * row_i[j]
    if eta <= 1e-12:
        eta = 1e-12
    delta = (G[j] - G[i]) / eta
    room_i = C - alpha[i]
    room_j = alpha[j]
    if delta >= room_i:
        delta = room_i
    if delta >= room_j:
        delta = room_j
    alpha[i] = C if delta == room_i else alpha[i] + delta
    alpha[j] = 0.0 if delta == room_j else alpha[j] - delta
    G += delta * (row_i - row_j)


def _select_pair(alpha, G, C):
    gu = np.where(alpha < C, G, np.inf)
    gl = np.where(alpha > 0.0, G, -np.inf)
    i = int(np.argmin(gu))
    j = int(np.argmax(gl))
    if not np.isfinite(gu[i]) or not np.isfinite(gl[j]):
        return -1, -1, 0.0
    return i, j, gl[j] - gu[i]


def _smo_rows(get_row, diag, alpha, G, C, tol, max_iter, trace):
    """SMO driven by a row accessor; used by the numpy path and the LRU cache."""
    it = 0
    gap = np.inf
    ntrace = trace.shape[0]
    while it < max_iter:
        i, j, gap = _select_pair(alpha, G, C)
        if i < 0:
            gap = 0.0
            break
        if gap <= tol:
            break
        _smo_step_np(alpha, G, C, get_row(i), get_row(j), i, j, diag[i], diag[j])
        it += 1
        if it <= ntrace:
            trace[it - 1] = 0.5 * float(alpha @ G)
    return it, gap


def _smo_np(Q, alpha, G, C, tol, max_iter, trace):
    return _smo_rows(lambda k: Q[k], np.diag(Q).copy(), alpha, G, C, tol, max_iter, trace)


# ---------------------------------------------------------------------------
# k-means assignment
# ---------------------------------------------------------------------------


@njit
def _assign_jit(X, centers):
    n, d = X.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            s = 0.0
            for q in range(d):
                diff = X[i, q] - centers[c, q]
                s += diff * diff
            if s < best:
                best = s
                arg = c
        labels[i] = arg
        dist[i] = best
    return labels, dist


def _assign_np(X, centers):
    sq = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(sq, axis=1).astype(np.int64)
    return labels, sq[np.arange(X.shape[0]), labels]


IMPLEMENTATIONS = {
    "rolling_pearson": (_rolling_pearson_jit, _rolling_pearson_np),
    "rbf_cross": (_rbf_cross_jit, _rbf_cross_np),
    "linear_cross": (_linear_cross_jit, _linear_cross_np),
    "smo": (_smo_jit, _smo_np),
    "assign": (_assign_jit, _assign_np),
}

_pick = 0 if HAVE_NUMBA else 1
rolling_pearson = IMPLEMENTATIONS["rolling_pearson"][_pick]
rbf_cross = IMPLEMENTATIONS["rbf_cross"][_pick]
linear_cross = IMPLEMENTATIONS["linear_cross"][_pick]
smo_full = IMPLEMENTATIONS["smo"][_pick]
assign = IMPLEMENTATIONS["assign"][_pick]
smo_rows = _smo_rows
