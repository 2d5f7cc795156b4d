"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom dispatch to one path or the other according
to :data:`morphconn._accel.USE_NUMBA`. Both implementations perform the same
IEEE operations in the same order wherever that is achievable, so the MCF
and split kernels agree bit for bit; the incomplete beta kernels agree to a
few ulp (their log-gamma prefactors come from different libm routines).
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# smallest positive double; used to keep p-values inside (0, 1]
TINY = 5e-324
_FPMIN = 1e-300
_BETA_EPS = 1e-16
_BETA_MAXIT = 20000


# --------------------------------------------------------------------------
# pairwise region-profile distances


def _pair_index(n_regions):
    i, j = np.triu_indices(n_regions, k=1)
    return i.astype(np.int64), j.astype(np.int64)


@njit
def _mcf_numba(z, pi, pj):
    n, _, m = z.shape
    n_pairs = pi.shape[0]
    out = np.empty((n, n_pairs))
    for s in range(n):
        for e in range(n_pairs):
            a = pi[e]
            b = pj[e]
            acc = 0.0
            for k in range(m):
                d = z[s, a, k] - z[s, b, k]
                acc += d * d
            out[s, e] = math.sqrt(acc)
    return out


def _mcf_numpy(z, pi, pj, chunk=64):
    n, _, m = z.shape
    out = np.empty((n, pi.shape[0]))
    for start in range(0, n, chunk):
        block = z[start:start + chunk]
        acc = np.zeros((block.shape[0], pi.shape[0]))
        for k in range(m):
            d = block[:, pi, k] - block[:, pj, k]
            acc += d * d
        out[start:start + chunk] = np.sqrt(acc)
    return out


# --------------------------------------------------------------------------
# CART split search (binary labels coded 0/1)
#
# For a split with child counts (l0, l1 | r0, r1) the weighted child Gini is
# 2 * num / (n * den) with num = l0*l1*nR + r0*r1*nL and den = nL*nR, all
# integers. Candidates are compared by cross-multiplication, so exact ties
# stay ties and the (lower feature, lower threshold) rule is honoured; float
# rounding of 1 + 10/6 versus 16/6 would otherwise pick the wrong one. The
# products fit in int64 for up to MAX_SPLIT_ROWS rows.

MAX_SPLIT_ROWS = 10_000


@njit
def _best_split_numba(X, y, features, min_leaf):
    n = X.shape[0]
    best_f = -1
    best_t = np.nan
    best_num = 0
    best_den = 0
    ones = np.empty(n, dtype=np.int64)
    for fi in range(features.shape[0]):
        f = features[fi]
        col = X[:, f].copy()
        order = np.argsort(col, kind="mergesort")
        c1 = 0
        for r in range(n):
            c1 += y[order[r]]
            ones[r] = c1
        total1 = ones[n - 1]
        for i in range(n - 1):
            lo = col[order[i]]
            hi = col[order[i + 1]]
            if not lo < hi:
                continue
            n_left = i + 1
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            l1 = ones[i]
            l0 = n_left - l1
            r1 = total1 - l1
            r0 = n_right - r1
            num = l0 * l1 * n_right + r0 * r1 * n_left
            den = n_left * n_right
            if best_f < 0 or num * best_den < best_num * den:
                best_num = num
                best_den = den
                best_f = f
                mid = 0.5 * (lo + hi)
                if mid >= hi:
                    mid = lo
                best_t = mid
    return best_f, best_t, best_num, best_den


def _best_split_numpy(X, y, features, min_leaf):
    n = X.shape[0]
    best_f, best_t, best_num, best_den = -1, np.nan, 0, 0
    n_left = np.arange(1, n, dtype=np.int64)
    n_right = n - n_left
    leaf_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    for f in features:
        col = X[:, f]
        order = np.argsort(col, kind="mergesort")
        xs = col[order]
        ones = np.cumsum(y[order])
        valid = leaf_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        l1 = ones[:-1]
        l0 = n_left - l1
        r1 = ones[-1] - l1
        r0 = n_right - r1
        num = l0 * l1 * n_right + r0 * r1 * n_left
        den = n_left * n_right
        # the float key narrows the field; the exact comparison decides
        key = np.where(valid, num / den, np.inf)
        near = np.flatnonzero(valid & (key <= key.min() * (1 + 1e-12)))
        i = int(near[0])
        for j in near[1:]:
            if num[j] * den[i] < num[i] * den[j]:
                i = int(j)
        if best_f < 0 or num[i] * best_den < best_num * den[i]:
            best_num, best_den = int(num[i]), int(den[i])
            best_f = int(f)
            lo, hi = xs[i], xs[i + 1]
            mid = 0.5 * (lo + hi)
            best_t = float(lo if mid >= hi else mid)
    return best_f, best_t, best_num, best_den


# --------------------------------------------------------------------------
# flattened-tree traversal


@njit
def _apply_tree_numba(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = 0
        while left[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def _apply_tree_numpy(feature, threshold, left, right, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = left[node] >= 0
    while active.any():
        idx = rows[active]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = left[node] >= 0
    return node


# --------------------------------------------------------------------------
# regularized incomplete beta I_x(a, b), continued fraction by modified Lentz


@njit
def _betacf_scalar(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < _BETA_EPS:
            break
    return h


@njit
def _betainc_numba(a, b, x, xc):
    out = np.empty(a.shape[0])
    for k in range(a.shape[0]):
        ak, bk, xk, xck = a[k], b[k], x[k], xc[k]
        if xk <= 0.0:
            out[k] = 0.0
            continue
        if xck <= 0.0:
            out[k] = 1.0
            continue
        ln_bt = (math.lgamma(ak + bk) - math.lgamma(ak) - math.lgamma(bk)
                 + ak * math.log(xk) + bk * math.log(xck))
        bt = math.exp(ln_bt)
        if xk < (ak + 1.0) / (ak + bk + 2.0):
            out[k] = bt * _betacf_scalar(ak, bk, xk) / ak
        else:
            out[k] = 1.0 - bt * _betacf_scalar(bk, ak, xck) / bk
    return out


def _betacf_numpy(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _BETA_MAXIT + 1):
        if not active.any():
            break
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        h = np.where(active, h * (d * c), h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _FPMIN, _FPMIN, c)
        d = 1.0 / d
        de = d * c
        h = np.where(active, h * de, h)
        active &= ~(np.abs(de - 1.0) < _BETA_EPS)
    return h


_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def _betainc_numpy(a, b, x, xc):
    out = np.empty(a.shape[0])
    low = x <= 0.0
    high = (xc <= 0.0) & ~low
    out[low] = 0.0
    out[high] = 1.0
    mid = ~(low | high)
    if mid.any():
        am, bm, xm, xcm = a[mid], b[mid], x[mid], xc[mid]
        ln_bt = (_lgamma(am + bm).astype(float) - _lgamma(am).astype(float)
                 - _lgamma(bm).astype(float) + am * np.log(xm) + bm * np.log(xcm))
        bt = np.exp(ln_bt)
        direct = xm < (am + 1.0) / (am + bm + 2.0)
        res = np.empty(am.shape[0])
        if direct.any():
            res[direct] = (bt[direct] * _betacf_numpy(am[direct], bm[direct], xm[direct])
                           / am[direct])
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - (bt[flip] * _betacf_numpy(bm[flip], am[flip], xcm[flip])
                               / bm[flip])
        out[mid] = res
    return out


# --------------------------------------------------------------------------
# dispatch


def mcf_distances(z):
    """Euclidean distance between every pair of region profiles.

    Parameters
    ----------
    z : ndarray, shape (n_subjects, n_regions, n_measures)

    Returns
    -------
    ndarray, shape (n_subjects, n_regions * (n_regions - 1) // 2)
        Columns in lexicographic (i, j), i < j, order.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    pi, pj = _pair_index(z.shape[1])
    if USE_NUMBA:
        return _mcf_numba(z, pi, pj)
    return _mcf_numpy(z, pi, pj)


def split_search(X, y, features, min_leaf=1):
    """Exact form of :func:`best_split`: ``(feature, threshold, num, den)``.

    The weighted child Gini of the winning split is ``2 * num / (n * den)``.
    """
    features = np.asarray(features, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] > MAX_SPLIT_ROWS:
        raise ValueError(f"split search supports at most {MAX_SPLIT_ROWS} rows")
    if USE_NUMBA:
        f, t, num, den = _best_split_numba(X, y, features, int(min_leaf))
        return int(f), float(t), int(num), int(den)
    return _best_split_numpy(X, y, features, int(min_leaf))


def best_split(X, y, features, min_leaf=1):
    """Gini-optimal threshold split over the candidate ``features``.

    ``features`` must be sorted ascending: among exactly equal impurities
    the first found wins, which gives the (lower feature, lower threshold)
    tie rule. Returns ``(feature, threshold, weighted_child_impurity)`` with
    feature ``-1`` when no admissible threshold exists.
    """
    f, t, num, den = split_search(X, y, features, min_leaf)
    if f < 0:
        return f, t, np.inf
    return f, t, 2.0 * num / (X.shape[0] * den)


def apply_tree(feature, threshold, left, right, X):
    """Leaf node index reached by each row of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if USE_NUMBA:
        return _apply_tree_numba(feature, threshold, left, right, X)
    return _apply_tree_numpy(feature, threshold, left, right, X)


def betainc(a, b, x, xc=None):
    """Regularized incomplete beta function, elementwise.

    ``xc`` is ``1 - x``; pass it when it can be computed more accurately
    than by subtraction (as for the t-distribution tail).
    """
    a, b, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float),
                                  np.asarray(x, float))
    shape = x.shape
    xc = 1.0 - x if xc is None else np.broadcast_to(np.asarray(xc, float), shape)
    args = [np.ascontiguousarray(v, dtype=np.float64).ravel() for v in (a, b, x, xc)]
    if USE_NUMBA:
        out = _betainc_numba(*args)
    else:
        out = _betainc_numpy(*args)
    return out.reshape(shape)
