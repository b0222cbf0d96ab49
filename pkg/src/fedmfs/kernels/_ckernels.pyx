# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree kernels. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.string cimport memset

cnp.import_array()

ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64
ctypedef unsigned long long u64

# cross products in the split comparison stay below 2**64 up to this many rows
MAX_GROW_ROWS = 5000


cdef struct Grower:
    const i32* X
    const i32* y
    int n_cols
    int n_classes
    int max_depth
    i32* idx
    i64* table
    i64* total
    i32* feature
    i32* value
    i32* left
    i32* right
    i32* leaf
    int n_nodes


cdef int _grow(Grower* g, int start, int stop, int depth) noexcept nogil:
    cdef int node = g.n_nodes
    g.n_nodes += 1
    cdef int n = stop - start
    cdef int c = g.n_classes
    cdef int m = g.n_cols
    cdef int i, j, v, k, r, lab, best_j = -1, best_v = -1, mid
    cdef i64 cnt, n_left, n_right
    cdef u64 sq_left, sq_right, parent_sq, num, den, best_num = 0, best_den = 0

    memset(g.total, 0, c * sizeof(i64))
    for i in range(start, stop):
        g.total[g.y[g.idx[i]]] += 1
    lab = 0
    for k in range(1, c):
        if g.total[k] > g.total[lab]:
            lab = k
    g.feature[node] = -1
    g.value[node] = -1
    g.left[node] = -1
    g.right[node] = -1
    g.leaf[node] = lab
    if depth >= g.max_depth or g.total[lab] == n:
        return node

    memset(g.table, 0, m * c * c * sizeof(i64))
    for i in range(start, stop):
        r = g.idx[i]
        lab = g.y[r]
        for j in range(m):
            g.table[(j * c + g.X[r * m + j]) * c + lab] += 1
    parent_sq = 0
    for k in range(c):
        parent_sq += <u64>(g.total[k] * g.total[k])

    for j in range(m):
        for v in range(c):
            n_left = 0
            sq_left = 0
            sq_right = 0
            for k in range(c):
                cnt = g.table[(j * c + v) * c + k]
                n_left += cnt
                sq_left += <u64>(cnt * cnt)
                cnt = g.total[k] - cnt
                sq_right += <u64>(cnt * cnt)
            n_right = n - n_left
            if n_left == 0 or n_right == 0:
                continue
            num = sq_left * <u64>n_right + sq_right * <u64>n_left
            den = <u64>n_left * <u64>n_right
            if num * <u64>n <= parent_sq * den:
                continue
            if best_j < 0 or num * best_den > best_num * den:
                best_j = j
                best_v = v
                best_num = num
                best_den = den
    if best_j < 0:
        return node

    # in-place partition, matching rows first
    mid = start
    for i in range(start, stop):
        r = g.idx[i]
        if g.X[r * m + best_j] == best_v:
            g.idx[i] = g.idx[mid]
            g.idx[mid] = r
            mid += 1
    g.feature[node] = best_j
    g.value[node] = best_v
    g.left[node] = _grow(g, start, mid, depth + 1)
    g.right[node] = _grow(g, mid, stop, depth + 1)
    return node


def grow_tree(X, y, int n_classes, int max_depth):
    cdef cnp.ndarray[i32, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.int32)
    cdef cnp.ndarray[i32, ndim=1, mode="c"] yc = np.ascontiguousarray(y, dtype=np.int32)
    cdef int n = Xc.shape[0]
    if n == 0:
        raise ValueError("cannot grow a tree on zero rows")
    if n > MAX_GROW_ROWS:
        raise OverflowError("too many rows for the compiled grower")
    cdef int cap = 2 * n - 1
    cdef cnp.ndarray[i32, ndim=1] idx = np.arange(n, dtype=np.int32)
    cdef cnp.ndarray[i64, ndim=1] table = np.zeros(Xc.shape[1] * n_classes * n_classes, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] total = np.zeros(n_classes, dtype=np.int64)
    out = [np.empty(cap, dtype=np.int32) for _ in range(5)]
    cdef cnp.ndarray[i32, ndim=1] feature = out[0]
    cdef cnp.ndarray[i32, ndim=1] value = out[1]
    cdef cnp.ndarray[i32, ndim=1] left = out[2]
    cdef cnp.ndarray[i32, ndim=1] right = out[3]
    cdef cnp.ndarray[i32, ndim=1] leaf = out[4]
    cdef Grower g
    g.X = &Xc[0, 0] if Xc.shape[1] > 0 else NULL
    g.y = &yc[0]
    g.n_cols = Xc.shape[1]
    g.n_classes = n_classes
    g.max_depth = max_depth
    g.idx = &idx[0]
    g.table = &table[0] if table.shape[0] > 0 else NULL
    g.total = &total[0]
    g.feature = &feature[0]
    g.value = &value[0]
    g.left = &left[0]
    g.right = &right[0]
    g.leaf = &leaf[0]
    g.n_nodes = 0
    with nogil:
        _grow(&g, 0, n, 0)
    return tuple(a[: g.n_nodes].copy() for a in out)


cdef inline int _walk(const i32[::1] feature, const i32[::1] value, const i32[::1] left,
                      const i32[::1] right, const i32[::1] leaf, int node, const i32* row) noexcept nogil:
    while left[node] != -1:
        if row[feature[node]] == value[node]:
            node = left[node]
        else:
            node = right[node]
    return leaf[node]


def forest_votes(feature, value, left, right, leaf, roots, X, int n_classes):
    cdef const i32[::1] f = np.ascontiguousarray(feature, dtype=np.int32)
    cdef const i32[::1] v = np.ascontiguousarray(value, dtype=np.int32)
    cdef const i32[::1] l = np.ascontiguousarray(left, dtype=np.int32)
    cdef const i32[::1] rt = np.ascontiguousarray(right, dtype=np.int32)
    cdef const i32[::1] lf = np.ascontiguousarray(leaf, dtype=np.int32)
    cdef const i32[::1] rs = np.ascontiguousarray(roots, dtype=np.int32)
    cdef const i32[:, ::1] Xc = np.ascontiguousarray(X, dtype=np.int32)
    cdef Py_ssize_t n = Xc.shape[0]
    counts_arr = np.zeros((n, n_classes), dtype=np.int64)
    cdef i64[:, ::1] counts = counts_arr
    cdef Py_ssize_t r, t
    if n == 0 or Xc.shape[1] == 0:
        if n and rs.shape[0]:
            for t in range(rs.shape[0]):
                counts_arr[:, lf[rs[t]]] += 1
        return counts_arr
    with nogil:
        for r in range(n):
            for t in range(rs.shape[0]):
                counts[r, _walk(f, v, l, rt, lf, rs[t], &Xc[r, 0])] += 1
    return counts_arr


def masked_label_votes(feature, value, left, right, leaf, roots, samples, labels, background):
    cdef const i32[::1] f = np.ascontiguousarray(feature, dtype=np.int32)
    cdef const i32[::1] v = np.ascontiguousarray(value, dtype=np.int32)
    cdef const i32[::1] l = np.ascontiguousarray(left, dtype=np.int32)
    cdef const i32[::1] rt = np.ascontiguousarray(right, dtype=np.int32)
    cdef const i32[::1] lf = np.ascontiguousarray(leaf, dtype=np.int32)
    cdef const i32[::1] rs = np.ascontiguousarray(roots, dtype=np.int32)
    cdef const i32[:, ::1] S = np.ascontiguousarray(samples, dtype=np.int32)
    cdef const i32[:, ::1] B = np.ascontiguousarray(background, dtype=np.int32)
    cdef const i64[::1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t ns = S.shape[0], nb = B.shape[0]
    cdef int m = S.shape[1]
    cdef Py_ssize_t n_masks = (<Py_ssize_t>1) << m
    out_arr = np.zeros((ns, n_masks), dtype=np.int64)
    cdef i64[:, ::1] out = out_arr
    cdef Py_ssize_t i, b, t, mask
    cdef int j
    cdef i64 hits
    cdef i32* row = <i32*>malloc((m if m > 0 else 1) * sizeof(i32))
    if row == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(ns):
                for mask in range(n_masks):
                    hits = 0
                    for b in range(nb):
                        for j in range(m):
                            if (mask >> j) & 1:
                                row[j] = S[i, j]
                            else:
                                row[j] = B[b, j]
                        for t in range(rs.shape[0]):
                            if _walk(f, v, l, rt, lf, rs[t], row) == y[i]:
                                hits += 1
                    out[i, mask] = hits
    finally:
        free(row)
    return out_arr
