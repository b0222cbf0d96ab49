"""Numpy implementations of the tree kernels.

These define the reference behaviour; the compiled module must agree with
them exactly (all arithmetic is integer, so agreement is bitwise).

Trees are stored as flat int32 arrays ``feature, value, left, right, leaf``.
An internal node sends a row left when ``row[feature] == value``; leaves have
``left == -1`` and carry their class in ``leaf``.
"""

from __future__ import annotations

import numpy as np

LEAF = -1


def _split_score_better(a_num, a_den, b_num, b_den) -> bool:
    # a_num / a_den > b_num / b_den with positive denominators, exact in Python ints
    return a_num * b_den > b_num * a_den


def _best_split(X, y, n_classes):
    n, m = X.shape
    c = n_classes
    keys = (np.arange(m, dtype=np.int64)[None, :] * c + X) * c + y[:, None]
    table = np.bincount(keys.ravel(), minlength=m * c * c).reshape(m, c, c)
    total = np.bincount(y, minlength=c)
    parent_sq = int((total.astype(np.int64) ** 2).sum())
    best = None
    best_num = best_den = 0
    for j in range(m):
        for v in range(c):
            left = table[j, v]
            n_left = int(left.sum())
            n_right = n - n_left
            if n_left == 0 or n_right == 0:
                continue
            sq_left = int((left.astype(np.int64) ** 2).sum())
            sq_right = int(((total - left).astype(np.int64) ** 2).sum())
            num = sq_left * n_right + sq_right * n_left
            den = n_left * n_right
            # strictly positive Gini decrease only
            if num * n <= parent_sq * den:
                continue
            if best is None or _split_score_better(num, den, best_num, best_den):
                best, best_num, best_den = (j, v), num, den
    return best


def _majority(y, n_classes) -> int:
    return int(np.argmax(np.bincount(y, minlength=n_classes)))


def grow_tree(X, y, n_classes, max_depth):
    """Grows one Gini tree on categorical inputs; nodes numbered in preorder."""
    X = np.ascontiguousarray(X, dtype=np.int32)
    y = np.ascontiguousarray(y, dtype=np.int32)
    if X.shape[0] == 0:
        raise ValueError("cannot grow a tree on zero rows")
    feature, value, left, right, leaf = [], [], [], [], []

    def build(rows, depth):
        node = len(feature)
        feature.append(-1)
        value.append(-1)
        left.append(LEAF)
        right.append(LEAF)
        ys = y[rows]
        leaf.append(_majority(ys, n_classes))
        if depth >= max_depth or np.all(ys == ys[0]):
            return node
        split = _best_split(X[rows], ys, n_classes)
        if split is None:
            return node
        j, v = split
        go_left = X[rows, j] == v
        feature[node], value[node] = j, v
        left[node] = build(rows[go_left], depth + 1)
        right[node] = build(rows[~go_left], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return tuple(np.asarray(a, dtype=np.int32) for a in (feature, value, left, right, leaf))


def _leaf_index(feature, value, left, right, root, X):
    node = np.full(X.shape[0], root, dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        internal = left[node] != LEAF
        if not internal.any():
            return node
        idx = rows[internal]
        cur = node[idx]
        go_left = X[idx, feature[cur]] == value[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])


def forest_votes(feature, value, left, right, leaf, roots, X, n_classes):
    """Per-row vote counts, shape (rows, n_classes)."""
    X = np.ascontiguousarray(X, dtype=np.int32)
    counts = np.zeros((X.shape[0], n_classes), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for root in roots:
        cls = leaf[_leaf_index(feature, value, left, right, int(root), X)]
        np.add.at(counts, (rows, cls), 1)
    return counts


def masked_label_votes(feature, value, left, right, leaf, roots, samples, labels, background):
    """Votes for each sample's own label over background-completed coalitions.

    Entry ``[i, mask]`` sums, over background rows ``b``, the number of trees
    voting ``labels[i]`` on the row taking column ``j`` from sample ``i`` when
    bit ``j`` of ``mask`` is set and from ``b`` otherwise.
    """
    samples = np.ascontiguousarray(samples, dtype=np.int32)
    background = np.ascontiguousarray(background, dtype=np.int32)
    labels = np.asarray(labels, dtype=np.int64)
    ns, m = samples.shape
    nb = background.shape[0]
    n_masks = 1 << m
    bits = ((np.arange(n_masks)[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    # (ns, masks, nb, m)
    rows = np.where(bits[None, :, None, :], samples[:, None, None, :], background[None, None, :, :])
    flat = rows.reshape(-1, m)
    target = np.repeat(labels, n_masks * nb)
    hits = np.zeros(flat.shape[0], dtype=np.int64)
    for root in roots:
        cls = leaf[_leaf_index(feature, value, left, right, int(root), flat)]
        hits += cls == target
    return hits.reshape(ns, n_masks, nb).sum(axis=2)
