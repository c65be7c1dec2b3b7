"""Numpy implementation of the tree kernels.

The compiled module in ``_ctree.pyx`` mirrors these two functions with
identical floating point operation order, so both backends produce
bit-identical trees and predictions.
"""

import numpy as np

NO_SPLIT = (-1, 0.0)


def best_split_pos(xs, ys, min_leaf):
    """Best SSE-gain split of ``ys`` by sorted values ``xs``.

    xs must be ascending, ys aligned with it. Returns ``(pos, gain)``
    where ``pos`` is the size of the left side (split between
    ``xs[pos-1]`` and ``xs[pos]``), or ``(-1, 0.0)`` when no split with
    positive gain honors ``min_leaf``. Ties keep the smallest ``pos``.
    """
    n = xs.shape[0]
    if n < 2 * min_leaf or min_leaf < 1:
        return NO_SPLIT
    s1 = np.cumsum(ys)
    s2 = np.cumsum(ys * ys)
    total1 = s1[-1]
    total2 = s2[-1]
    parent = total2 - total1 * total1 / n

    k = np.arange(min_leaf, n - min_leaf + 1)
    valid = xs[k - 1] < xs[k]
    if not valid.any():
        return NO_SPLIT
    left1 = s1[k - 1]
    left2 = s2[k - 1]
    sse_left = left2 - left1 * left1 / k
    right1 = total1 - left1
    right2 = total2 - left2
    nr = n - k
    sse_right = right2 - right1 * right1 / nr
    gains = parent - sse_left - sse_right
    gains[~valid] = -np.inf
    best = int(np.argmax(gains))
    gain = float(gains[best])
    if not np.isfinite(gain) or gain <= 0.0:
        return NO_SPLIT
    return int(k[best]), gain


def tree_apply(feature, threshold, left_mask, seen_mask, default_left,
               is_cat, left, right, value, X):
    """Route rows of ``X`` through a flattened tree; return leaf values.

    X holds one column per model feature, float64; categorical cells are
    level codes (-1 for a level unknown to the model). A code absent
    from a node's ``seen_mask`` follows ``default_left``.
    """
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    for _ in range(value.shape[0] + 1):
        feat = feature[node]
        live = feat >= 0
        if not live.any():
            break
        idx = np.flatnonzero(live)
        nd = node[idx]
        fv = X[idx, feat[idx]]
        go_left = np.empty(idx.shape[0], dtype=bool)

        cat = is_cat[nd] != 0
        num = ~cat
        go_left[num] = fv[num] <= threshold[nd[num]]

        if cat.any():
            ndc = nd[cat]
            code = fv[cat].astype(np.int64)
            safe = np.where(code >= 0, code, 0).astype(np.uint64)
            seen = (code >= 0) & (((seen_mask[ndc] >> safe) & 1) == 1)
            gl = np.where(
                seen,
                ((left_mask[ndc] >> safe) & 1) == 1,
                default_left[ndc] == 1,
            )
            go_left[cat] = gl

        node[idx] = np.where(go_left, left[nd], right[nd])
    return value[node]
