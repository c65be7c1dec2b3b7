# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree kernels.

Same contracts and float operation order as ``_pytree``; the two
backends are interchangeable bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def best_split_pos(double[::1] xs, double[::1] ys, Py_ssize_t min_leaf):
    cdef Py_ssize_t n = xs.shape[0]
    if n < 2 * min_leaf or min_leaf < 1:
        return -1, 0.0

    cdef double total1 = 0.0, total2 = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        total1 += ys[i]
        total2 += ys[i] * ys[i]
    cdef double parent = total2 - total1 * total1 / n

    cdef double s1 = 0.0, s2 = 0.0
    cdef double left1, left2, right1, right2, sse_left, sse_right, gain
    cdef double best_gain = -1.0
    cdef Py_ssize_t best_pos = -1, k, nr
    for i in range(n - min_leaf):
        s1 += ys[i]
        s2 += ys[i] * ys[i]
        k = i + 1
        if k < min_leaf:
            continue
        if not xs[i] < xs[k]:
            continue
        left1 = s1
        left2 = s2
        sse_left = left2 - left1 * left1 / k
        right1 = total1 - left1
        right2 = total2 - left2
        nr = n - k
        sse_right = right2 - right1 * right1 / nr
        gain = parent - sse_left - sse_right
        if gain > best_gain:
            best_gain = gain
            best_pos = k
    if best_pos < 0 or not best_gain > 0.0:
        return -1, 0.0
    return best_pos, best_gain


def tree_apply(int[::1] feature, double[::1] threshold,
               cnp.uint64_t[::1] left_mask, cnp.uint64_t[::1] seen_mask,
               cnp.uint8_t[::1] default_left, cnp.uint8_t[::1] is_cat,
               int[::1] left, int[::1] right, double[::1] value,
               double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r
    cdef int node, f
    cdef double fv
    cdef long code
    cdef bint go_left
    for r in range(n):
        node = 0
        f = feature[node]
        while f >= 0:
            fv = X[r, f]
            if is_cat[node]:
                code = <long> fv
                if code >= 0 and code < 64 and ((seen_mask[node] >> <unsigned long> code) & 1) == 1:
                    go_left = ((left_mask[node] >> <unsigned long> code) & 1) == 1
                else:
                    go_left = default_left[node] == 1
            else:
                go_left = fv <= threshold[node]
            node = left[node] if go_left else right[node]
            f = feature[node]
        out[r] = value[node]
    return out_arr
