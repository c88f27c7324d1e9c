# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loop-heavy kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def dilate_disk(mask, int radius):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, yy, xx
    cdef int dy, dx, r = radius
    if r <= 0:
        return np.asarray(m, dtype=bool).copy()
    for y in range(h):
        for x in range(w):
            if not m[y, x]:
                continue
            for dy in range(-r, r + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-r, r + 1):
                    if dx * dx + dy * dy > r * r:
                        continue
                    xx = x + dx
                    if 0 <= xx < w:
                        out[yy, xx] = 1
    return out_arr.astype(bool)


def knn_mean_distance(points, int k):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = p.shape[0]
    res_arr = np.zeros(m, dtype=np.float64)
    if m <= 1 or k <= 0:
        return res_arr
    if k > m - 1:
        k = m - 1
    cdef double[::1] res = res_arr
    best_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, s
    cdef int filled
    cdef double d, dx, dy, acc
    for i in range(m):
        filled = 0
        for j in range(m):
            if j == i:
                continue
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            d = sqrt(dx * dx + dy * dy)
            # insertion into a sorted buffer of the k smallest distances
            if filled < k:
                s = filled
                filled += 1
            elif d < best[k - 1]:
                s = k - 1
            else:
                continue
            while s > 0 and best[s - 1] > d:
                best[s] = best[s - 1]
                s -= 1
            best[s] = d
        acc = 0.0
        for s in range(k):
            acc += best[s]
        res[i] = acc / k
    return res_arr


def linear_sum_assignment(cost):
    c_in = np.asarray(cost, dtype=np.float64)
    if c_in.ndim != 2:
        raise ValueError("cost must be 2-D")
    if c_in.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if not np.all(np.isfinite(c_in)):
        raise ValueError("cost contains non-finite entries")
    transposed = c_in.shape[0] > c_in.shape[1]
    if transposed:
        c_in = c_in.T
    cdef double[:, ::1] a = np.ascontiguousarray(c_in)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef cnp.uint8_t[::1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    rows, cols = [], []
    for j in range(1, m + 1):
        if p[j]:
            rows.append(p[j] - 1)
            cols.append(j - 1)
    rows_a = np.array(rows, dtype=np.int64)
    cols_a = np.array(cols, dtype=np.int64)
    if transposed:
        rows_a, cols_a = cols_a, rows_a
    order = np.argsort(rows_a, kind="stable")
    return rows_a[order], cols_a[order]


def rle_encode(mask):
    cdef cnp.uint8_t[::1] flat = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    cdef Py_ssize_t n = flat.shape[0], i
    cdef long run = 0
    cdef cnp.uint8_t cur = 0
    out = []
    if n == 0:
        return out
    for i in range(n):
        if (flat[i] != 0) != (cur != 0):
            out.append(run)
            run = 0
            cur = 1 - cur
        run += 1
    out.append(run)
    return out


def rle_decode(counts, shape):
    cdef Py_ssize_t total = int(shape[0]) * int(shape[1])
    cdef Py_ssize_t pos = 0, c, i
    cdef int val = 0
    out_arr = np.zeros(total, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out = out_arr
    for c_obj in counts:
        c = int(c_obj)
        if c < 0 or pos + c > total:
            raise ValueError("run lengths do not cover the mask")
        if val:
            for i in range(pos, pos + c):
                out[i] = 1
        pos += c
        val = 1 - val
    if pos != total:
        raise ValueError("run lengths do not cover the mask")
    return out_arr.astype(bool).reshape((int(shape[0]), int(shape[1])))
