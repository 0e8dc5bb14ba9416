# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: shifted products over a grid and brute-force correlation."""

import numpy as np

cdef enum:
    MAXDIM = 12
    MAXSLOTS = 64


def shifted_product_sums(double[:, ::1] slots, long long[:, :, ::1] offsets, shape):
    """Sum over grid cells of products of index-shifted slot arrays.

    Parameters
    ----------
    slots : (m, N) array
        Slot arrays flattened in C order over ``shape``.
    offsets : (B, m, d) int64 array
        Index offsets; slot ``s`` is read at ``i + offsets[b, s]``.
    shape : tuple of int
        Grid shape.

    Returns
    -------
    ndarray of shape (B,)
        ``sum_i prod_s slots[s][i + offsets[b, s]]`` with zero outside the grid.
    """
    cdef Py_ssize_t m = slots.shape[0]
    cdef Py_ssize_t B = offsets.shape[0]
    cdef int d = len(shape)
    if d > MAXDIM or m > MAXSLOTS:
        raise ValueError("too many dimensions or slots")
    cdef Py_ssize_t dims[MAXDIM]
    cdef Py_ssize_t strides[MAXDIM]
    cdef Py_ssize_t lo[MAXDIM]
    cdef Py_ssize_t hi[MAXDIM]
    cdef Py_ssize_t idx[MAXDIM]
    cdef Py_ssize_t soff[MAXSLOTS]
    cdef Py_ssize_t a, s, b, i, base, o, last
    cdef double total, p
    cdef bint valid
    for a in range(d):
        dims[a] = shape[a]
    strides[d - 1] = 1
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * dims[a + 1]
    last = d - 1
    out = np.zeros(B)
    cdef double[::1] res = out
    for b in range(B):
        valid = True
        for a in range(d):
            lo[a] = 0
            hi[a] = dims[a]
            for s in range(m):
                o = offsets[b, s, a]
                if -o > lo[a]:
                    lo[a] = -o
                if dims[a] - o < hi[a]:
                    hi[a] = dims[a] - o
            if lo[a] >= hi[a]:
                valid = False
        if not valid:
            continue
        for s in range(m):
            soff[s] = 0
            for a in range(d):
                soff[s] += offsets[b, s, a] * strides[a]
        for a in range(d):
            idx[a] = lo[a]
        total = 0.0
        while True:
            base = 0
            for a in range(last):
                base += idx[a] * strides[a]
            for i in range(lo[last], hi[last]):
                p = 1.0
                for s in range(m):
                    p *= slots[s, base + i + soff[s]]
                    if p == 0.0:
                        break
                total += p
            a = last - 1
            while a >= 0:
                idx[a] += 1
                if idx[a] < hi[a]:
                    break
                idx[a] = lo[a]
                a -= 1
            if a < 0:
                break
        res[b] = total
    return out


def brute_correlation(double[::1] f0, double[::1] f1, shape):
    """Direct O(N^2) lattice correlation ``C[k] = sum_i f0[i] f1[i - k]``.

    Returns the flattened array over shifts ``k`` in ``[-(n_a-1), n_a-1]``
    per axis, C order, with shift zero at index ``n_a - 1``.
    """
    cdef int d = len(shape)
    if d > MAXDIM:
        raise ValueError("too many dimensions")
    cdef Py_ssize_t N = f0.shape[0]
    cdef Py_ssize_t dims[MAXDIM]
    cdef Py_ssize_t ostr[MAXDIM]
    cdef Py_ssize_t a, i, j, r, k
    cdef double v
    for a in range(d):
        dims[a] = shape[a]
    ostr[d - 1] = 1
    for a in range(d - 2, -1, -1):
        ostr[a] = ostr[a + 1] * (2 * dims[a + 1] - 1)
    coords_np = np.empty((N, d), dtype=np.int64)
    cdef long long[:, ::1] coords = coords_np
    for i in range(N):
        r = i
        for a in range(d - 1, -1, -1):
            coords[i, a] = r % dims[a]
            r = r // dims[a]
    cdef Py_ssize_t total = 1
    for a in range(d):
        total *= 2 * dims[a] - 1
    out_np = np.zeros(total)
    cdef double[::1] out = out_np
    for i in range(N):
        v = f0[i]
        if v == 0.0:
            continue
        for j in range(N):
            if f1[j] == 0.0:
                continue
            k = 0
            for a in range(d):
                k += (coords[i, a] - coords[j, a] + dims[a] - 1) * ostr[a]
            out[k] += v * f1[j]
    return out_np
