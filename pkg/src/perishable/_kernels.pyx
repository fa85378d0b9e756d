# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernel; mirrors ``_pykernels.run_path``."""
import numpy as np
from libc.math cimport floor


def run_path(const double[::1] demand, int m, int lead, double h, double r,
             double theta, double cbs, table, shape, double step,
             long burn_in, long n_batches, long stride, long max_samples,
             state0):
    cdef Py_ssize_t n = demand.shape[0]
    cdef int nd = m - 1
    cdef int onhand = m - lead
    cdef bint use_table = table is not None and len(table) > 0
    cdef const double[::1] tab
    cdef long[::1] shp = np.asarray(shape if shape is not None else [], dtype=np.int64).reshape(-1).astype(np.int_)
    cdef long[::1] mult = np.zeros(max(nd, 1), dtype=np.int_)
    cdef double[::1] s = np.array(state0, dtype=np.float64).reshape(-1).copy()
    cdef double[::1] v = np.zeros(m, dtype=np.float64)
    sums_arr = np.zeros(4)
    batches_arr = np.zeros((n_batches, 4))
    samples_arr = np.zeros((max_samples, max(nd, 0)))
    cdef double[:, ::1] batches = batches_arr
    cdef double[:, ::1] samples = samples_arr
    cdef Py_ssize_t t, b
    cdef int j
    cdef long k, pos, acc
    cdef long n_samples = 0
    cdef long n_post = n - burn_in
    cdef double total, q, order, rem, short, waste, hold, cost
    cdef double sh = 0.0, ss = 0.0, sw = 0.0, sc = 0.0

    if use_table:
        tab = np.ascontiguousarray(table, dtype=np.float64)
        acc = 1
        for j in range(nd - 1, -1, -1):
            mult[j] = acc
            acc *= shp[j]

    for t in range(n):
        total = 0.0
        for j in range(nd):
            total += s[j]
        if use_table:
            pos = 0
            for j in range(nd):
                k = <long>floor(s[j] / step + 1e-9)
                if k >= shp[j]:
                    raise ValueError(
                        "undefined policy entry for state (%s)"
                        % ", ".join(repr(float(s[i])) for i in range(nd)))
                pos += k * mult[j]
            q = tab[pos]
        else:
            q = cbs
        order = q - total if q > total else 0.0

        if t >= burn_in and (t - burn_in) % stride == 0 and n_samples < max_samples:
            for j in range(nd):
                samples[n_samples, j] = s[j]
            n_samples += 1

        for j in range(nd):
            v[j] = s[j]
        v[nd] = order

        rem = demand[t]
        for j in range(onhand):
            if rem <= 0.0:
                break
            if v[j] >= rem:
                v[j] -= rem
                rem = 0.0
            else:
                rem -= v[j]
                v[j] = 0.0
        short = rem
        waste = v[0]
        hold = 0.0
        for j in range(onhand):
            hold += v[j]
        for j in range(nd):
            s[j] = v[j + 1]

        if t >= burn_in:
            cost = h * hold + r * short + theta * waste
            b = (t - burn_in) * n_batches // n_post
            batches[b, 0] += hold
            batches[b, 1] += short
            batches[b, 2] += waste
            batches[b, 3] += cost
            sh += hold
            ss += short
            sw += waste
            sc += cost

    sums_arr[0] = sh
    sums_arr[1] = ss
    sums_arr[2] = sw
    sums_arr[3] = sc
    return sums_arr, batches_arr, samples_arr[:n_samples].copy(), np.asarray(s).copy()
