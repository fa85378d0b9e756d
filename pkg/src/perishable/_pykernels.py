"""Pure-Python simulation kernel, used when the compiled one is unavailable.

Must stay operation-for-operation identical to ``_kernels.pyx``.
"""
import math

import numpy as np


def run_path(demand, m, lead, h, r, theta, cbs, table, shape, step,
             burn_in, n_batches, stride, max_samples, state0):
    n = len(demand)
    nd = m - 1
    onhand = m - lead
    use_table = table is not None and len(table) > 0
    mult = [0] * nd
    acc = 1
    if use_table:
        for j in range(nd - 1, -1, -1):
            mult[j] = acc
            acc *= int(shape[j])

    s = [float(v) for v in state0]
    v = [0.0] * m
    sums = np.zeros(4)
    batches = np.zeros((n_batches, 4))
    samples = np.zeros((max_samples, nd))
    n_samples = 0
    n_post = n - burn_in
    sh = ss = sw = sc = 0.0

    for t in range(n):
        total = 0.0
        for j in range(nd):
            total += s[j]
        if use_table:
            pos = 0
            for j in range(nd):
                k = int(math.floor(s[j] / step + 1e-9))
                if k >= shape[j]:
                    raise ValueError(
                        "undefined policy entry for state (%s)"
                        % ", ".join(repr(x) for x in s))
                pos += k * mult[j]
            q = table[pos]
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

    sums[0] = sh
    sums[1] = ss
    sums[2] = sw
    sums[3] = sc
    return sums, batches, samples[:n_samples].copy(), np.array(s, dtype=float)
