"""Compare the compiled and pure-Python simulation kernels.

    python benchmarks/bench_kernels.py [--periods N] [--m M] [--table]

Both kernels run the same demand stream; outputs must agree exactly.
"""
import argparse
import time

import numpy as np

from perishable import _pykernels
from perishable.demand import DemandModel, demand_stream

try:
    from perishable import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _args(demand, m, table):
    nd = m - 1
    if table:
        n = 400
        levels = np.full((n,) * nd, 20.0).ravel() if nd else None
        shape = np.array((n,) * nd, dtype=np.int64) if nd else None
    else:
        levels = shape = None
    return (demand, m, 0, 1.0, 10.0, 5.0, 20.0, levels, shape, 0.1, 1000, 50, 100,
            10_000, np.zeros(nd))


def _time(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--periods", type=int, default=200_000)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--table", action="store_true", help="use a policy table lookup")
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)

    demand = demand_stream(DemandModel.exponential(10.0), a.periods, seed=1)
    args = _args(demand, a.m, a.table)
    t_py, out_py = _time(_pykernels.run_path, args, 1)
    print(f"python    {a.periods} periods  {t_py:8.3f} s  {1e9 * t_py / a.periods:8.1f} ns/period")
    if _kernels is None:
        print("compiled  unavailable (extension not built)")
        return 0
    t_c, out_c = _time(_kernels.run_path, args, a.repeat)
    print(f"compiled  {a.periods} periods  {t_c:8.3f} s  {1e9 * t_c / a.periods:8.1f} ns/period")
    same = all(np.array_equal(x, y) for x, y in zip(out_py, out_c))
    print(f"speedup   {t_py / t_c:8.1f}x   identical={same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
