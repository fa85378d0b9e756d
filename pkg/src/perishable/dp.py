"""Average-cost dynamic programming benchmark for zero lead time, m in {2, 3}.

Work is done in grid-index units.  The state is the initial inventory
vector x (m-1 components, oldest first), the action the order-up-to level
y >= sum(x).  With D the discretized demand the period transition is

    m=2:  x1' = (y - max(D, x1))^+
    m=3:  x1' = (s - max(D, x1))^+,  x2' = (y - max(D, s))^+,  s = x1 + x2

and the one-period cost h E(y-D)^+ + (r-c) E(D-y)^+ + (theta+c) E(x1-D)^+.
Reachable states never exceed the bound in total, so the state space is
the simplex of totals <= bound.  Relative value iteration runs until the
span of T v - v drops below eps.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandModel
from .params import CostParams, ParameterError

MAX_ITER = 20_000
MAX_BOUND_RETRIES = 4
MAX_WORK = 5e9


class DpError(RuntimeError):
    pass


class UnsupportedError(DpError):
    pass


@dataclass
class DpSolution:
    params: CostParams
    model_id: str
    step: float
    bound: int
    levels: np.ndarray
    gain: float
    gain_lo: float
    gain_hi: float
    values: np.ndarray = field(repr=False)
    iterations: int = 0
    span: float = 0.0
    span_history: list = field(default_factory=list, repr=False)
    damping: float = 1.0

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def tau(self) -> float:
        return float(self.levels[(0,) * (self.m - 1)])

    def level_at(self, x: Sequence[float]) -> float:
        idx = tuple(int(math.floor(v / self.step + 1e-9)) for v in x)
        return float(self.levels[idx])

    def to_csv(self, path) -> None:
        nd = self.m - 1
        tau = self.tau
        with open(path, "w", newline="") as fh:
            p = self.params
            meta = {"m": p.m, "lead": p.lead, "h": p.h, "r": p.r, "theta": p.theta,
                    "c": p.c, "demand": self.model_id, "step": self.step,
                    "bound": self.bound * self.step, "gain": self.gain,
                    "iterations": self.iterations, "span": self.span}
            for k, v in meta.items():
                fh.write(f"# {k}={v:.10g}\n" if isinstance(v, float) else f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(nd)] + ["q_root", "q_level", "order", "recurrent"])
            for idx in np.ndindex(*self.levels.shape):
                q = self.levels[idx]
                if not np.isfinite(q):
                    continue
                x = [i * self.step for i in idx]
                tot = sum(x)
                w.writerow([f"{v:.10g}" for v in x] + [
                    f"{q:.10g}", f"{q:.10g}", f"{max(q - tot, 0.0):.10g}",
                    int(tot <= tau + 1e-9)])


def _demand_pmf(model: DemandModel, bound: int):
    n = max(model.n_grid(), bound)
    pmf = model.discretized_pmf(n)
    mean = float(np.dot(np.arange(n + 1), pmf))
    p = pmf[: bound + 1].copy()
    cdf = np.minimum(np.cumsum(p), 1.0)
    return p, cdf, mean


def _expectations(p: np.ndarray, mean: float, bound: int):
    """E(y-D)^+ and E(D-y)^+ for y = 0..bound (index units)."""
    y = np.arange(bound + 1)
    cdf = np.cumsum(p)
    partial = np.cumsum(p * y)
    over = y * cdf - partial
    under = mean - y + over
    return over, np.maximum(under, 0.0)


def _tail_sums(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """A[y, k] = sum_{k <= d <= y} p(d) v(y-d); shape (B+1, B+2)."""
    B = len(p) - 1
    y = np.arange(B + 1)[:, None]
    d = np.arange(B + 1)[None, :]
    ok = d <= y
    M = np.where(ok, p[None, :] * v[np.clip(y - d, 0, B)], 0.0)
    A = np.zeros((B + 1, B + 2))
    A[:, :B + 1] = np.cumsum(M[:, ::-1], axis=1)[:, ::-1]
    return A


class _M2:
    def __init__(self, params, p, cdf, mean, B):
        self.B = B
        over, under = _expectations(p, mean, B)
        h, r, th = params.h, params.under, params.over
        y = np.arange(B + 1)
        self.p, self.cdf = p, cdf
        self.cost = h * over[None, :] + r * under[None, :] + th * over[:, None]
        self.valid = y[None, :] >= y[:, None]
        self.shape = (B + 1,)

    def q_values(self, V):
        B = self.B
        A = _tail_sums(self.p, V)
        x1 = np.arange(B + 1)[:, None]
        y = np.arange(B + 1)[None, :]
        yy = np.broadcast_to(y, (B + 1, B + 1))
        k = np.broadcast_to(np.minimum(x1 + 1, B + 1), (B + 1, B + 1))
        S = A[yy, k] + (1.0 - self.cdf[yy]) * V[0]
        ev = self.cdf[x1] * V[np.clip(y - x1, 0, B)] + S
        return np.where(self.valid, self.cost + ev, np.inf)

    def bellman(self, V):
        Q = self.q_values(V)
        return Q.min(axis=1), Q.argmin(axis=1)


class _M3:
    def __init__(self, params, p, cdf, mean, B):
        self.B = B
        over, under = _expectations(p, mean, B)
        self.h, self.r, self.th = params.h, params.under, params.over
        self.over, self.under = over, under
        self.p, self.cdf = p, cdf
        self.shape = (B + 1, B + 1)
        i = np.arange(B + 1)
        self.mask = i[:, None] + i[None, :] <= B
        # P2[x2][x1, e] = p(x1 + x2 - e) for e < x2
        self._p2 = []
        for x2 in range(B + 1):
            x1 = np.arange(B + 1 - x2)[:, None]
            e = np.arange(x2)[None, :]
            self._p2.append(p[x1 + x2 - e])

    def bellman(self, V):
        B = self.B
        A0 = _tail_sums(self.p, V[0])
        tail = (1.0 - self.cdf) * V[0, 0]
        TV = np.full((B + 1, B + 1), np.inf)
        act = np.zeros((B + 1, B + 1), dtype=np.int64)
        for x2 in range(B + 1):
            n1 = B + 1 - x2
            x1 = np.arange(n1)[:, None]
            z = np.arange(n1)[None, :]
            s = x1 + x2
            y = s + z
            ok = y <= B
            yc = np.minimum(y, B)
            cost = (self.h * self.over[yc] + self.r * self.under[yc]
                    + self.th * self.over[x1])
            t1 = self.cdf[x1] * V[x2, :n1][None, :]
            t2 = self._p2[x2] @ V[:x2, :n1] if x2 else 0.0
            t3 = A0[yc, np.minimum(s + 1, B + 1)] + tail[yc]
            Q = np.where(ok, cost + t1 + t2 + t3, np.inf)
            TV[:n1, x2] = Q.min(axis=1)
            act[:n1, x2] = x2 + np.arange(n1) + Q.argmin(axis=1)
        return TV, act


def _default_bound(params: CostParams, model: DemandModel) -> int:
    target = 0.999
    q = model.quantile(target)
    return int(math.ceil(q / model.grid_step)) + 2


def dp_solve(params: CostParams, model: DemandModel, bound: float | None = None,
             eps: float | None = None, max_iter: int = MAX_ITER) -> DpSolution:
    """Optimal average cost and order-up-to levels by relative value iteration.

    ``bound`` caps the order-up-to level (inventory units); when the greedy
    action reaches it on a state the optimal policy can reach, the bound
    grows by half and the solve restarts.
    """
    if params.lead != 0:
        raise UnsupportedError("DP benchmark supports zero lead time only")
    if params.m not in (2, 3):
        raise UnsupportedError(f"DP benchmark supports m in {{2, 3}}, got m={params.m}")
    step = model.grid_step
    B = _default_bound(params, model) if bound is None else int(math.ceil(bound / step - 1e-9))
    if eps is None:
        eps = 1e-6 * model.mean
    for _ in range(MAX_BOUND_RETRIES + 1):
        sol = _solve_fixed(params, model, B, eps, max_iter)
        y0 = int(round(sol.tau / step))
        hit = _bound_hit(sol, y0)
        if not hit:
            return sol
        B = int(math.ceil(B * 1.5))
    raise DpError(f"greedy action keeps hitting the bound (last bound {B * step})")


def _bound_hit(sol: DpSolution, y0: int) -> bool:
    """Greedy level at the bound on some state reachable under the policy."""
    B = sol.bound
    if y0 >= B:
        return True
    lv = np.rint(np.nan_to_num(sol.levels, nan=0.0) / sol.step)
    i = np.arange(B + 1)
    tot = i if sol.m == 2 else i[:, None] + i[None, :]
    return bool(np.any(lv[tot <= y0] >= B))


def sol_mask(B: int) -> np.ndarray:
    i = np.arange(B + 1)
    return i[:, None] + i[None, :] <= B


def _solve_fixed(params, model, B, eps, max_iter) -> DpSolution:
    n_states = (B + 1) if params.m == 2 else (B + 1) * (B + 2) // 2
    work = n_states * (B + 1) * (1 if params.m == 2 else B / 4)
    if work > MAX_WORK:
        raise UnsupportedError(
            f"state space too large for the DP benchmark ({n_states} states, bound {B})")
    p, cdf, mean = _demand_pmf(model, B)
    core = (_M2 if params.m == 2 else _M3)(params, p, cdf, mean, B)
    step = model.grid_step
    for damping in (1.0, 0.5):
        res = _rvi(core, eps, max_iter, damping, step)
        if res is not None:
            break
    else:
        raise DpError(f"relative value iteration did not converge in {max_iter} iterations")
    V, act, lo, hi, it, hist = res
    levels = act.astype(float) * step
    if params.m == 3:
        levels[~sol_mask(B)] = np.nan
        V = np.where(sol_mask(B), V, np.nan)
    g = 0.5 * (lo + hi)
    return DpSolution(params=params, model_id=model.ident, step=step, bound=B,
                      levels=levels, gain=g, gain_lo=lo, gain_hi=hi, values=V,
                      iterations=it, span=hi - lo, span_history=hist, damping=damping)


def _rvi(core, eps, max_iter, damping, step):
    V = np.zeros(core.shape)
    hist = []
    ref = (0,) * len(core.shape)
    valid = np.ones(core.shape, bool) if len(core.shape) == 1 else sol_mask(core.B)
    # costs are in grid-index units; scaled by step on return
    for it in range(1, max_iter + 1):
        TV, act = core.bellman(V)
        diff = (TV - V)[valid]
        lo, hi = float(diff.min()), float(diff.max())
        hist.append(hi - lo)
        if (hi - lo) * step <= eps * damping:
            return V, act, lo / damping * step, hi / damping * step, it, hist
        newV = damping * TV + (1 - damping) * V
        newV = newV - newV[ref]
        V = np.where(valid, newV, 0.0)
    return None


def dp_order_amounts(sol: DpSolution, upto: float | None = None,
                     fixed: Sequence[float] | None = None, axis: int | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """(x, x_m) along one state axis (default x_{m-1}), other components fixed."""
    nd = sol.m - 1
    axis = nd - 1 if axis is None else axis
    if not 0 <= axis < nd:
        raise ParameterError(f"axis {axis} outside the {nd}-dimensional state")
    fixed = [0.0] * nd if fixed is None else [float(v) for v in fixed]
    if len(fixed) != nd:
        raise ParameterError("fixed components must match the state dimension")
    base = [int(round(v / sol.step)) for v in fixed]
    room = sol.bound - (sum(base) - base[axis]) if nd > 1 else sol.bound
    if any(b < 0 or b > sol.bound for b in base) or room < 0:
        raise ParameterError(f"slice at {fixed} lies outside the DP grid")
    n = room + 1
    if upto is not None:
        k = int(math.floor(upto / sol.step + 1e-9))
        if k > room:
            raise ParameterError(f"slice up to {upto} exceeds the DP grid")
        n = k + 1
    xs = np.arange(n) * sol.step
    amounts = np.empty(n)
    for i in range(n):
        idx = list(base)
        idx[axis] = i
        tot = sum(idx) * sol.step
        amounts[i] = max(sol.levels[tuple(idx)] - tot, 0.0)
    return xs, amounts
