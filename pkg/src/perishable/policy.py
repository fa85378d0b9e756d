"""Base-stock optimization and the state-dependent marginal-analysis policy.

For an initial inventory vector x the order-up-to level solves

    g_x(q) = (theta+c) F_{D^m(x)}(q) - (h+r-c) (1 - F_D(q)) + h + (theta+c) w_ex = 0,

marginal internal cost plus externality.  g_x is nondecreasing in q, so
the root is found by bracketing on the grid and bisecting inside the cell.
With lead time l the shortage term uses the (l+1)-period effective demand
of the first l components instead of F_D.

Discrete demand yields two numbers per state: the root of the piecewise
linear interpolation of g_x, and the integer level actually used, the
smallest integer k with g_x(k) >= 0.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandModel, demand_stream
from .effective_demand import EffectiveDemand, grid_indices
from .params import CostParams, ParameterError
from .simulator import DEFAULT_BURN_IN, WastageCurve, wastage_curve

ROOT_TOL = 1e-6
MAX_EXPANSIONS = 6
MAX_TABLE_ENTRIES = 2_000_000
COARSE_PERIODS = 100_000
REFINE_PERIODS = 1_000_000


class SolverError(RuntimeError):
    pass


class BracketError(SolverError):
    pass


class TableTooLargeError(SolverError):
    pass


def order_amount(x: Sequence[float], q: float) -> float:
    """Order quantity raising the inventory position sum(x) to q."""
    return max(q - float(sum(x)), 0.0)


# ---------------------------------------------------------------- CBS level


@dataclass
class CbsResult:
    q_c: float
    cost: float
    std_error: float
    coarse: WastageCurve = field(repr=False)
    fine: WastageCurve = field(repr=False)
    expansions: int = 0

    def n(self, which: str) -> float:
        i = int(np.argmin(np.abs(self.fine.q - self.q_c)))
        return float(getattr(self.fine, which)[i])


def coarse_grid(model: DemandModel) -> np.ndarray:
    """Unit-spaced levels from 0 past the 0.999 demand quantile."""
    unit = max(1.0, model.grid_step)
    q_max = math.ceil(model.quantile(0.999) / unit) * unit + unit
    return np.arange(0.0, q_max + unit / 2, unit)


def _argmin(costs: np.ndarray) -> int:
    # ties go to the smaller level
    return int(np.flatnonzero(costs <= costs.min() + 1e-12)[0])


def optimize_cbs(params: CostParams, model: DemandModel,
                 coarse_periods: int = COARSE_PERIODS,
                 refine_periods: int = REFINE_PERIODS,
                 burn_in: int = DEFAULT_BURN_IN, seed: int | None = 0,
                 q_max: float | None = None, coarse: WastageCurve | None = None
                 ) -> CbsResult:
    """Minimize L(q) = h n_h + (r-c) n_s + (theta+c) n_w over base-stock levels.

    A coarse scan (unit spacing) on one CRN stream locates the minimizer,
    then a refinement on the demand grid around it runs at the longer
    horizon.  An argmin at the top of the scan doubles the range, up to
    ``MAX_EXPANSIONS`` times.  A precomputed ``coarse`` curve (it does not
    depend on costs) skips the first scan.
    """
    step = model.grid_step
    unit = max(1.0, step)
    if q_max is None:
        q_max = float(coarse_grid(model)[-1])
    demand = demand_stream(model, max(coarse_periods, refine_periods), seed)
    b_coarse = min(burn_in, coarse_periods // 10)
    for expansions in range(MAX_EXPANSIONS + 1):
        if coarse is None or expansions > 0:
            grid = np.arange(0.0, q_max + unit / 2, unit)
            coarse = wastage_curve(params, model, grid, coarse_periods, b_coarse, seed,
                                   demand=demand)
        grid = coarse.q
        q_max = float(grid[-1])
        k = _argmin(coarse.cost(params))
        if k < len(grid) - 1:
            break
        q_max *= 2
    else:
        raise BracketError(f"CBS argmin stays on the scan boundary up to q={q_max}")
    center = grid[k]
    half = unit if model.is_continuous else 2 * unit
    for _ in range(MAX_EXPANSIONS):
        lo = max(0.0, center - half)
        n_lo = int(round(lo / step))
        n_hi = int(round((center + half) / step))
        fine_grid = np.arange(n_lo, n_hi + 1) * step
        fine = wastage_curve(params, model, fine_grid, refine_periods, burn_in, seed,
                             demand=demand)
        costs = fine.cost(params)
        j = _argmin(costs)
        at_edge = (j == 0 and n_lo > 0) or j == len(fine_grid) - 1
        if not at_edge:
            break
        center = fine_grid[j]
    else:
        raise BracketError("CBS refinement did not settle")
    return CbsResult(q_c=float(fine_grid[j]), cost=float(costs[j]),
                     std_error=float(fine.cost_se(params)[j]), coarse=coarse, fine=fine,
                     expansions=expansions)


# ---------------------------------------------------------- marginal roots


@dataclass(frozen=True)
class MarginalSolution:
    x: tuple
    root: float
    level: float
    residual: float


def _check_w(w_ex: float, params: CostParams | None = None) -> None:
    """Zero lead time needs w_ex in (-1, 0].

    With a positive lead time ``w_ex`` is the total V_ex / (theta + c), which
    may be positive; it only has to keep g_x bracketed, i.e.
    -(h + theta + c) < V_ex < r - c.
    """
    if params is not None and params.lead:
        v = params.over * w_ex
        if not -(params.h + params.over) < v < params.under:
            raise ParameterError(
                f"V_ex={v!r} outside (-(h+theta+c), r-c); no root for lead time "
                f"{params.lead}")
        return
    if not -1.0 < w_ex <= 0.0:
        raise ParameterError(f"w_ex={w_ex!r} outside (-1, 0]")


def _sf_grid(model: DemandModel, n: int) -> np.ndarray:
    return 1.0 - model.grid_cdf(n)


def _interp(values: np.ndarray, t: float) -> float:
    k = min(int(math.floor(t)), len(values) - 2)
    frac = t - k
    return float(values[k] + frac * (values[k + 1] - values[k]))


class MarginalSolver:
    """Root finder for g_x sharing one effective-demand context."""

    def __init__(self, params: CostParams, model: DemandModel, w_ex: float,
                 ctx: EffectiveDemand | None = None, tol: float = ROOT_TOL):
        _check_w(w_ex, params)
        self.tol = tol
        self.params = params
        self.model = model
        self.w_ex = float(w_ex)
        self.step = model.grid_step
        q_hi = upper_root(params, model, w_ex)
        need = (q_hi if math.isfinite(q_hi) else model.grid_max) + 2 * self.step
        if ctx is None:
            ctx = EffectiveDemand(model, z_max=need)
        self.ctx = ctx.grow(need)
        self._set_grid()

    def _set_grid(self):
        n = self.ctx.n
        self._z = np.arange(n + 1) * self.step
        self._sf = _sf_grid(self.model, n)

    @property
    def const(self) -> float:
        p = self.params
        return p.h + p.over * self.w_ex

    def _sf_at(self, q: float) -> float:
        if self.model.is_continuous:
            return self.model.sf(q)
        return _interp(self._sf, q / self.step)

    def _cover(self, q: float) -> None:
        while q + self.step > self.ctx.z_max:
            self._expand()

    def g(self, x: Sequence[float], q: float) -> float:
        """g_x at any q >= 0 (interpolated CDFs for discrete demand)."""
        p = self.params
        self._cover(q)
        fm = self.ctx.cdf_at(x, p.m, q) if self.model.is_continuous else \
            _interp(self.ctx.values_at(x, p.m), q / self.step)
        return p.over * fm - (p.h + p.under) * self._sf_at(q) + self.const

    def _shortage_sf(self, x) -> np.ndarray:
        return self._sf

    def _grid_g(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.params
        fm = self.ctx.values_at(x, p.m)
        sf = self._shortage_sf(x)
        return p.over * fm - (p.h + p.under) * sf + self.const, fm, sf

    def _expand(self):
        self.ctx = self.ctx.grow(self.ctx.z_max * 2)
        self._set_grid()

    def solve(self, x: Sequence[float]) -> MarginalSolution:
        x = tuple(float(v) for v in x)
        if len(x) != self.params.m - 1:
            raise ParameterError(f"state {x} needs {self.params.m - 1} components")
        grid_indices(self.model, x)
        for _ in range(MAX_EXPANSIONS + 1):
            g, fm, sf = self._grid_g(x)
            hit = np.flatnonzero(g >= 0)
            if hit.size:
                break
            self._expand()
        else:
            raise BracketError(
                f"g_x never turns nonnegative up to q={self.ctx.z_max} for x={x} "
                f"(g at end {g[-1]:.3g})")
        k = int(hit[0])
        level = k * self.step
        if k == 0:
            return MarginalSolution(x, 0.0, 0.0, float(g[0]))
        if not self.model.is_continuous:
            # linear interpolation makes the root explicit
            root = (k - 1 + (-g[k - 1]) / (g[k] - g[k - 1])) * self.step
            return MarginalSolution(x, float(root), level, 0.0)
        root, res = self._bisect(x, fm, sf, k)
        return MarginalSolution(x, root, root, res)

    def _g_cont(self, fm, sf_fn, t):
        p = self.params
        return p.over * _interp(fm, t) - (p.h + p.under) * sf_fn(t) + self.const

    def _bisect(self, x, fm, sf, k):
        sf_fn = self._sf_fn(x, sf)
        lo, hi = float(k - 1), float(k)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._g_cont(fm, sf_fn, mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13 * max(1.0, hi):
                break
        g_lo, g_hi = self._g_cont(fm, sf_fn, lo), self._g_cont(fm, sf_fn, hi)
        root, res = (lo, g_lo) if abs(g_lo) < abs(g_hi) else (hi, g_hi)
        p = self.params
        if abs(res) > self.tol * (p.theta + p.h + p.r):
            raise SolverError(f"bisection residual {res:.3g} at x={x} exceeds tolerance")
        return root * self.step, float(res)

    def _sf_fn(self, x, sf):
        mean, step = self.model.mean, self.step
        return lambda t: math.exp(-t * step / mean)


class LeadTimeSolver(MarginalSolver):
    """Positive lead time: shortage tail is that of D^{l+1}(x^l)."""

    def _shortage_sf(self, x) -> np.ndarray:
        lead = self.params.lead
        if lead == 0:
            return self._sf
        return 1.0 - self.ctx.values_at(x, lead + 1)

    def _sf_fn(self, x, sf):
        if self.params.lead == 0:
            return super()._sf_fn(x, sf)
        return lambda t: _interp(sf, t)

    def g(self, x, q):
        if self.params.lead == 0:
            return super().g(x, q)
        p = self.params
        self._cover(q)
        t = q / self.step
        fm = _interp(self.ctx.values_at(x, p.m), t)
        fl = _interp(self.ctx.values_at(x, p.lead + 1), t)
        return p.over * fm - (p.h + p.under) * (1.0 - fl) + self.const


def solve_marginal(params: CostParams, model: DemandModel, x: Sequence[float],
                   w_ex: float, ctx: EffectiveDemand | None = None) -> MarginalSolution:
    """Order-up-to level balancing marginal cost and benefit at state ``x``.

    Lead time is ignored here (the zero-lead-time condition); use
    :func:`solve_marginal_leadtime` for the general case.
    """
    return MarginalSolver(params.replace(lead=0), model, w_ex, ctx).solve(x)


def solve_marginal_leadtime(params: CostParams, model: DemandModel, x: Sequence[float],
                            w_ex: float, ctx: EffectiveDemand | None = None
                            ) -> MarginalSolution:
    if params.lead == 0:
        return solve_marginal(params, model, x, w_ex, ctx)
    return LeadTimeSolver(params, model, w_ex, ctx).solve(x)


def upper_root(params: CostParams, model: DemandModel, w_ex: float) -> float:
    """q-double-dagger: root of g with the wastage CDF term dropped (inf if none).

    -(h+r-c) (1 - F_D(q)) + h + (theta+c) w_ex = 0 has a finite root iff
    h + (theta+c) w_ex > 0.  Discrete demand returns the interpolated root.
    """
    _check_w(w_ex, params)
    a = params.h + params.over * w_ex
    if a <= 0:
        return math.inf
    target = 1.0 - a / (params.h + params.under)
    if model.is_continuous:
        return model.quantile(target)
    k = model.quantile(target)
    kk = int(round(k / model.grid_step))
    if kk == 0:
        return 0.0
    lo = model.cdf((kk - 1) * model.grid_step)
    hi = model.cdf(kk * model.grid_step)
    return (kk - 1 + (target - lo) / (hi - lo)) * model.grid_step


def upper_level(params: CostParams, model: DemandModel, w_ex: float) -> float:
    """Grid-feasible counterpart of :func:`upper_root`."""
    q = upper_root(params, model, w_ex)
    if model.is_continuous or not math.isfinite(q):
        return q
    return math.ceil(q / model.grid_step - 1e-9) * model.grid_step


# ------------------------------------------------------------ policy table


@dataclass
class PolicyTable:
    """Order-up-to levels over the grid box [0, bound]^(m-1).

    ``levels`` drives simulation (array indexed by grid index per
    component); ``roots`` holds the unrounded roots.
    """

    params: CostParams
    model_id: str
    step: float
    roots: np.ndarray
    levels: np.ndarray
    residuals: np.ndarray
    w_ex: float
    tau: float
    q_c_star: float | None = None
    tol: float = ROOT_TOL
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.params.m

    @property
    def shape(self) -> tuple:
        return self.levels.shape

    def states(self):
        for idx in itertools.product(*(range(n) for n in self.shape)):
            yield idx, tuple(i * self.step for i in idx)

    def totals(self) -> np.ndarray:
        grids = np.meshgrid(*(np.arange(n) * self.step for n in self.shape), indexing="ij")
        return sum(grids) if grids else np.zeros(())

    def recurrent(self) -> np.ndarray:
        """Entries with total initial inventory at most tau."""
        return self.totals() <= self.tau + 1e-9

    def order_amounts(self) -> np.ndarray:
        return np.maximum(self.levels - self.totals(), 0.0)

    def level_at(self, x: Sequence[float]) -> float:
        idx = tuple(int(math.floor(v / self.step + 1e-9)) for v in x)
        return float(self.levels[idx])

    def to_csv(self, path) -> None:
        nd = self.m - 1
        with open(path, "w", newline="") as fh:
            meta = {"m": self.m, "lead": self.params.lead, "h": self.params.h,
                    "r": self.params.r, "theta": self.params.theta, "c": self.params.c,
                    "demand": self.model_id, "step": self.step, "w_ex": self.w_ex,
                    "tau": self.tau, "q_c_star": self.q_c_star, "tol": self.tol}
            meta.update(self.meta)
            for k, v in meta.items():
                fh.write(f"# {k}={_fmtv(v)}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(nd)] + ["q_root", "q_level", "order", "recurrent"])
            rec = self.recurrent()
            orders = self.order_amounts()
            for idx, x in self.states():
                w.writerow([_fmtv(v) for v in x] + [
                    _fmtv(float(self.roots[idx])), _fmtv(float(self.levels[idx])),
                    _fmtv(float(orders[idx])), int(bool(rec[idx]))])


def _fmtv(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return "" if v is None else str(v)


def read_policy_csv(path) -> tuple[dict, np.ndarray]:
    """(metadata, rows) of a table written by :meth:`PolicyTable.to_csv`."""
    meta = {}
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("# "):
            k, _, v = ln[2:].partition("=")
            meta[k] = v
        else:
            body.append(ln)
    reader = csv.reader(body)
    next(reader)
    for r in reader:
        rows.append([float(v) for v in r])
    return meta, np.array(rows)


def default_bound(params: CostParams, model: DemandModel, w_ex: float, tau: float) -> float:
    q = upper_level(params, model, w_ex)
    b = q if math.isfinite(q) else tau
    b = max(b, tau)
    return math.ceil(b / model.grid_step - 1e-9) * model.grid_step


def build_policy_table(params: CostParams, model: DemandModel, w_ex: float,
                       bound: float | None = None, ctx: EffectiveDemand | None = None,
                       q_c_star: float | None = None,
                       max_entries: int = MAX_TABLE_ENTRIES,
                       tol: float = ROOT_TOL) -> PolicyTable:
    """Solve the marginal condition at every grid state in [0, bound]^(m-1)."""
    solver = (LeadTimeSolver if params.lead else MarginalSolver)(params, model, w_ex, ctx,
                                                                  tol)
    nd = params.m - 1
    step = model.grid_step
    x0 = solver.solve((0.0,) * nd)
    tau = x0.level
    if bound is None:
        bound = default_bound(params, model, w_ex, tau)
    n = int(math.floor(bound / step + 1e-9)) + 1
    if n ** nd > max_entries:
        raise TableTooLargeError(
            f"{n}^{nd} = {n ** nd} states exceeds the table limit {max_entries}")
    shape = (n,) * nd
    roots = np.empty(shape)
    levels = np.empty(shape)
    res = np.empty(shape)
    for idx in itertools.product(*(range(n) for n in shape)):
        x = tuple(i * step for i in idx)
        try:
            s = solver.solve(x)
        except SolverError as exc:
            raise SolverError(f"state {x}: {exc}") from exc
        roots[idx], levels[idx], res[idx] = s.root, s.level, s.residual
    return PolicyTable(params=params, model_id=model.ident, step=step, roots=roots,
                       levels=levels, residuals=res, w_ex=float(w_ex), tau=float(tau),
                       q_c_star=q_c_star, tol=tol,
                       meta={"bound": bound, "tau_root": x0.root})


def axis_slice(params: CostParams, model: DemandModel, w_ex: float, upto: float,
               ctx: EffectiveDemand | None = None, axis: int | None = None
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x, root, level) along one component with the others at 0.

    Default axis is x_{m-1}, the horizontal axis of the order-amount plots.
    Works for any m, unlike a full table.
    """
    nd = params.m - 1
    if nd == 0:
        raise ParameterError("lifetime 1 has no state to slice")
    axis = nd - 1 if axis is None else axis
    solver = (LeadTimeSolver if params.lead else MarginalSolver)(params, model, w_ex, ctx)
    n = int(math.floor(upto / model.grid_step + 1e-9)) + 1
    xs = np.arange(n) * model.grid_step
    roots = np.empty(n)
    levels = np.empty(n)
    for i, v in enumerate(xs):
        x = [0.0] * nd
        x[axis] = float(v)
        s = solver.solve(x)
        roots[i], levels[i] = s.root, s.level
    return xs, roots, levels
