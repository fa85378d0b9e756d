"""Diagnostics: cost deviation, order-amount indices, lifetime thresholds,
marginal cost/benefit curves, level bounds and the CBS-limit checks."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .demand import EXPONENTIAL, POISSON, DemandModel
from .effective_demand import EffectiveDemand
from .params import CostParams, ParameterError
from .policy import (MarginalSolver, solve_marginal_leadtime, upper_level,
                     upper_root,
                     _check_w)

DEFAULT_ALPHA = 0.01
MAX_LIFETIME = 10_000


class AnalysisError(ValueError):
    pass


# ------------------------------------------------------------ cost deviation


def cost_deviation(L_h: float, L_star: float) -> float:
    """Signed relative deviation (L_h - L*) / L*."""
    if not L_star > 0:
        raise AnalysisError(f"L* must be positive, got {L_star!r}")
    return (L_h - L_star) / L_star


def paired_deviation(stats_h, stats_star) -> tuple[float, float]:
    """Delta and its standard error from two runs on the same demand stream.

    The error uses batch means of the per-batch cost difference, which is
    where common random numbers pay off.
    """
    d = cost_deviation(stats_h.avg_cost, stats_star.avg_cost)
    bh, bs = stats_h.batches[:, 3], stats_star.batches[:, 3]
    if bh.shape != bs.shape:
        raise AnalysisError("runs have different batch layouts")
    n_post = stats_h.periods - stats_h.burn_in
    nb = len(bh)
    sizes = np.bincount((np.arange(n_post) * nb) // n_post, minlength=nb)
    diff = (bh - bs) / sizes
    se = float(diff.std(ddof=1) / math.sqrt(nb)) / stats_star.avg_cost
    return d, se


# ----------------------------------------------------------------- indices


def indices(table) -> tuple[float, float]:
    """(tau, eta) from the x_{m-1} axis with the other components at 0.

    ``table`` is anything with ``levels``, ``step`` and ``tau`` (a policy
    table or a DP solution).  eta = (x_m(tau) - x_m(0)) / tau with x_m(tau)
    read at the grid point nearest to tau.
    """
    levels = np.asarray(table.levels, dtype=float)
    if levels.ndim == 0:
        raise AnalysisError("lifetime 1 has no order-amount slice")
    step = float(table.step)
    tau = float(table.tau)
    if not tau > 0:
        raise AnalysisError(f"eta undefined for tau={tau!r}")
    j = int(round(tau / step))
    sl = levels[(0,) * (levels.ndim - 1) + (slice(None),)]
    missing = [k for k in (0, j) if k >= len(sl) or not np.isfinite(sl[k])]
    if missing:
        raise AnalysisError(
            f"table lacks x_{levels.ndim} = {', '.join(f'{k * step:g}' for k in missing)}")
    x_m0 = max(sl[0], 0.0)
    x_mt = max(sl[j] - j * step, 0.0)
    return tau, (x_mt - x_m0) / tau


# ------------------------------------------------------------ min lifetime


def _m_fold_cdf(model: DemandModel, m: int, q: float, method: str) -> float:
    if method == "normal":
        return float(stats.norm.cdf(q, loc=m * model.mean,
                                    scale=math.sqrt(m * model.variance)))
    if model.kind == EXPONENTIAL:
        return float(special.gammainc(m, q / model.mean))
    if model.kind == POISSON:
        return float(special.pdtr(math.floor(q + 1e-9), m * model.mean))
    k = int(math.floor(q / model.grid_step + 1e-9))
    base = model.grid_pmf(k)
    acc = base.copy()
    for _ in range(m - 1):
        acc = np.convolve(acc, base)[: k + 1]
    return float(min(acc.sum(), 1.0))


def min_lifetime(params: CostParams, model: DemandModel, alpha: float = DEFAULT_ALPHA,
                 method: str = "exact") -> int:
    """Smallest m with F_{D^m}(F_D^{-1}(gamma*)) <= alpha."""
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    if method not in ("exact", "normal"):
        raise ParameterError(f"unknown method {method!r}")
    if params.h <= 0:
        raise AnalysisError("the CBS limit needs h > 0; with h = 0 it is never reached")
    q = model.quantile(params.critical_ratio)
    for m in range(1, MAX_LIFETIME + 1):
        if _m_fold_cdf(model, m, q, method) <= alpha:
            return m
    raise AnalysisError(f"no lifetime up to {MAX_LIFETIME} meets alpha={alpha}")


# --------------------------------------------------------- MC / MB curves


@dataclass
class MarginalCurves:
    q: np.ndarray
    mc: np.ndarray
    mb: np.ndarray
    x: tuple = ()

    def intersection(self) -> tuple[float, float]:
        """(q, value) where MC - MB first turns nonnegative (linear interpolation)."""
        d = self.mc - self.mb
        hit = np.flatnonzero(d >= 0)
        if not hit.size:
            raise AnalysisError("MC and MB do not cross on this grid")
        k = int(hit[0])
        if k == 0:
            return float(self.q[0]), float(self.mc[0])
        t = -d[k - 1] / (d[k] - d[k - 1])
        q = self.q[k - 1] + t * (self.q[k] - self.q[k - 1])
        v = self.mc[k - 1] + t * (self.mc[k] - self.mc[k - 1])
        return float(q), float(v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "MC", "MB"])
            for row in zip(self.q, self.mc, self.mb):
                w.writerow([f"{v:.10g}" for v in row])


def mc_mb_curves(params: CostParams, model: DemandModel, x: Sequence[float], w_ex: float,
                 q_grid: Sequence[float], ctx: EffectiveDemand | None = None
                 ) -> MarginalCurves:
    """Marginal cost (theta+c) F_{D^m(x)}(q) and benefit (h+r-c) (1-F_D(q)) - h - (theta+c) w_ex.

    CDFs are linearly interpolated between grid points for both demand
    kinds, the same convention the root solver uses.
    """
    _check_w(w_ex)
    q = np.asarray(q_grid, dtype=float)
    if q.size and q.min() < 0:
        raise ParameterError("q grid must be nonnegative")
    solver = MarginalSolver(params.replace(lead=0), model, w_ex, ctx)
    top = float(q.max()) if q.size else 0.0
    while solver.ctx.z_max < top:
        solver._expand()
    x = tuple(float(v) for v in x)
    fm_vals = solver.ctx.values_at(x, params.m)
    t = q / model.grid_step
    fm = np.interp(t, np.arange(len(fm_vals)), fm_vals)
    if model.is_continuous:
        sf = np.array([model.sf(v) for v in q])
    else:
        sf = np.interp(t, np.arange(len(solver._sf)), solver._sf)
    mc = params.over * fm
    mb = (params.h + params.under) * sf - params.h - params.over * w_ex
    return MarginalCurves(q=q, mc=mc, mb=mb, x=x)


# ----------------------------------------------------------------- bounds


@dataclass(frozen=True)
class Bounds:
    q_dagger: float
    q_ddagger: float
    q_dagger_root: float
    q_ddagger_root: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.q_ddagger)


def bounds(params: CostParams, model: DemandModel, w_ex: float,
           ctx: EffectiveDemand | None = None) -> Bounds:
    """Lower bound (level at the empty state) and upper bound (no-wastage root).

    With a positive lead time the lower bound uses the lead-time condition;
    the upper bound keeps the one-period tail and is informative only.
    """
    s = solve_marginal_leadtime(params, model, (0.0,) * (params.m - 1), w_ex, ctx)
    return Bounds(q_dagger=s.level, q_ddagger=upper_level(params, model, w_ex),
                  q_dagger_root=s.root, q_ddagger_root=upper_root(params, model, w_ex))


# ------------------------------------------------------- CBS-limit checks


@dataclass
class CbsFlags:
    cdf_small: bool
    bounds_tight: bool
    flat_recurrent: bool
    cdf_at_dagger: float
    bound_gap: float
    spread: float
    gap_prob: float = math.nan
    spread_prob: float = math.nan
    applicable: bool = True

    @property
    def consistent(self) -> bool:
        """The flags agree (vacuously true when the upper bound is infinite)."""
        return not self.applicable or self.cdf_small == self.bounds_tight == self.flat_recurrent


def _interp_cdf(model: DemandModel, q: float) -> float:
    """F_D(q) with linear interpolation between grid points (the solver's convention)."""
    if not math.isfinite(q):
        return 1.0
    if model.is_continuous:
        return model.cdf(q)
    t = q / model.grid_step
    k = int(math.floor(t + 1e-12))
    lo = model.cdf(k * model.grid_step)
    hi = model.cdf((k + 1) * model.grid_step)
    return lo + (t - k) * (hi - lo)


def cbs_flags(table, model: DemandModel, alpha: float = DEFAULT_ALPHA,
              ctx: EffectiveDemand | None = None) -> CbsFlags:
    """The three equivalent CBS-limit conditions at one tolerance alpha.

    At the empty state the marginal condition gives
    (h+r-c) (F_D(q-double-dagger) - F_D(q-dagger)) = (theta+c) F_{D^m}(q-dagger),
    so level gaps are measured on that probability scale: the bound gap and
    the spread of recurrent roots, each times (h+r-c)/(theta+c), are compared
    with alpha.  On the integer grid a plain level tolerance would call two
    roots equal whenever they round to the same integer.  Raw level gaps are
    reported alongside.  The equivalence needs a finite upper bound
    (h + (theta+c) w_ex > 0); otherwise the flags are marked not applicable
    and ``bounds_tight`` is false.
    """
    params = table.params
    m = params.m
    b = bounds_from_table(table, model)
    q_root = b.q_dagger_root
    if ctx is None or ctx.z_max < q_root + model.grid_step:
        ctx = EffectiveDemand(model, z_max=q_root + 2 * model.grid_step)
    f0 = ctx.values_at((0.0,) * (m - 1), m)
    f = float(np.interp(q_root / model.grid_step, np.arange(len(f0)), f0))
    scale = (params.h + params.under) / params.over
    f_dag = _interp_cdf(model, q_root)
    gap_prob = scale * (_interp_cdf(model, b.q_ddagger_root) - f_dag)
    rec = table.recurrent()
    roots = np.asarray(getattr(table, "roots", table.levels))[rec]
    spread_prob = scale * (_interp_cdf(model, float(roots.max())) - f_dag)
    lv = np.asarray(table.levels)[rec]
    tiny = 1e-12
    finite = math.isfinite(b.q_ddagger_root)
    return CbsFlags(cdf_small=f <= alpha + tiny,
                    bounds_tight=finite and gap_prob <= alpha + tiny,
                    flat_recurrent=spread_prob <= alpha + tiny, cdf_at_dagger=f,
                    bound_gap=b.q_ddagger - b.q_dagger, spread=float(lv.max() - lv.min()),
                    gap_prob=gap_prob, spread_prob=spread_prob, applicable=finite)


def bounds_from_table(table, model: DemandModel) -> Bounds:
    p, w = table.params, table.w_ex
    root = table.meta.get("tau_root", table.tau)
    return Bounds(q_dagger=float(table.tau), q_ddagger=upper_level(p, model, w),
                  q_dagger_root=float(root), q_ddagger_root=upper_root(p, model, w))


def corollary1_chain(table, model: DemandModel, n_w: float, se_n_w: float,
                     w_ex: float, se_w_ex: float, alpha: float = DEFAULT_ALPHA) -> dict:
    """Consequences of the CBS limit, each with an explicit tolerance.

    n_w <= alpha * q-double-dagger (the CDF bound caps the wastage
    probability at alpha), |w_ex| <= alpha, and the empty-state level within
    one grid step of the newsvendor quantile; each allows 3 standard errors.
    """
    p = table.params
    qdd = upper_level(p, model, min(w_ex, 0.0))
    qdd = qdd if math.isfinite(qdd) else float(table.tau)
    newsvendor = model.quantile(p.critical_ratio)
    checks = {
        "n_w_small": n_w <= alpha * qdd + 3 * se_n_w,
        "w_ex_small": abs(w_ex) <= alpha + 3 * se_w_ex,
        "tau_at_newsvendor": abs(float(table.tau) - newsvendor) <= model.grid_step + 1e-9,
    }
    checks["all"] = all(checks.values())
    return checks


# ---------------------------------------------------------------- report


@dataclass
class InstanceReport:
    h: float
    r: float
    theta: float
    c: float
    m: int
    lead: int
    demand: str
    q_c_star: float
    cbs_cost: float
    cbs_cost_se: float
    w_ex: float
    w_ex_se: float
    tau: float
    eta: float | None
    n_w: float
    n_w_se: float
    L_h: float
    L_h_se: float
    q_dagger: float
    q_ddagger: float
    m_alpha_exact: int | None = None
    m_alpha_normal: int | None = None
    cdf_small: bool | None = None
    bounds_tight: bool | None = None
    flat_recurrent: bool | None = None
    flags_consistent: bool | None = None
    L_star: float | None = None
    L_star_se: float | None = None
    dp_gain: float | None = None
    delta: float | None = None
    delta_se: float | None = None
    extra: dict = field(default_factory=dict)

    def items(self) -> list[tuple[str, object]]:
        d = asdict(self)
        extra = d.pop("extra")
        return list(d.items()) + sorted(extra.items())

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items())

    def csv_header(self) -> list[str]:
        return [k for k, _ in self.items()]

    def csv_row(self) -> list[str]:
        return [_fmt(v) for _, v in self.items()]

    def to_csv(self, path) -> None:
        write_reports([self], path)

    def eta_in_band(self, tol: float = 0.05) -> bool:
        return self.eta is None or -1 - tol <= self.eta <= tol


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.10g}"
    return str(v)


def write_reports(reports: Sequence[InstanceReport], path) -> None:
    if not reports:
        raise AnalysisError("no reports to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(reports[0].csv_header())
        for r in reports:
            w.writerow(r.csv_row())
