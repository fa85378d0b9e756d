"""Two-step pipeline behind the command line.

Step 1 (``preprocess``) depends only on the lifetime, lead time, demand and
simulation settings: the CRN holding/shortage/wastage curves of base-stock
levels, w_ex along those levels and a store of effective-demand CDFs.  It
is cached on disk and reused across cost parameters.  Step 2 (``solve``)
picks the optimal base-stock level for the costs, estimates w_ex there and
solves the marginal condition for every state.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .analysis import (InstanceReport, bounds, cbs_flags, corollary1_chain,
                       indices, mc_mb_curves, min_lifetime, paired_deviation,
                       write_reports)
from .config import RunConfig
from .demand import demand_stream
from .dp import UnsupportedError, dp_order_amounts, dp_solve
from .effective_demand import EffectiveDemand
from .externality import (ExternalityEstimate, estimate_w_ex,
                          reestimate_under_policy, write_csv as write_wex_csv)
from .params import CostParams, ParameterError
from .policy import (CbsResult, PolicyTable, TableTooLargeError, axis_slice,
                     _check_w, build_policy_table, coarse_grid, optimize_cbs)
from .simulator import SimStats, WastageCurve, simulate, wastage_curve

log = logging.getLogger("perishable")

CACHE_VERSION = f"{__version__}/1"


class PipelineError(RuntimeError):
    pass


# ------------------------------------------------------------- step 1


@dataclass
class Preprocessed:
    key: str
    path: Path
    curve: WastageCurve
    w_ex: list[ExternalityEstimate]
    ctx: EffectiveDemand
    hit: bool


def cache_key(cfg: RunConfig) -> dict:
    """Everything step 1 depends on; costs are deliberately absent."""
    s = cfg.simulation
    return {
        "version": CACHE_VERSION,
        "m": cfg.params.m,
        "lead": cfg.params.lead,
        "demand": cfg.demand.ident,
        "curve_periods": s.curve_periods,
        "burn_in": s.burn_in,
        "seed": s.seed,
        "sample_stride": s.sample_stride,
        "max_samples": s.max_samples,
        "delta": cfg.solver.delta,
    }


def cache_dir(cfg: RunConfig) -> tuple[str, Path]:
    blob = json.dumps(cache_key(cfg), sort_keys=True).encode()
    key = hashlib.sha256(blob).hexdigest()[:16]
    return key, Path(cfg.output_dir) / "cache" / key


def _curve_burn(cfg: RunConfig) -> int:
    s = cfg.simulation
    return min(s.burn_in, s.curve_periods // 10)


def _w_ex_levels(cfg: RunConfig) -> np.ndarray:
    grid = coarse_grid(cfg.demand)
    return grid[grid > 0] if cfg.params.m > 1 else grid


def preprocess(cfg: RunConfig, force: bool = False) -> Preprocessed:
    key, path = cache_dir(cfg)
    manifest = path / "manifest.json"
    ctx = EffectiveDemand(cfg.demand, z_max=float(coarse_grid(cfg.demand)[-1])
                          + 2 * cfg.demand.grid_step)
    if manifest.exists() and not force:
        try:
            meta = json.loads(manifest.read_text())
            if meta.get("key") != cache_key(cfg):
                raise ValueError("key mismatch")
            pre = _load(path, key, ctx)
            log.info("preprocess: cache hit %s", key)
            return pre
        except (OSError, ValueError, KeyError) as exc:
            log.warning("preprocess: cache at %s unusable (%s); rebuilding", path, exc)
    elif force:
        log.info("preprocess: --force, rebuilding %s", key)
    return _build(cfg, key, path, ctx)


def _build(cfg: RunConfig, key: str, path: Path, ctx: EffectiveDemand) -> Preprocessed:
    s = cfg.simulation
    model, params = cfg.demand, cfg.params
    n = s.curve_periods
    demand = demand_stream(model, n, s.seed)
    curve = wastage_curve(params, model, coarse_grid(model), n, _curve_burn(cfg), s.seed,
                          demand=demand)
    est = [estimate_w_ex(params, model, float(q), n, _curve_burn(cfg), s.seed,
                         delta=cfg.solver.delta, sample_stride=s.sample_stride,
                         max_samples=s.max_samples, demand=demand, ctx=ctx)
           for q in _w_ex_levels(cfg)]
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / "curve.npz", q=curve.q, n_h=curve.n_h, n_s=curve.n_s, n_w=curve.n_w,
             se_h=curve.se_h, se_s=curve.se_s, se_w=curve.se_w, batches=curve.batches,
             periods=curve.periods, burn_in=curve.burn_in)
    curve.to_csv(path / "wastage_curve.csv")
    cols = ["q_c", "w_ex", "std_error", "w_prime", "f_term", "se_w_prime", "se_f_term",
            "delta", "n_states"]
    np.savez(path / "w_ex.npz", **{c: np.array([getattr(e, c) for e in est]) for c in cols},
             method=np.array([e.method for e in est]),
             one_sided=np.array([e.one_sided for e in est]))
    if est:
        write_wex_csv(est, path / "w_ex.csv")
    ctx.save(path / "cdf_store.npz", prefixes=_store_prefixes(cfg, ctx))
    (path / "manifest.json").write_text(json.dumps({"key": cache_key(cfg)}, indent=1,
                                                   sort_keys=True) + "\n")
    log.info("preprocess: built cache %s", key)
    return Preprocessed(key, path, curve, est, ctx, hit=False)


def _store_prefixes(cfg: RunConfig, ctx: EffectiveDemand) -> list[tuple[int, ...]]:
    """Curves on the x_{m-1} axis (other components 0) and at the empty state."""
    nd = cfg.params.m - 1
    if nd == 0:
        return []
    keys = [(0,) * i for i in range(1, nd + 1)]
    top = int(round(float(coarse_grid(cfg.demand)[-1]) / cfg.demand.grid_step))
    keys += [(0,) * (nd - 1) + (k,) for k in range(1, top + 1)]
    for k in keys:
        ctx.values_at(tuple(v * cfg.demand.grid_step for v in k) + (0.0,) * (nd - len(k)),
                      len(k) + 1)
    return keys


def _load(path: Path, key: str, ctx: EffectiveDemand) -> Preprocessed:
    with np.load(path / "curve.npz") as z:
        curve = WastageCurve(q=z["q"], n_h=z["n_h"], n_s=z["n_s"], n_w=z["n_w"],
                             se_h=z["se_h"], se_s=z["se_s"], se_w=z["se_w"],
                             batches=z["batches"], periods=int(z["periods"]),
                             burn_in=int(z["burn_in"]))
    est = []
    with np.load(path / "w_ex.npz") as z:
        for i in range(len(z["q_c"])):
            w = float(z["w_ex"][i])
            est.append(ExternalityEstimate(
                q_c=float(z["q_c"][i]), w_ex=w, V_ex=math.nan,
                std_error=float(z["std_error"][i]), w_prime=float(z["w_prime"][i]),
                f_term=float(z["f_term"][i]), se_w_prime=float(z["se_w_prime"][i]),
                se_f_term=float(z["se_f_term"][i]), delta=float(z["delta"][i]),
                n_states=int(z["n_states"][i]), one_sided=bool(z["one_sided"][i]),
                method=str(z["method"][i])))
    if (path / "cdf_store.npz").exists():
        ctx.load(path / "cdf_store.npz")
    return Preprocessed(key, path, curve, est, ctx, hit=True)


# ------------------------------------------------------------- step 2


@dataclass
class SolveResult:
    cfg: RunConfig
    pre: Preprocessed
    cbs: CbsResult
    estimate: ExternalityEstimate
    w_ex: float
    table: PolicyTable | None
    slice_x: np.ndarray
    slice_root: np.ndarray
    slice_level: np.ndarray
    sim: SimStats | None
    report: InstanceReport
    out: Path


def instance_name(params: CostParams, model) -> str:
    return (f"{model.kind}-m{params.m}-l{params.lead}"
            f"-h{params.h:g}-r{params.r:g}-th{params.theta:g}")


def usable_w_ex(est: ExternalityEstimate, params: CostParams | None = None) -> float:
    """The w_ex the solver uses.

    Zero lead time: clamp a slightly positive estimate to 0 and reject
    anything implausible.  Positive lead time: the total V_ex / (theta + c),
    which must keep the marginal condition bracketed.
    """
    if params is not None and params.lead and est.v_hs != 0.0:
        w = est.w_total
        try:
            _check_w(w, params)
        except ParameterError as exc:
            raise PipelineError(f"{exc} at q_c={est.q_c:g}") from None
        return w
    w = est.w_ex
    if w <= -1:
        raise PipelineError(f"w_ex estimate {w:.6g} <= -1 at q_c={est.q_c:g}")
    if w > 0:
        if w > 3 * est.std_error:
            raise PipelineError(
                f"w_ex estimate {w:.6g} exceeds 3 standard errors ({est.std_error:.3g})")
        return 0.0
    return w


def solve(cfg: RunConfig, force: bool = False, write: bool = True) -> SolveResult:
    pre = preprocess(cfg, force)
    s, model, params = cfg.simulation, cfg.demand, cfg.params
    cbs_params = params
    if params.lead and cfg.solver.reuse_zero_lead_cbs:
        cbs_params = params.replace(lead=0)
    coarse = pre.curve if cbs_params.lead == params.lead else None
    cbs = optimize_cbs(cbs_params, model, coarse_periods=s.curve_periods,
                       refine_periods=s.periods, burn_in=s.burn_in, seed=s.seed,
                       coarse=coarse)
    full = cfg.solver.lead_externality == "full"
    # the full lead-time externality is measured under the lead-time dynamics
    # even when the zero-lead CBS level is reused
    est = estimate_w_ex(params if full else cbs_params, model, cbs.q_c, s.periods,
                        s.burn_in, s.seed, delta=cfg.solver.delta,
                        sample_stride=s.sample_stride, max_samples=s.max_samples,
                        ctx=pre.ctx, holding_shortage=full)
    w = usable_w_ex(est, params)
    ctx = pre.ctx
    table = sim = None
    bound = cfg.solver.table_bound
    if params.m > 1:
        try:
            table = build_policy_table(params, model, w, bound=bound, ctx=ctx,
                                       q_c_star=cbs.q_c,
                                       max_entries=cfg.solver.max_table_entries,
                                   tol=cfg.solver.tol)
        except TableTooLargeError as exc:
            log.warning("solve: %s; reporting the x_%d axis only", exc, params.m - 1)
    if table is not None and cfg.solver.reestimate_w_ex:
        if params.lead:
            raise PipelineError("reestimate_w_ex supports zero lead time only")
        re = reestimate_under_policy(params, model, table, s.periods, s.burn_in, s.seed,
                                     delta=cfg.solver.delta)
        w2 = usable_w_ex(re)
        table = build_policy_table(params, model, w2, bound=bound, ctx=ctx,
                                   q_c_star=cbs.q_c,
                                   max_entries=cfg.solver.max_table_entries,
                                   tol=cfg.solver.tol)
        table.meta["w_ex_cbs"] = w
        table.meta["experimental_reestimate"] = 1
        w = w2
    if params.m == 1:
        slice_x = np.zeros(1)
        slice_root = slice_level = np.array([cbs.q_c])
        tau = cbs.q_c
    else:
        upto = table.meta["bound"] if table is not None else None
        if upto is None:
            b = bounds(params, model, w, ctx)
            upto = b.q_ddagger if math.isfinite(b.q_ddagger) else b.q_dagger
        slice_x, slice_root, slice_level = axis_slice(params, model, w, upto, ctx=ctx)
        tau = float(slice_level[0])
    if table is not None:
        sim = simulate(params, model, table, s.periods, s.burn_in, s.seed,
                       s.sample_stride, 0)
    elif params.m == 1:
        sim = simulate(params, model, cbs.q_c, s.periods, s.burn_in, s.seed,
                       s.sample_stride, 0)
    report = _report(cfg, cbs, est, w, table, slice_level, tau, sim)
    out = Path(cfg.output_dir) / instance_name(params, model)
    res = SolveResult(cfg, pre, cbs, est, w, table, slice_x, slice_root, slice_level, sim,
                      report, out)
    if write:
        _write_solve(res)
    return res


def _report(cfg, cbs, est, w, table, slice_level, tau, sim) -> InstanceReport:
    params, model, alpha = cfg.params, cfg.demand, cfg.solver.alpha
    eta = None
    if params.m > 1 and tau > 0:
        src = table if table is not None else SimpleNamespace(
            levels=slice_level, step=model.grid_step, tau=tau)
        eta = float(indices(src)[1])
    if params.m > 1:
        b = bounds(params, model, w)
        qd, qdd = b.q_dagger, b.q_ddagger
    else:
        qd = qdd = cbs.q_c
    m_ex = m_no = None
    if params.h > 0:
        m_ex = min_lifetime(params, model, alpha, "exact")
        m_no = min_lifetime(params, model, alpha, "normal")
    rep = InstanceReport(
        h=params.h, r=params.r, theta=params.theta, c=params.c, m=params.m,
        lead=params.lead, demand=model.ident, q_c_star=cbs.q_c, cbs_cost=cbs.cost,
        cbs_cost_se=cbs.std_error, w_ex=w, w_ex_se=est.std_error, tau=tau, eta=eta,
        n_w=sim.n_w if sim else math.nan, n_w_se=sim.se_w if sim else math.nan,
        L_h=sim.avg_cost if sim else math.nan, L_h_se=sim.se_cost if sim else math.nan,
        q_dagger=qd, q_ddagger=qdd, m_alpha_exact=m_ex, m_alpha_normal=m_no)
    if table is not None and params.lead == 0:
        f = cbs_flags(table, model, alpha)
        rep.cdf_small, rep.bounds_tight = f.cdf_small, f.bounds_tight
        rep.flat_recurrent, rep.flags_consistent = f.flat_recurrent, f.consistent
        rep.extra["flags_applicable"] = f.applicable
        if f.cdf_small and sim is not None:
            chain = corollary1_chain(table, model, sim.n_w, sim.se_w, w, est.std_error,
                                     alpha)
            rep.extra["corollary1_chain"] = chain["all"]
    rep.extra["w_ex_raw"] = est.w_ex
    if params.lead and cfg.solver.lead_externality == "full":
        rep.extra["V_hs"] = est.v_hs
        rep.extra["V_hs_se"] = est.se_v_hs
    rep.extra["w_ex_method"] = est.method
    return rep


def _write_solve(res: SolveResult) -> None:
    out = res.out
    out.mkdir(parents=True, exist_ok=True)
    cfg, params, model = res.cfg, res.cfg.params, res.cfg.demand
    if res.table is not None:
        res.table.meta["seed"] = cfg.simulation.seed
        res.table.to_csv(out / "policy_table.csv")
    with open(out / "order_amounts.csv", "w") as fh:
        fh.write(f"x{max(params.m - 1, 1)},q_root,q_level,order\n")
        for x, r, lv in zip(res.slice_x, res.slice_root, res.slice_level):
            fh.write(f"{x:.10g},{r:.10g},{lv:.10g},{max(lv - x, 0.0):.10g}\n")
    (out / "report.txt").write_text(res.report.to_text())
    write_reports([res.report], out / "report.csv")
    fine = res.cbs.fine
    with open(out / "cbs_curve.csv", "w") as fh:
        fh.write("q_c,L,se_L,n_h,n_s,n_w\n")
        cost, se = fine.cost(params), fine.cost_se(params)
        for i in range(len(fine.q)):
            fh.write(",".join(f"{v:.10g}" for v in (fine.q[i], cost[i], se[i], fine.n_h[i],
                                                      fine.n_s[i], fine.n_w[i])) + "\n")
    if params.m > 1 and params.lead == 0:
        top = max(res.report.q_ddagger if math.isfinite(res.report.q_ddagger) else 0.0,
                  res.report.tau) + 10 * max(model.grid_step, 0.5)
        q = np.arange(0, int(round(top / model.grid_step)) + 1) * model.grid_step
        mc_mb_curves(params.replace(lead=0), model, (0.0,) * (params.m - 1), res.w_ex, q,
                     ctx=res.pre.ctx).to_csv(out / "mc_mb_x0.csv")


def _require_dp(params: CostParams) -> None:
    if params.lead != 0 or params.m not in (2, 3):
        raise UnsupportedError(
            f"the DP benchmark needs lead time 0 and m in {{2, 3}} (got m={params.m}, "
            f"lead={params.lead})")


def compare(cfg: RunConfig, with_dp: bool = False, force: bool = False) -> InstanceReport:
    """Simulate the heuristic against DP (or the best CBS level) on one stream."""
    params, model, s = cfg.params, cfg.demand, cfg.simulation
    if with_dp:
        _require_dp(params)
    res = solve(cfg, force)
    if res.table is None and params.m > 1:
        raise UnsupportedError(
            "state space too large to simulate the heuristic table; raise "
            "[solver] max_table_entries or lower table_bound")
    demand = demand_stream(model, s.periods, s.seed)
    sim_h = res.sim
    if with_dp:
        sol = dp_solve(params, model, eps=cfg.solver.dp_eps)
        base = simulate(params, model, sol, s.periods, s.burn_in, s.seed, 1, 0,
                        demand=demand)
        res.report.dp_gain = sol.gain
        label = "dp"
        sol.to_csv(res.out / "dp_policy.csv")
    else:
        base = simulate(params, model, res.cbs.q_c, s.periods, s.burn_in, s.seed, 1, 0,
                        demand=demand)
        label = "cbs"
    d, se = paired_deviation(sim_h, base)
    rep = res.report
    rep.L_star, rep.L_star_se, rep.delta, rep.delta_se = base.avg_cost, base.se_cost, d, se
    rep.extra["baseline"] = label
    write_reports([rep], res.out / "compare.csv")
    (res.out / "report.txt").write_text(rep.to_text())
    return rep


def run_dp(cfg: RunConfig) -> dict:
    params, model, s = cfg.params, cfg.demand, cfg.simulation
    _require_dp(params)
    sol = dp_solve(params, model, eps=cfg.solver.dp_eps)
    out = Path(cfg.output_dir) / instance_name(params, model)
    out.mkdir(parents=True, exist_ok=True)
    sol.to_csv(out / "dp_policy.csv")
    xs, amounts = dp_order_amounts(sol)
    with open(out / "dp_order_amounts.csv", "w") as fh:
        fh.write(f"x{params.m - 1},order\n")
        for x, a in zip(xs, amounts):
            fh.write(f"{x:.10g},{a:.10g}\n")
    sim = simulate(params, model, sol, s.periods, s.burn_in, s.seed, 1, 0)
    tau = sol.tau
    eta = float(indices(sol)[1]) if tau > 0 else None
    summary = {
        "gain": sol.gain, "gain_lo": sol.gain_lo, "gain_hi": sol.gain_hi,
        "iterations": sol.iterations, "span": sol.span, "bound": sol.bound * sol.step,
        "tau": tau, "eta": eta, "sim_cost": sim.avg_cost, "sim_cost_se": sim.se_cost,
        "n_w": sim.n_w, "n_w_se": sim.se_w,
    }
    with open(out / "dp_summary.txt", "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={'' if v is None else (f'{v:.10g}' if isinstance(v, float) else v)}\n")
    return summary


def sweep(cfg: RunConfig, with_dp: bool = False, force: bool = False) -> list[InstanceReport]:
    """Compare every (h, r, theta) row of the sweep section (per lifetime)."""
    lifetimes = cfg.sweep.lifetimes or (cfg.params.m,)
    reports = []
    for m in lifetimes:
        for i, (h, r, th) in enumerate(cfg.sweep.rows):
            p = cfg.params.replace(h=h, r=r, theta=th, m=m)
            c = replace(cfg, params=p)
            # step 1 is shared by all rows of one lifetime; rebuild it once
            reports.append(compare(c, with_dp=with_dp, force=force and i == 0))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out / "sweep.csv")
    return reports
