"""Marginal externality of the base-stock level.

The estimator splits w_ex(q) into two individually tractable pieces,

    w_ex(q) = W'(q) - E_X[ F_{D^m(X)}(q) ],

with W the stationary per-period wastage of the CBS policy q (derivative by
a finite difference on common random numbers) and X the stationary
initial inventory under that policy (expectation of the analytic
effective-demand CDF over simulated states).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandModel, demand_stream
from .effective_demand import EffectiveDemand
from .params import CostParams, ParameterError
from .simulator import (DEFAULT_BURN_IN, DEFAULT_MAX_SAMPLES, DEFAULT_STRIDE,
                        simulate)

DEFAULT_PERIODS = 1_000_000
CONTINUOUS_DELTA = 0.5


class EmptySampleError(ValueError):
    pass


@dataclass
class ExternalityEstimate:
    q_c: float
    w_ex: float
    V_ex: float
    std_error: float
    w_prime: float
    f_term: float
    se_w_prime: float
    se_f_term: float
    delta: float
    n_states: int
    one_sided: bool = False
    method: str = "forward"
    periods: int = 0
    seed: int | None = None
    state_sample: np.ndarray | None = field(default=None, repr=False)
    # positive lead time only: holding/shortage part of V_ex and the total
    # expressed in wastage units, V_ex / (theta + c)
    v_hs: float = 0.0
    se_v_hs: float = 0.0
    w_total: float | None = None
    se_total: float | None = None

    def __post_init__(self):
        if self.w_total is None:
            self.w_total = self.w_ex
        if self.se_total is None:
            self.se_total = self.std_error

    def row(self) -> dict:
        return {
            "q_c": self.q_c, "w_ex": self.w_ex, "V_ex": self.V_ex,
            "std_error": self.std_error, "w_prime": self.w_prime,
            "se_w_prime": self.se_w_prime, "f_term": self.f_term,
            "se_f_term": self.se_f_term, "delta": self.delta,
            "method": self.method, "one_sided": int(self.one_sided),
            "n_states": self.n_states, "v_hs": self.v_hs, "se_v_hs": self.se_v_hs,
            "w_total": self.w_total,
        }


def write_csv(estimates: Sequence[ExternalityEstimate], path) -> None:
    rows = [e.row() for e in estimates]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["q_c"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def default_delta(model: DemandModel) -> float:
    return CONTINUOUS_DELTA if model.is_continuous else model.grid_step


def mean_effective_cdf(model: DemandModel, states: np.ndarray, q: float, m: int,
                       ctx: EffectiveDemand | None = None) -> tuple[float, float]:
    """Mean and standard error of F_{D^m(x)}(q) over sampled states ``x``.

    States are snapped to the nearest grid point; the context only needs to
    reach ``q`` because curve values below the truncation point are exact.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise EmptySampleError("no stationary states to average over")
    step = model.grid_step
    if ctx is None or ctx.z_max < q:
        ctx = EffectiveDemand(model, z_max=max(q, step) + step)
    idx = np.rint(states / step).astype(np.int64)
    uniq, counts = np.unique(idx, axis=0, return_counts=True)
    vals = np.array([ctx.cdf_at(tuple(u * step), m, q) for u in uniq])
    n = counts.sum()
    mean = float(np.dot(vals, counts) / n)
    var = float(np.dot(counts, (vals - mean) ** 2) / max(n - 1, 1))
    return mean, math.sqrt(var / n)


def _batch_diff_se(b_hi: np.ndarray, b_lo: np.ndarray, n_post: int, scale: float,
                   weights=(0.0, 0.0, 1.0, 0.0)) -> float:
    """Batch-means error of a weighted (n_h, n_s, n_w, cost) difference quotient."""
    nb = b_hi.shape[0]
    sizes = np.bincount((np.arange(n_post) * nb) // n_post, minlength=nb).astype(float)
    d = (b_hi - b_lo) @ np.asarray(weights, dtype=float) / sizes / scale
    return float(d.std(ddof=1) / math.sqrt(nb))


def estimate_w_ex(params: CostParams, model: DemandModel, q_c: float,
                  periods: int = DEFAULT_PERIODS, burn_in: int = DEFAULT_BURN_IN,
                  seed: int | None = 0, delta: float | None = None,
                  central: bool | None = None, sample_stride: int = DEFAULT_STRIDE,
                  max_samples: int = DEFAULT_MAX_SAMPLES,
                  demand: np.ndarray | None = None,
                  ctx: EffectiveDemand | None = None,
                  holding_shortage: bool = True) -> ExternalityEstimate:
    """Estimate w_ex(q_c) and V_ex = (theta + c) * w_ex.

    With a positive lead time the holding and shortage of period l+1 also
    depend on the state, through D^{l+1}(x^l), so they carry an externality
    of their own: V_hs = d/dq [h n_h + (r-c) n_s] - E[h - (h+r-c) Fbar(q)]
    with Fbar the tail of D^{l+1}(X^l).  It is added to V_ex unless
    ``holding_shortage`` is false; at zero lead time it vanishes identically.

    Continuous demand uses a central difference with half-width ``delta``;
    discrete demand uses the forward difference W(q+1) - W(q), the exact
    discrete counterpart (it makes the lifetime-1 case cancel exactly).
    At q_c < delta the central difference falls back to a forward one and
    the estimate is flagged ``one_sided``.
    """
    if q_c < 0:
        raise ParameterError("q_c must be nonnegative")
    if not model.is_continuous:
        k = q_c / model.grid_step
        if abs(k - round(k)) > 1e-9:
            raise ParameterError(f"q_c={q_c!r} is not on the demand grid")
    delta = default_delta(model) if delta is None else float(delta)
    if central is None:
        central = model.is_continuous
    m = params.m
    if m == 1:
        return ExternalityEstimate(q_c, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, delta, 0,
                                   method="exact", periods=0, seed=seed)
    if demand is None:
        demand = demand_stream(model, periods, seed)
    one_sided = central and q_c - delta < 0
    base = simulate(params, model, float(q_c), periods, burn_in, seed, sample_stride,
                    max_samples, demand=demand)
    n_post = periods - burn_in
    if central and not one_sided:
        lo = simulate(params, model, q_c - delta, periods, burn_in, seed, 1, 0, demand=demand)
        hi = simulate(params, model, q_c + delta, periods, burn_in, seed, 1, 0, demand=demand)
        width = 2 * delta
        method = "central"
    else:
        lo = base
        hi = simulate(params, model, q_c + delta, periods, burn_in, seed, 1, 0, demand=demand)
        width = delta
        method = "forward"
    w_prime = (hi.n_w - lo.n_w) / width
    se_wp = _batch_diff_se(hi.batches, lo.batches, n_post, width)
    f_term, se_f = mean_effective_cdf(model, base.state_sample, q_c, m, ctx)
    w = w_prime - f_term
    se_w = math.hypot(se_wp, se_f)
    v_hs = se_hs = 0.0
    if params.lead and holding_shortage:
        lead, a = params.lead, params.h + params.under
        hs_prime = (params.h * (hi.n_h - lo.n_h) + params.under * (hi.n_s - lo.n_s)) / width
        se_hp = _batch_diff_se(hi.batches, lo.batches, n_post, width,
                               (params.h, params.under, 0.0, 0.0))
        f_l, se_fl = mean_effective_cdf(model, base.state_sample[:, :lead], q_c, lead + 1,
                                        ctx)
        v_hs = hs_prime - (params.h - a * (1.0 - f_l))
        se_hs = math.hypot(se_hp, a * se_fl)
    return ExternalityEstimate(
        q_c=float(q_c), w_ex=w, V_ex=params.over * w + v_hs,
        std_error=se_w, w_prime=w_prime, f_term=f_term,
        se_w_prime=se_wp, se_f_term=se_f, delta=delta,
        n_states=len(base.state_sample), one_sided=one_sided, method=method,
        periods=periods, seed=seed, state_sample=base.state_sample,
        v_hs=v_hs, se_v_hs=se_hs, w_total=w + v_hs / params.over,
        se_total=math.hypot(se_w, se_hs / params.over),
    )


def w_ex_curve(params: CostParams, model: DemandModel, q_grid: Sequence[float],
               periods: int = DEFAULT_PERIODS, burn_in: int = DEFAULT_BURN_IN,
               seed: int | None = 0, **kw) -> list[ExternalityEstimate]:
    """w_ex at each level of ``q_grid``, all on one demand stream."""
    demand = demand_stream(model, periods, seed)
    ctx = EffectiveDemand(model, z_max=max(q_grid) + 2 * model.grid_step)
    return [estimate_w_ex(params, model, float(q), periods, burn_in, seed,
                          demand=demand, ctx=ctx, **kw) for q in q_grid]


@dataclass
class _Shifted:
    levels: np.ndarray
    step: float


def reestimate_under_policy(params: CostParams, model: DemandModel, table,
                            periods: int = DEFAULT_PERIODS,
                            burn_in: int = DEFAULT_BURN_IN, seed: int | None = 0,
                            delta: float | None = None) -> ExternalityEstimate:
    """EXPERIMENTAL: one-step re-estimation of w_ex under a state-dependent policy.

    Shifts every order-up-to level of ``table`` by +delta (and -delta for
    continuous demand), differentiates wastage on common random numbers and
    averages F_{D^m(x)}(q(x)) over states sampled under ``table`` itself.
    This is not part of the default pipeline.
    """
    if params.m == 1:
        return ExternalityEstimate(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0,
                                   method="exact")
    delta = default_delta(model) if delta is None else float(delta)
    demand = demand_stream(model, periods, seed)
    levels = np.asarray(table.levels, dtype=float)
    step = float(table.step)
    base = simulate(params, model, table, periods, burn_in, seed, demand=demand)
    hi = simulate(params, model, _Shifted(levels + delta, step), periods, burn_in, seed,
                  1, 0, demand=demand)
    if model.is_continuous and levels.min() >= delta:
        lo = simulate(params, model, _Shifted(levels - delta, step), periods, burn_in,
                      seed, 1, 0, demand=demand)
        width, method = 2 * delta, "central"
    else:
        lo, width, method = base, delta, "forward"
    w_prime = (hi.n_w - lo.n_w) / width
    se_wp = _batch_diff_se(hi.batches, lo.batches, periods - burn_in, width)
    states = base.state_sample
    if len(states) == 0:
        raise EmptySampleError("no stationary states to average over")
    ctx = EffectiveDemand(model, z_max=float(levels.max()) + 2 * model.grid_step)
    vals = []
    for s in states:
        k = tuple(int(math.floor(v / step + 1e-9)) for v in s)
        q = float(levels[k])
        snapped = tuple(round(v / model.grid_step) * model.grid_step for v in s)
        vals.append(ctx.cdf_at(snapped, params.m, q))
    vals = np.array(vals)
    f_term = float(vals.mean())
    se_f = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    w = w_prime - f_term
    return ExternalityEstimate(
        q_c=float(levels.flat[0]), w_ex=w, V_ex=params.over * w,
        std_error=math.hypot(se_wp, se_f), w_prime=w_prime, f_term=f_term,
        se_w_prime=se_wp, se_f_term=se_f, delta=delta, n_states=len(states),
        method="experimental-" + method, periods=periods, seed=seed,
    )
