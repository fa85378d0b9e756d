"""Monte Carlo simulation of the periodic-review lost-sales FIFO system.

Each period: the shipment ordered ``lead`` periods ago arrives, a new order
raises the inventory position (on hand plus pipeline) to the policy level,
demand is served oldest-first, unmet demand is lost, units with one period
of life left are discarded, and holding is charged on everything left at
the end of the period, outdated units included.

The per-period loop runs in a compiled kernel when available; set
``PERISHABLE_PURE_PYTHON=1`` to force the pure-Python fallback.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demand import DemandModel, demand_stream
from .params import CostParams, ParameterError

if os.environ.get("PERISHABLE_PURE_PYTHON"):
    from . import _pykernels as _kernel
    BACKEND = "python"
else:
    try:
        from . import _kernels as _kernel
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        from . import _pykernels as _kernel
        BACKEND = "python"

DEFAULT_PERIODS = 1_000_000
DEFAULT_BURN_IN = 10_000
DEFAULT_STRIDE = 100
DEFAULT_MAX_SAMPLES = 10_000
N_BATCHES = 50


class PolicyLookupError(ValueError):
    """The policy has no entry for a state the simulation reached."""


@dataclass
class SimStats:
    n_h: float
    n_s: float
    n_w: float
    avg_cost: float
    se_h: float
    se_s: float
    se_w: float
    se_cost: float
    periods: int
    burn_in: int
    seed: int | None
    state_sample: np.ndarray = field(repr=False)
    batches: np.ndarray = field(repr=False)
    final_state: np.ndarray = field(repr=False)
    params: CostParams | None = field(default=None, repr=False)

    @property
    def decomposed_cost(self) -> float:
        p = self.params
        return p.h * self.n_h + p.under * self.n_s + p.over * self.n_w

    def row(self) -> dict:
        return {
            "n_h": self.n_h, "se_h": self.se_h,
            "n_s": self.n_s, "se_s": self.se_s,
            "n_w": self.n_w, "se_w": self.se_w,
            "avg_cost": self.avg_cost, "se_cost": self.se_cost,
            "periods": self.periods, "burn_in": self.burn_in, "seed": self.seed,
        }

    def to_csv(self, path) -> None:
        row = self.row()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(row))
            w.writerow([_fmt(v) for v in row.values()])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return "" if v is None else str(v)


def _se(batch_sums: np.ndarray, n_post: int) -> np.ndarray:
    nb = batch_sums.shape[0]
    sizes = np.bincount((np.arange(n_post) * nb) // n_post, minlength=nb).astype(float)
    means = batch_sums / sizes[:, None]
    return means.std(axis=0, ddof=1) / math.sqrt(nb)


def _policy_arrays(policy, params: CostParams, model: DemandModel):
    """(cbs level, flat table, shape, step) for the kernel."""
    if isinstance(policy, (int, float, np.integer, np.floating)):
        if policy < 0:
            raise ParameterError("base-stock level must be nonnegative")
        return float(policy), None, None, model.grid_step
    levels = np.asarray(policy.levels, dtype=float)
    if levels.ndim != params.m - 1:
        raise ParameterError(
            f"policy table has {levels.ndim} dimensions, lifetime {params.m} needs {params.m - 1}")
    if levels.ndim == 0:
        return float(levels), None, None, model.grid_step
    step = float(policy.step)
    return 0.0, np.ascontiguousarray(levels.ravel()), np.array(levels.shape, dtype=np.int64), step


def simulate(params: CostParams, model: DemandModel, policy,
             periods: int = DEFAULT_PERIODS, burn_in: int = DEFAULT_BURN_IN,
             seed: int | None = 0, sample_stride: int = DEFAULT_STRIDE,
             max_samples: int = DEFAULT_MAX_SAMPLES, demand: np.ndarray | None = None,
             n_batches: int = N_BATCHES) -> SimStats:
    """Simulate ``policy`` from the empty system and collect stationary statistics.

    ``policy`` is either a base-stock level (number) or a table-like object
    with ``levels`` (array over grid states) and ``step``.  Passing
    ``demand`` reuses a fixed stream (common random numbers); otherwise the
    stream is drawn from ``seed``.
    """
    if not periods > burn_in >= 0:
        raise ParameterError("need periods > burn_in >= 0")
    if demand is None:
        demand = demand_stream(model, periods, seed)
    else:
        demand = np.ascontiguousarray(demand[:periods], dtype=np.float64)
        if len(demand) < periods:
            raise ParameterError("demand stream shorter than the horizon")
    n_post = periods - burn_in
    n_batches = max(2, min(n_batches, n_post))
    cbs, table, shape, step = _policy_arrays(policy, params, model)
    state0 = np.zeros(params.m - 1)
    try:
        sums, batches, samples, final = _kernel.run_path(
            demand, params.m, params.lead, params.h, params.under, params.over,
            cbs, table, shape, step, burn_in, n_batches, max(1, sample_stride),
            max_samples, state0)
    except ValueError as exc:
        if "undefined policy entry" in str(exc):
            raise PolicyLookupError(str(exc)) from None
        raise
    means = sums / n_post
    se = _se(batches, n_post)
    return SimStats(
        n_h=float(means[0]), n_s=float(means[1]), n_w=float(means[2]),
        avg_cost=float(means[3]),
        se_h=float(se[0]), se_s=float(se[1]), se_w=float(se[2]), se_cost=float(se[3]),
        periods=periods, burn_in=burn_in, seed=seed,
        state_sample=samples, batches=batches, final_state=final, params=params,
    )


def merge_stats(runs: Sequence[SimStats]) -> SimStats:
    """Pool independent replications (weights = post-burn-in periods)."""
    if not runs:
        raise ValueError("nothing to merge")
    w = np.array([r.periods - r.burn_in for r in runs], dtype=float)
    w /= w.sum()

    def pool(attr):
        return float(sum(wi * getattr(r, attr) for wi, r in zip(w, runs)))

    def pool_se(attr):
        return float(math.sqrt(sum((wi * getattr(r, attr)) ** 2 for wi, r in zip(w, runs))))

    first = runs[0]
    return SimStats(
        n_h=pool("n_h"), n_s=pool("n_s"), n_w=pool("n_w"), avg_cost=pool("avg_cost"),
        se_h=pool_se("se_h"), se_s=pool_se("se_s"), se_w=pool_se("se_w"),
        se_cost=pool_se("se_cost"),
        periods=sum(r.periods for r in runs), burn_in=sum(r.burn_in for r in runs),
        seed=None,
        state_sample=np.concatenate([r.state_sample for r in runs]),
        batches=np.concatenate([r.batches for r in runs]),
        final_state=first.final_state, params=first.params,
    )


@dataclass
class WastageCurve:
    """Holding, shortage and wastage of base-stock levels on one CRN path."""

    q: np.ndarray
    n_h: np.ndarray
    n_s: np.ndarray
    n_w: np.ndarray
    se_h: np.ndarray
    se_s: np.ndarray
    se_w: np.ndarray
    batches: np.ndarray = field(repr=False)
    periods: int = 0
    burn_in: int = 0
    seed: int | None = None
    samples: list | None = field(default=None, repr=False)

    def cost(self, params: CostParams) -> np.ndarray:
        return params.h * self.n_h + params.under * self.n_s + params.over * self.n_w

    def cost_se(self, params: CostParams) -> np.ndarray:
        b = self.batches
        c = params.h * b[:, :, 0] + params.under * b[:, :, 1] + params.over * b[:, :, 2]
        n_post = self.periods - self.burn_in
        return np.array([_se(ci[:, None], n_post)[0] for ci in c])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q_c", "n_h", "se_h", "n_s", "se_s", "n_w", "se_w"])
            for i in range(len(self.q)):
                w.writerow([_fmt(float(x)) for x in (
                    self.q[i], self.n_h[i], self.se_h[i], self.n_s[i], self.se_s[i],
                    self.n_w[i], self.se_w[i])])


def wastage_curve(params: CostParams, model: DemandModel, q_grid: Sequence[float],
                  periods: int = DEFAULT_PERIODS, burn_in: int = DEFAULT_BURN_IN,
                  seed: int | None = 0, keep_samples: bool = False,
                  sample_stride: int = DEFAULT_STRIDE,
                  max_samples: int = DEFAULT_MAX_SAMPLES,
                  demand: np.ndarray | None = None) -> WastageCurve:
    """Evaluate base-stock levels in ``q_grid`` on a single shared demand stream."""
    q_grid = np.asarray(q_grid, dtype=float)
    if q_grid.size == 0:
        raise ParameterError("q_grid is empty")
    if np.any(np.diff(q_grid) < 0):
        raise ParameterError("q_grid must be sorted")
    if demand is None:
        demand = demand_stream(model, periods, seed)
    runs = [simulate(params, model, float(q), periods, burn_in, seed, sample_stride,
                     max_samples if keep_samples else 0, demand=demand)
            for q in q_grid]
    return WastageCurve(
        q=q_grid,
        n_h=np.array([s.n_h for s in runs]), n_s=np.array([s.n_s for s in runs]),
        n_w=np.array([s.n_w for s in runs]),
        se_h=np.array([s.se_h for s in runs]), se_s=np.array([s.se_s for s in runs]),
        se_w=np.array([s.se_w for s in runs]),
        batches=np.stack([s.batches for s in runs]),
        periods=periods, burn_in=burn_in, seed=seed,
        samples=[s.state_sample for s in runs] if keep_samples else None,
    )


@dataclass
class PeriodRecord:
    state: tuple
    order: float
    demand: float
    served: float
    short: float
    waste: float
    hold: float
    next_state: tuple


def trace(params: CostParams, model: DemandModel, policy, demand: Sequence[float],
          state0: Sequence[float] | None = None) -> list[PeriodRecord]:
    """Step-by-step record of the dynamics (pure Python, for inspection)."""
    m, lead = params.m, params.lead
    cbs, table, shape, step = _policy_arrays(policy, params, model)
    levels = None if table is None else np.asarray(policy.levels, dtype=float)
    s = list(state0) if state0 is not None else [0.0] * (m - 1)
    out = []
    for d in demand:
        total = sum(s)
        if levels is None:
            q = cbs
        else:
            idx = tuple(int(math.floor(v / step + 1e-9)) for v in s)
            if any(k >= n for k, n in zip(idx, levels.shape)):
                raise PolicyLookupError(f"undefined policy entry for state {tuple(s)}")
            q = float(levels[idx])
        order = max(q - total, 0.0)
        v = s + [order]
        rem = float(d)
        for j in range(m - lead):
            use = min(v[j], rem)
            v[j] -= use
            rem -= use
        hold = sum(v[: m - lead])
        nxt = v[1:]
        out.append(PeriodRecord(tuple(s), order, float(d), float(d) - rem, rem, v[0],
                                hold, tuple(nxt)))
        s = nxt
    return out
