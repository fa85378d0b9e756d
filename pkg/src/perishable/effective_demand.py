"""CDF of the i-period effective demand D^i(x^{i-1}).

Effective demand is the total outflow (served demand plus wastage) over
periods 1..i for initial inventory ``x``, excluding period-i wastage.  It
obeys ``D^{i+1} = max(D^i, x^i) + D_{i+1}`` where ``x^i`` is the prefix sum of
the inventory vector, which gives the modified convolution

    F_{i+1}(z) = int_0^{z - x^i} F_i(z - xi) f_D(xi) dxi    for z > x^i

and 0 below.  Discrete demand is convolved exactly (atoms at the upper
limit included); continuous demand uses the trapezoid rule on the grid.

Curves are computed on ``[0, z_max]`` only.  Values there do not depend on
``z_max``, so truncation costs nothing but the reported tail mass.
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demand import DemandModel


class LevelError(ValueError):
    pass


class OffGridError(ValueError):
    pass


def grid_indices(model: DemandModel, x: Sequence[float]) -> tuple[int, ...]:
    """Grid indices of an inventory vector; off-grid components raise."""
    out = []
    for v in x:
        if v < 0:
            raise OffGridError(f"negative inventory component {v!r}")
        k = v / model.grid_step
        kr = round(k)
        if abs(k - kr) > 1e-7:
            raise OffGridError(f"inventory component {v!r} is off the {model.grid_step} grid")
        out.append(int(kr))
    return tuple(out)


def snap_nearest(model: DemandModel, x: Sequence[float]) -> tuple[float, ...]:
    step = model.grid_step
    return tuple(round(v / step) * step for v in x)


@dataclass(frozen=True)
class EffectiveDemandCdf:
    level: int
    base: tuple[float, ...]
    step: float
    values: np.ndarray
    truncation_mass: float

    @property
    def z(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.step

    def at(self, q: float, interpolate: bool = True) -> float:
        return _lookup(self.values, self.step, q, interpolate)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "F"])
            for z, f in zip(self.z, self.values):
                w.writerow([f"{z:.10g}", f"{f:.12g}"])


def _lookup(values: np.ndarray, step: float, q: float, interpolate: bool) -> float:
    if q < 0:
        return 0.0
    t = q / step
    n = len(values) - 1
    if t >= n:
        if t > n + 1e-9:
            raise ValueError(f"q={q!r} beyond the computed range {n * step!r}")
        return float(values[n])
    if not interpolate:
        return float(values[int(math.floor(t + 1e-9))])
    k = int(math.floor(t))
    frac = t - k
    if frac < 1e-12:
        return float(values[k])
    return float(values[k] + frac * (values[k + 1] - values[k]))


class EffectiveDemand:
    """Memoized effective-demand CDFs for one demand model.

    One instance per run; the memo is keyed by (level, prefix of x) so that
    vectors sharing prefixes share work.  Insertions are serialized with a
    lock, reads are lock-free.
    """

    def __init__(self, model: DemandModel, z_max: float | None = None):
        self.model = model
        self.step = model.grid_step
        if z_max is None:
            z_max = model.grid_max
        self.n = max(model.n_grid(z_max), 1)
        self._base = model.grid_cdf(self.n)
        if model.is_continuous:
            self._kernel = model.grid_density(self.n)
        else:
            self._kernel = model.grid_pmf(self.n)
        self._memo: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def z_max(self) -> float:
        return self.n * self.step

    def grow(self, z_needed: float) -> "EffectiveDemand":
        """A context covering at least ``z_needed`` (self if already enough)."""
        if z_needed <= self.z_max:
            return self
        z = self.z_max
        while z < z_needed:
            z *= 2
        return EffectiveDemand(self.model, z)

    def _check(self, x, i):
        idx = grid_indices(self.model, x)
        if not 1 <= i <= len(idx) + 1:
            raise LevelError(f"level {i} outside [1, {len(idx) + 1}]")
        return idx

    def _curve(self, prefix: tuple[int, ...]) -> np.ndarray:
        """Values of F_{len(prefix)+1} for the index prefix ``prefix``."""
        if not prefix:
            return self._base
        key = prefix
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        prev = self._curve(prefix[:-1])
        a = sum(prefix)
        vals = self._convolve(prev, a)
        with self._lock:
            self._memo.setdefault(key, vals)
        return vals

    def _convolve(self, prev: np.ndarray, a: int) -> np.ndarray:
        n = self.n
        out = np.zeros(n + 1)
        if a > n:
            return out
        g = prev[a:]
        k = self._kernel
        if not self.model.is_continuous:
            out[a:] = np.convolve(k[: n + 1 - a], g)[: n + 1 - a]
        else:
            full = np.convolve(k[: n + 1 - a], g)[: n + 1 - a]
            # trapezoid: halve the two endpoint terms
            j = np.arange(n + 1 - a)
            full -= 0.5 * k[0] * g[j] + 0.5 * k[j] * g[0]
            out[a:] = self.step * full
            out[a] = 0.0
        np.clip(out, 0.0, 1.0, out=out)
        np.maximum.accumulate(out, out=out)
        # exact bound F_{i+1}(z) <= F_D(z - x^i); removes quadrature overshoot
        np.minimum(out[a:], self._base[: n + 1 - a], out=out[a:])
        return out

    def _point(self, prev: np.ndarray, a: int, k: int) -> float:
        """F_{i+1} at grid index ``k`` without building the whole curve."""
        if k < a:
            return 0.0
        kern = self._kernel
        j = np.arange(k - a + 1)
        terms = kern[j] * prev[k - j]
        s = float(terms.sum())
        if self.model.is_continuous:
            if k == a:
                return 0.0
            s -= 0.5 * (terms[0] + terms[-1])
            s *= self.step
        return min(max(s, 0.0), 1.0, float(self._base[k - a]))

    def curve(self, x: Sequence[float], i: int) -> EffectiveDemandCdf:
        idx = self._check(x, i)
        prefix = idx[: i - 1]
        vals = self._curve(prefix)
        return EffectiveDemandCdf(
            level=i,
            base=tuple(v * self.step for v in prefix),
            step=self.step,
            values=vals,
            truncation_mass=float(1.0 - vals[-1]),
        )

    def cdf_at(self, x: Sequence[float], i: int, q: float) -> float:
        """F_{D^i(x^{i-1})}(q); linear interpolation for continuous demand."""
        idx = self._check(x, i)
        if q < 0:
            return 0.0
        if q > self.z_max + 1e-9:
            raise ValueError(f"q={q!r} beyond the computed range {self.z_max!r}")
        prefix = idx[: i - 1]
        if not prefix or prefix in self._memo:
            return _lookup(self._curve(prefix), self.step, q, self.model.is_continuous)
        prev = self._curve(prefix[:-1])
        a = sum(prefix)
        t = q / self.step
        if not self.model.is_continuous:
            return self._point(prev, a, int(math.floor(t + 1e-9)))
        k = int(math.floor(t))
        frac = t - k
        lo = self._point(prev, a, k)
        if frac < 1e-12 or k >= self.n:
            return lo
        return lo + frac * (self._point(prev, a, k + 1) - lo)

    def save(self, path, prefixes: Sequence[tuple[int, ...]] | None = None) -> None:
        """Persist memoized curves (all, or the given index prefixes)."""
        keys = list(self._memo) if prefixes is None else [tuple(k) for k in prefixes]
        arrays = {}
        for i, k in enumerate(keys):
            arrays[f"c{i}"] = self._curve(k)
            arrays[f"k{i}"] = np.asarray(k, dtype=np.int64)
        np.savez_compressed(path, ident=np.array(self.model.ident), n=np.array(self.n),
                            count=np.array(len(keys)), **arrays)

    def load(self, path) -> int:
        """Merge curves saved by :meth:`save`; returns how many were taken.

        Curves from a wider context are truncated (values below the
        truncation point do not depend on it); narrower ones are skipped.
        """
        with np.load(path) as z:
            if str(z["ident"]) != self.model.ident:
                raise ValueError("CDF store belongs to a different demand model")
            taken = 0
            for i in range(int(z["count"])):
                vals = z[f"c{i}"]
                if len(vals) < self.n + 1:
                    continue
                key = tuple(int(v) for v in z[f"k{i}"])
                with self._lock:
                    self._memo.setdefault(key, np.array(vals[: self.n + 1]))
                taken += 1
        return taken

    def values_at(self, x: Sequence[float], i: int) -> np.ndarray:
        """Grid values of F_{D^i(x^{i-1})} on [0, z_max]."""
        idx = self._check(x, i)
        return self._curve(idx[: i - 1])


def effective_cdf(model: DemandModel, x: Sequence[float], i: int,
                  ctx: EffectiveDemand | None = None) -> EffectiveDemandCdf:
    ctx = ctx or EffectiveDemand(model)
    return ctx.curve(x, i)


def effective_cdf_at(model: DemandModel, x: Sequence[float], i: int, q: float,
                     ctx: EffectiveDemand | None = None) -> float:
    ctx = ctx or EffectiveDemand(model)
    return ctx.cdf_at(x, i, q)
