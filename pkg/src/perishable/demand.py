"""One-period demand distributions realized on a uniform inventory grid.

Three kinds are supported: exponential (continuous), Poisson and finite
discrete.  Continuous demand lives on a 0.1 grid by default, discrete demand
on the integer grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

EXPONENTIAL = "exponential"
POISSON = "poisson"
FINITE = "finite"

CONTINUOUS_STEP = 0.1
TAIL_MASS = 1e-9
_GRID_TOL = 1e-9


class DemandError(ValueError):
    """Invalid demand specification or argument outside the domain."""


class UnboundedQuantileError(DemandError):
    pass


@dataclass(frozen=True)
class DemandModel:
    kind: str
    mean: float | None = None
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()
    grid_step: float = 1.0
    grid_max: float = field(default=0.0)

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, POISSON, FINITE):
            raise DemandError(f"unknown demand kind {self.kind!r}")
        if self.grid_step <= 0:
            raise DemandError("grid_step must be positive")
        if self.kind == FINITE:
            if len(self.values) == 0 or len(self.values) != len(self.probs):
                raise DemandError("finite demand needs matching values and probs")
            if any(v < 0 for v in self.values):
                raise DemandError("finite demand support must be nonnegative")
            if any(p < 0 for p in self.probs):
                raise DemandError("probabilities must be nonnegative")
            if abs(sum(self.probs) - 1.0) > 1e-12:
                raise DemandError(f"probabilities sum to {sum(self.probs)!r}, not 1")
            if list(self.values) != sorted(set(self.values)):
                raise DemandError("finite support values must be strictly increasing")
            for v in self.values:
                k = v / self.grid_step
                if abs(k - round(k)) > _GRID_TOL:
                    raise DemandError(f"support value {v} is not on the {self.grid_step} grid")
            object.__setattr__(self, "mean", float(np.dot(self.values, self.probs)))
        else:
            if self.mean is None or not self.mean > 0:
                raise DemandError(f"{self.kind} demand needs a positive mean")
        if self.kind == POISSON and self.grid_step != 1.0:
            raise DemandError("Poisson demand lives on the integer grid")
        if not self.grid_max:
            object.__setattr__(self, "grid_max", self._default_grid_max())

    # constructors

    @classmethod
    def exponential(cls, mean: float, grid_step: float = CONTINUOUS_STEP) -> "DemandModel":
        return cls(EXPONENTIAL, mean=float(mean), grid_step=grid_step)

    @classmethod
    def poisson(cls, mean: float) -> "DemandModel":
        return cls(POISSON, mean=float(mean), grid_step=1.0)

    @classmethod
    def finite(cls, values: Sequence[float], probs: Sequence[float],
               grid_step: float = 1.0) -> "DemandModel":
        return cls(FINITE, values=tuple(float(v) for v in values),
                   probs=tuple(float(p) for p in probs), grid_step=grid_step)

    # basic properties

    @property
    def is_continuous(self) -> bool:
        return self.kind == EXPONENTIAL

    @property
    def variance(self) -> float:
        if self.kind == EXPONENTIAL:
            return self.mean ** 2
        if self.kind == POISSON:
            return self.mean
        v = np.asarray(self.values)
        return float(np.dot(self.probs, (v - self.mean) ** 2))

    @property
    def ident(self) -> str:
        """Stable identifier used for cache keys and file metadata."""
        if self.kind == FINITE:
            vals = ",".join(repr(v) for v in self.values)
            ps = ",".join(repr(p) for p in self.probs)
            return f"finite[{vals}|{ps}]@{self.grid_step!r}"
        return f"{self.kind}({self.mean!r})@{self.grid_step!r}"

    def _default_grid_max(self) -> float:
        if self.kind == FINITE:
            return self.values[-1]
        if self.kind == EXPONENTIAL:
            z = -self.mean * math.log(TAIL_MASS)
            return math.ceil(z / self.grid_step - _GRID_TOL) * self.grid_step
        k = int(stats.poisson.isf(TAIL_MASS, self.mean))
        while special.pdtrc(k, self.mean) > TAIL_MASS:
            k += 1
        return float(k)

    def n_grid(self, z_max: float | None = None) -> int:
        """Index of the last grid point at or below ``z_max``."""
        z = self.grid_max if z_max is None else z_max
        return int(math.floor(z / self.grid_step + _GRID_TOL))

    def to_index(self, z: float) -> int:
        """Grid index of ``z``; raises if ``z`` is not a grid point."""
        k = z / self.grid_step
        kr = round(k)
        if abs(k - kr) > 1e-7:
            raise DemandError(f"{z!r} is not on the {self.grid_step} grid")
        return int(kr)

    # distribution functions

    def cdf(self, z: float) -> float:
        """F_D(z), evaluated in closed form (no grid interpolation)."""
        if z < 0:
            raise DemandError(f"cdf needs z >= 0, got {z!r}")
        if self.kind == EXPONENTIAL:
            return float(-math.expm1(-z / self.mean))
        if self.kind == POISSON:
            return float(special.pdtr(math.floor(z + _GRID_TOL), self.mean))
        total = 0.0
        for v, p in zip(self.values, self.probs):
            if v <= z + _GRID_TOL:
                total += p
        return min(total, 1.0)

    def sf(self, z: float) -> float:
        """Survival function 1 - F_D(z)."""
        if self.kind == EXPONENTIAL:
            return math.exp(-max(z, 0.0) / self.mean)
        if self.kind == POISSON:
            return float(special.pdtrc(math.floor(z + _GRID_TOL), self.mean)) if z >= 0 else 1.0
        return 1.0 - self.cdf(z) if z >= 0 else 1.0

    def pdf(self, z):
        if self.kind != EXPONENTIAL:
            raise DemandError("pdf is defined for continuous demand only")
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0, np.exp(-z / self.mean) / self.mean, 0.0)

    def quantile(self, p: float) -> float:
        """Smallest z with F_D(z) >= p."""
        if not 0 <= p < 1:
            if p >= 1:
                raise UnboundedQuantileError(f"quantile({p!r}) is unbounded")
            raise DemandError(f"probability out of range: {p!r}")
        if self.kind == EXPONENTIAL:
            return -self.mean * math.log1p(-p)
        if self.kind == FINITE:
            acc = 0.0
            for v, q in zip(self.values, self.probs):
                acc += q
                if acc >= p - 1e-15:
                    return v
            return self.values[-1]
        k = max(int(stats.poisson.ppf(p, self.mean)) - 2, 0)
        while special.pdtr(k, self.mean) < p:
            k += 1
        while k > 0 and special.pdtr(k - 1, self.mean) >= p:
            k -= 1
        return float(k)

    # grid representations

    def grid_cdf(self, n: int) -> np.ndarray:
        """Exact F_D at grid points 0, step, ..., n*step."""
        z = np.arange(n + 1) * self.grid_step
        if self.kind == EXPONENTIAL:
            return -np.expm1(-z / self.mean)
        return np.minimum(np.cumsum(self.grid_pmf(n)), 1.0)

    def grid_pmf(self, n: int) -> np.ndarray:
        """Probability mass at grid points 0..n (discrete kinds only)."""
        if self.kind == POISSON:
            return stats.poisson.pmf(np.arange(n + 1), self.mean)
        if self.kind == FINITE:
            pmf = np.zeros(n + 1)
            for v, p in zip(self.values, self.probs):
                k = self.to_index(v)
                if k <= n:
                    pmf[k] += p
            return pmf
        raise DemandError("grid_pmf is defined for discrete demand only")

    def grid_density(self, n: int) -> np.ndarray:
        """Density of continuous demand at grid points 0..n."""
        return self.pdf(np.arange(n + 1) * self.grid_step)

    def discretized_pmf(self, n: int) -> np.ndarray:
        """Probability mass per grid cell, the last cell absorbing the tail.

        Discrete kinds return their exact pmf.  Continuous demand assigns the
        mass of [(k-1/2)*step, (k+1/2)*step) to grid point k, so the
        discretized mean matches the continuous one to O(step^2).
        """
        if self.kind != EXPONENTIAL:
            pmf = self.grid_pmf(n)
        else:
            edges = (np.arange(n + 1) + 0.5) * self.grid_step
            upper = -np.expm1(-edges / self.mean)
            pmf = np.diff(np.concatenate(([0.0], upper)))
        pmf[-1] += max(0.0, 1.0 - pmf.sum())
        return pmf

    # sampling

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw demand by inversion of one uniform per draw.

        Continuous draws keep full precision (no grid snapping).
        """
        u = rng.random(size)
        if self.kind == EXPONENTIAL:
            return -self.mean * np.log1p(-u)
        vals, table = self._inversion_table()
        idx = np.searchsorted(table, u, side="right")
        idx = np.minimum(idx, len(vals) - 1)
        out = vals[idx]
        return float(out) if size is None else out

    def _inversion_table(self):
        cached = getattr(self, "_table_cache", None)
        if cached is not None:
            return cached
        if self.kind == POISSON:
            n = int(self.mean + 10 * math.sqrt(self.mean)) + 10
            while special.pdtrc(n, self.mean) > 1e-16:
                n += 10
            vals = np.arange(n + 1, dtype=float)
            table = special.pdtr(np.arange(n + 1), self.mean)
        else:
            vals = np.asarray(self.values, dtype=float)
            table = np.cumsum(self.probs)
        table = np.asarray(table, dtype=float)
        object.__setattr__(self, "_table_cache", (vals, table))
        return vals, table


def cdf(model: DemandModel, z: float) -> float:
    return model.cdf(z)


def quantile(model: DemandModel, p: float) -> float:
    return model.quantile(p)


def sample(model: DemandModel, rng: np.random.Generator, size: int | None = None):
    return model.sample(rng, size)


def demand_stream(model: DemandModel, n: int, seed: int) -> np.ndarray:
    """``n`` reproducible demand draws; the common-random-number source."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.ascontiguousarray(model.sample(rng, n), dtype=np.float64)
