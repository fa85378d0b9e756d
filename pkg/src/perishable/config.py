"""Run configuration: an INI file with demand, costs, structure, simulation,
solver, output and (optional) sweep sections.

Example::

    [demand]
    kind = poisson
    mean = 10

    [costs]
    h = 1
    r = 10
    theta = 5

    [structure]
    m = 3
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .demand import EXPONENTIAL, FINITE, POISSON, DemandModel
from .params import CostParams

PAPER_ROWS = ((0, 5, 5), (0, 5, 10), (0, 5, 20), (0, 8, 7), (0, 10, 5),
              (1, 5, 5), (1, 5, 10), (1, 5, 20), (1, 8, 7), (1, 10, 5))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    periods: int = 1_000_000
    burn_in: int = 10_000
    seed: int = 0
    sample_stride: int = 100
    max_samples: int = 10_000
    curve_periods: int = 100_000


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    delta: float | None = None
    alpha: float = 0.01
    table_bound: float | None = None
    max_table_entries: int = 2_000_000
    reuse_zero_lead_cbs: bool = False
    reestimate_w_ex: bool = False
    dp_eps: float | None = None
    # positive lead time: "full" adds the holding/shortage externality to
    # V_ex, "wastage" keeps only (theta + c) w_ex
    lead_externality: str = "full"


@dataclass(frozen=True)
class SweepConfig:
    rows: tuple = PAPER_ROWS
    lifetimes: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    demand: DemandModel
    params: CostParams
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "out"
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, simulation=replace(cfg.simulation, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, output_dir=out)
        return cfg


_KEYS = {
    "demand": {"kind", "mean", "values", "probs", "grid_step"},
    "costs": {"h", "r", "theta", "c"},
    "structure": {"m", "lead"},
    "simulation": {"periods", "burn_in", "seed", "sample_stride", "max_samples",
                   "curve_periods"},
    "solver": {"tol", "delta", "alpha", "table_bound", "max_table_entries",
               "reuse_zero_lead_cbs", "reestimate_w_ex", "dp_eps",
               "lead_externality"},
    "output": {"dir"},
    "sweep": {"rows", "m"},
}
_REQUIRED = ("demand", "costs", "structure")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _get(sec, key, conv, default):
    if key not in sec or sec[key].strip() == "":
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _rows(text: str) -> tuple:
    rows = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ValueError(f"sweep row {item!r} is not h:r:theta")
        rows.append(tuple(float(p) for p in parts))
    return tuple(rows)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    for name in cp.sections():
        if name not in _KEYS:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(cp[name]) - _KEYS[name]
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    for name in _REQUIRED:
        if name not in cp:
            raise ConfigError(f"missing section [{name}]")

    d = cp["demand"]
    kind = d.get("kind", "").strip().lower()
    try:
        if kind == EXPONENTIAL:
            model = DemandModel.exponential(_get(d, "mean", float, None),
                                            grid_step=_get(d, "grid_step", float, 0.1))
        elif kind == POISSON:
            if _get(d, "grid_step", float, 1.0) != 1.0:
                raise ConfigError("Poisson demand uses grid_step = 1")
            model = DemandModel.poisson(_get(d, "mean", float, None))
        elif kind == FINITE:
            model = DemandModel.finite(_get(d, "values", _floats, ()),
                                       _get(d, "probs", _floats, ()),
                                       grid_step=_get(d, "grid_step", float, 1.0))
        else:
            raise ConfigError(f"[demand] kind must be exponential, poisson or finite, got {kind!r}")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[demand] {exc}") from None

    c, s = cp["costs"], cp["structure"]
    try:
        params = CostParams(
            h=_get(c, "h", float, None), r=_get(c, "r", float, None),
            theta=_get(c, "theta", float, None), c=_get(c, "c", float, 0.0),
            m=_get(s, "m", _int, None), lead=_get(s, "lead", _int, 0))
    except TypeError:
        raise ConfigError("[costs] h, r, theta and [structure] m are required") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    sim = SimulationConfig()
    if "simulation" in cp:
        g = cp["simulation"]
        sim = SimulationConfig(
            periods=_get(g, "periods", _int, sim.periods),
            burn_in=_get(g, "burn_in", _int, sim.burn_in),
            seed=_get(g, "seed", _int, sim.seed),
            sample_stride=_get(g, "sample_stride", _int, sim.sample_stride),
            max_samples=_get(g, "max_samples", _int, sim.max_samples),
            curve_periods=_get(g, "curve_periods", _int, sim.curve_periods))
    if not sim.periods > sim.burn_in >= 0:
        raise ConfigError("[simulation] need periods > burn_in >= 0")
    if not sim.curve_periods > min(sim.burn_in, sim.curve_periods // 10):
        raise ConfigError("[simulation] curve_periods too small")
    if sim.sample_stride < 1 or sim.max_samples < 1:
        raise ConfigError("[simulation] sample_stride and max_samples must be positive")

    sol = SolverConfig()
    if "solver" in cp:
        g = cp["solver"]
        sol = SolverConfig(
            tol=_get(g, "tol", float, sol.tol),
            delta=_get(g, "delta", float, sol.delta),
            alpha=_get(g, "alpha", float, sol.alpha),
            table_bound=_get(g, "table_bound", float, sol.table_bound),
            max_table_entries=_get(g, "max_table_entries", _int, sol.max_table_entries),
            reuse_zero_lead_cbs=_get(g, "reuse_zero_lead_cbs", _bool, sol.reuse_zero_lead_cbs),
            reestimate_w_ex=_get(g, "reestimate_w_ex", _bool, sol.reestimate_w_ex),
            dp_eps=_get(g, "dp_eps", float, sol.dp_eps),
            lead_externality=g.get("lead_externality", sol.lead_externality).strip().lower())
    if sol.lead_externality not in ("full", "wastage"):
        raise ConfigError("[solver] lead_externality must be full or wastage, got "
                          f"{sol.lead_externality!r}")
    if not 0 < sol.alpha < 1:
        raise ConfigError("[solver] alpha must lie in (0, 1)")
    if sol.delta is not None and sol.delta <= 0:
        raise ConfigError("[solver] delta must be positive")

    out = cp["output"].get("dir", "out") if "output" in cp else "out"

    sweep = SweepConfig()
    if "sweep" in cp:
        g = cp["sweep"]
        sweep = SweepConfig(rows=_get(g, "rows", _rows, sweep.rows),
                            lifetimes=tuple(int(v) for v in _get(g, "m", _floats, ())))
    for h, r, th in sweep.rows:
        try:
            params.replace(h=h, r=r, theta=th)
        except ValueError as exc:
            raise ConfigError(f"[sweep] row {h}:{r}:{th}: {exc}") from None
    for m in sweep.lifetimes:
        if m < 1 or params.lead > m - 1:
            raise ConfigError(f"[sweep] lifetime {m} incompatible with lead {params.lead}")

    return RunConfig(demand=model, params=params, simulation=sim, solver=sol,
                     output_dir=out, sweep=sweep)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_config(text, source=path)
