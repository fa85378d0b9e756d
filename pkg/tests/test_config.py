import pytest

from perishable.config import PAPER_ROWS, ConfigError, load_config, parse_config

BASE = """
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


def test_minimal_defaults():
    cfg = parse_config(BASE)
    assert cfg.params.m == 3 and cfg.params.lead == 0 and cfg.params.c == 0
    assert cfg.demand.kind == "poisson" and cfg.demand.grid_step == 1.0
    assert cfg.simulation.periods == 1_000_000 and cfg.simulation.burn_in == 10_000
    assert cfg.simulation.sample_stride == 100
    assert cfg.solver.alpha == 0.01 and cfg.solver.tol == 1e-6
    assert cfg.solver.lead_externality == "full"
    assert cfg.sweep.rows == PAPER_ROWS
    assert cfg.output_dir == "out"


def test_full_config():
    cfg = parse_config(BASE.replace("kind = poisson\nmean = 10",
                                    "kind = exponential\nmean = 10\ngrid_step = 0.1")
                       + "lead = 1\n[simulation]\nperiods = 2e5\nseed = 4\n"
                       "[solver]\ndelta = 0.25\nreuse_zero_lead_cbs = yes\n"
                       "[output]\ndir = results\n[sweep]\nrows = 0:5:5, 1:10:5\nm = 2 3\n")
    assert cfg.demand.is_continuous and cfg.params.lead == 1
    assert cfg.simulation.periods == 200_000 and cfg.simulation.seed == 4
    assert cfg.solver.delta == 0.25 and cfg.solver.reuse_zero_lead_cbs
    assert cfg.output_dir == "results"
    assert cfg.sweep.rows == ((0, 5, 5), (1, 10, 5)) and cfg.sweep.lifetimes == (2, 3)


def test_finite_demand():
    cfg = parse_config(BASE.replace("kind = poisson\nmean = 10",
                                    "kind = finite\nvalues = 0 1 2\nprobs = 0.25, 0.5, 0.25"))
    assert cfg.demand.values == (0, 1, 2) and cfg.demand.mean == 1.0


def test_overrides():
    cfg = parse_config(BASE).with_overrides(seed=9, out="elsewhere")
    assert cfg.simulation.seed == 9 and cfg.output_dir == "elsewhere"
    assert parse_config(BASE).with_overrides() == parse_config(BASE)


@pytest.mark.parametrize("text,match", [
    (BASE + "[extra]\nx = 1\n", "unknown section"),
    (BASE + "[solver]\nfoo = 1\n", "unknown key"),
    (BASE.replace("[structure]\nm = 3", ""), "missing section"),
    (BASE.replace("r = 10", "r = 0"), "r"),
    (BASE.replace("theta = 5", "theta = -1"), "theta"),
    (BASE.replace("h = 1", "h = -1"), "h"),
    (BASE.replace("m = 3", "m = 3\nlead = 3"), "lead"),
    (BASE.replace("m = 3", "m = 2.5"), "integer"),
    (BASE.replace("poisson", "gamma"), "kind"),
    (BASE.replace("mean = 10", "mean = 10\ngrid_step = 0.5"), "integer grid|grid_step"),
    (BASE.replace("mean = 10", "mean = -2"), "mean"),
    (BASE.replace("kind = poisson\nmean = 10", "kind = finite\nvalues = 0 1\nprobs = 0.5 0.6"),
     "sum"),
    (BASE + "[simulation]\nperiods = 100\nburn_in = 100\n", "burn_in"),
    (BASE + "[solver]\nalpha = 2\n", "alpha"),
    (BASE + "[solver]\nreestimate_w_ex = maybe\n", "boolean"),
    (BASE + "[solver]\nlead_externality = some\n", "lead_externality"),
    (BASE + "[sweep]\nrows = 1:2\n", "h:r:theta"),
    (BASE + "[sweep]\nrows = 1:0:5\n", "sweep"),
    ("not an ini file", "section"),
])
def test_rejects(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.ini")
    p = tmp_path / "ok.ini"
    p.write_text(BASE)
    assert load_config(p).params.m == 3
