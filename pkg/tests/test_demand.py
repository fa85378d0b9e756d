import math

import numpy as np
import pytest
from scipy import stats

from perishable.demand import (DemandError, DemandModel, UnboundedQuantileError, cdf,
                               demand_stream, quantile, sample)


def test_exponential_cdf_closed_form():
    d = DemandModel.exponential(10)
    assert cdf(d, 0.0) == 0.0
    assert cdf(d, 10 * math.log(11)) == pytest.approx(10 / 11, abs=1e-12)


def test_poisson_cdf_by_pmf_sum():
    d = DemandModel.poisson(10)
    expect = sum(math.exp(-10) * 10 ** k / math.factorial(k) for k in range(15))
    assert cdf(d, 14) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.9165, abs=1e-4)


def test_cdf_rejects_negative():
    with pytest.raises(DemandError):
        cdf(DemandModel.poisson(3), -0.5)


def test_quantiles():
    assert quantile(DemandModel.poisson(10), 10 / 11) == 14
    assert quantile(DemandModel.exponential(10), 10 / 11) == pytest.approx(23.979, abs=1e-3)
    for d in (DemandModel.poisson(10), DemandModel.exponential(10),
              DemandModel.finite([0, 1, 2], [1 / 3] * 3)):
        assert quantile(d, 0.0) == 0.0
        with pytest.raises(UnboundedQuantileError):
            quantile(d, 1.0)


@pytest.mark.parametrize("model", [
    DemandModel.poisson(10), DemandModel.poisson(3.5),
    DemandModel.finite([0, 2, 5], [0.2, 0.5, 0.3]),
])
def test_quantile_galois_discrete(model):
    rng = np.random.default_rng(3)
    for p in rng.uniform(0, 0.999, 200):
        q = model.quantile(p)
        assert model.cdf(q) >= p - 1e-12
        lower = [v for v in model.grid_cdf(int(q)).nonzero()[0] if v < q]
        if q > 0 and lower:
            assert model.cdf(max(lower)) < p


def test_quantile_galois_continuous():
    d = DemandModel.exponential(10)
    for p in np.linspace(0, 0.999, 50):
        assert d.cdf(d.quantile(p)) >= p - 1e-12


@pytest.mark.parametrize("model", [
    DemandModel.exponential(10), DemandModel.poisson(10),
    DemandModel.finite([0, 1, 2], [1 / 3] * 3),
])
def test_grid_cdf_invariants(model):
    n = model.n_grid()
    f = model.grid_cdf(n)
    assert np.all(np.diff(f) >= 0)
    assert f.min() >= 0 and f.max() <= 1
    assert f[-1] >= 1 - 1e-9


def test_cdf_monotone_right_continuous():
    d = DemandModel.poisson(4)
    z = np.linspace(0, 20, 2001)
    f = np.array([d.cdf(v) for v in z])
    assert np.all(np.diff(f) >= 0)
    assert d.cdf(3.0) == d.cdf(3.0 + 1e-12)


def test_finite_validation():
    with pytest.raises(DemandError):
        DemandModel.finite([0, 1], [0.5, 0.6])
    with pytest.raises(DemandError):
        DemandModel.finite([0, 0.5], [0.5, 0.5])
    with pytest.raises(DemandError):
        DemandModel.finite([-1, 1], [0.5, 0.5])
    with pytest.raises(DemandError):
        DemandModel.exponential(0)


def test_degenerate_sample():
    rng = np.random.default_rng(0)
    d = DemandModel.finite([5], [1.0])
    assert sample(d, rng) == 5
    assert np.all(sample(d, rng, 100) == 5)


def test_stream_reproducible():
    d = DemandModel.exponential(10)
    a = demand_stream(d, 1000, seed=7)
    b = demand_stream(d, 1000, seed=7)
    assert np.array_equal(a, b)
    # continuous draws are not snapped to the grid
    assert np.any(np.abs(a / 0.1 - np.round(a / 0.1)) > 1e-6)


def test_stream_prefix_consistent():
    d = DemandModel.poisson(10)
    assert np.array_equal(demand_stream(d, 500, 1), demand_stream(d, 2000, 1)[:500])


def test_poisson_sample_mean():
    n = 1_000_000
    x = demand_stream(DemandModel.poisson(10), n, seed=11)
    assert abs(x.mean() - 10) <= 3 * math.sqrt(10 / n)


@pytest.mark.parametrize("model", [DemandModel.poisson(10), DemandModel.exponential(10)])
def test_empirical_cdf_ks(model):
    x = demand_stream(model, 1_000_000, seed=5)
    if model.is_continuous:
        ks = stats.kstest(x, "expon", args=(0, 10)).statistic
    else:
        z = np.arange(40)
        emp = np.searchsorted(np.sort(x), z, side="right") / len(x)
        ks = np.max(np.abs(emp - model.grid_cdf(39)))
    assert ks < 0.005


def test_discretized_pmf_mass_and_mean():
    d = DemandModel.exponential(10)
    n = d.n_grid()
    p = d.discretized_pmf(n)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.dot(p, np.arange(n + 1) * 0.1) == pytest.approx(10.0, abs=1e-3)
