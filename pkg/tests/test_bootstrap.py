import math

import numpy as np
import pytest

from probgrid.bootstrap import (
    ResamplePlan, bootstrap_se, correlogram, make_plan, pair_correlations, plan_generator, resample,
)
from probgrid.errors import DataError
from probgrid.gev import GevCoefficients, fit_gev, return_value
from probgrid.maxima import SeasonalMaxima


def maxima(values, years=None):
    values = np.asarray(values, float)
    years = np.arange(1950, 1950 + values.size) if years is None else years
    return SeasonalMaxima("S", "DJF", years, values, np.full(values.size, 90))


def test_plan_shape_and_pool():
    p = make_plan(np.arange(1950, 2018), B=250, seed=1)
    assert (p.B, p.T) == (250, 68)
    assert p.indices.min() >= 0 and p.indices.max() < 68


def test_single_year_pool():
    p = make_plan(1, B=5, seed=0)
    np.testing.assert_array_equal(p.indices, np.zeros((5, 1), dtype=int))


def test_plan_is_reproducible_from_seed():
    a, b = make_plan(68, 20, seed=42), make_plan(68, 20, seed=42)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert a.digest() == b.digest()
    assert a.digest() != make_plan(68, 20, seed=43).digest()
    # the documented recipe reproduces the plan without the package
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(42)))
    np.testing.assert_array_equal(g.integers(0, 68, size=(20, 68)), a.indices)


def test_identity_plan_leaves_series_unchanged():
    m = maxima([3.0, np.nan, 5.0, 1.0])
    plan = ResamplePlan(m.years.copy(), np.arange(4)[None, :], 0)
    r = resample(m, plan, 0)
    np.testing.assert_array_equal(r.values, m.values)
    np.testing.assert_array_equal(r.years, m.years)


def test_same_year_plan_gives_constant_series():
    m = maxima(np.arange(40.0))
    plan = ResamplePlan(m.years.copy(), np.full((1, 40), 7), 0)
    r = resample(m, plan, 0)
    assert np.all(r.values == 7.0)
    from probgrid.errors import DegenerateDataError
    with pytest.raises(DegenerateDataError):
        fit_gev(r.values, r.years)


def test_missing_years_stay_missing_and_slot_time_is_kept():
    m = maxima([1.0, np.nan, 3.0])
    plan = ResamplePlan(m.years.copy(), np.array([[1, 2, 1]]), 0)
    r = resample(m, plan, 0)
    assert np.isnan(r.values[0]) and r.values[1] == 3.0 and np.isnan(r.values[2])
    np.testing.assert_array_equal(r.years, [1950, 1951, 1952])


def test_pool_years_absent_from_station_are_missing():
    m = maxima([1.0, 2.0], years=np.array([1950, 1951]))
    plan = ResamplePlan(np.array([1950, 1951, 1952]), np.array([[2, 0, 1]]), 0)
    r = resample(m, plan, 0)
    assert np.isnan(r.values[0]) and list(r.values[1:]) == [1.0, 2.0]


def test_mean_of_resampled_means():
    rng = np.random.default_rng(3)
    m = maxima(rng.gamma(2.0, 5.0, 68))
    plan = make_plan(m.years, B=10_000, seed=9)
    means = m.values[plan.indices].mean(axis=1)
    se = m.values.std(ddof=0) / math.sqrt(68) / math.sqrt(10_000)
    assert abs(means.mean() - m.values.mean()) < 3 * se
    # resample() agrees with direct indexing
    np.testing.assert_array_equal(resample(m, plan, 17).values, m.values[plan.indices[17]])


def test_se_textbook_values():
    se, n = bootstrap_se([1.0, 2.0, 3.0])
    assert se == 1.0 and n == 3
    se, _ = bootstrap_se(np.full(10, 2.5))
    assert se == 0.0


def test_se_skips_failures_and_flags_too_few():
    se, n = bootstrap_se([1.0, np.nan, 2.0, 3.0])
    assert se == 1.0 and n == 3
    se, n = bootstrap_se([[1.0, 1.0], [np.nan, 3.0]], axis=0)
    assert np.isnan(se[0]) and se[1] == pytest.approx(math.sqrt(2))
    np.testing.assert_array_equal(n, [1, 2])


def test_se_matches_numpy():
    x = np.random.default_rng(0).normal(size=(50, 7))
    se, _ = bootstrap_se(x)
    np.testing.assert_allclose(se, x.std(axis=0, ddof=1), rtol=1e-13)


def test_gumbel_se_close_to_delta_method():
    """Bootstrap SE of the 20-year level vs the textbook Gumbel asymptotic variance."""
    rng = np.random.default_rng(11)
    T, mu, sigma = 68, 20.0, 5.0
    years = np.arange(1950, 1950 + T)
    y = mu - sigma * np.log(-np.log(rng.random(T)))
    plan = make_plan(years, B=200, seed=2)
    full = fit_gev(y, years, ref_year=1950, xi_bounds=(-1e-9, 1e-9))
    reps = []
    for b in range(plan.B):
        yb = y[plan.indices[b]]
        try:
            f = fit_gev(yb, years, ref_year=1950, n_restarts=0, init=full.coefficients)
        except DataError:
            continue
        c = f.coefficients
        reps.append(return_value(GevCoefficients(c.mu0, 0.0, c.sigma, c.xi), 20, 1950))
    se, _ = bootstrap_se(reps)
    # stationary Gumbel: var(x_p) = sigma^2/T (1.1087 + 0.5140 y_p + 0.6079 y_p^2)
    yp = -math.log(-math.log(1 - 1 / 20))
    delta = sigma * math.sqrt((1.1087 + 0.5140 * yp + 0.6079 * yp * yp) / T)
    assert 0.5 <= se / delta <= 2.0


def test_correlogram_identical_stations():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 1))
    est = np.hstack([x, x, rng.normal(size=(30, 1))])
    lonlat = np.array([[0.0, 0.0], [0.5, 0.0], [5.0, 0.0]])
    cg = correlogram(est, lonlat, bins=[0.0, 1.0, 6.0])
    assert cg.count[0] == 1 and cg.median[0] == pytest.approx(1.0)
    assert cg.count.sum() == 3


def test_correlogram_independent_stations_near_zero():
    rng = np.random.default_rng(5)
    B, n = 200, 40
    est = rng.normal(size=(B, n))
    cg = correlogram(est, rng.random((n, 2)) * 10, bins=5)
    filled = cg.count > 20
    assert np.all(np.abs(cg.median[filled]) < 2 / math.sqrt(B))


def test_correlogram_partition():
    rng = np.random.default_rng(1)
    lonlat = rng.random((25, 2)) * 4
    cg = correlogram(rng.normal(size=(12, 25)), lonlat, bins=7)
    assert cg.edges[0] == 0.0
    d = np.sqrt(((lonlat[:, None] - lonlat[None]) ** 2).sum(-1))
    assert cg.edges[-1] == pytest.approx(d.max())
    assert cg.count.sum() == 25 * 24 // 2


def test_correlogram_excludes_zero_variance(caplog):
    rng = np.random.default_rng(2)
    est = rng.normal(size=(15, 4))
    est[:, 2] = 1.0
    cg = correlogram(est, rng.random((4, 2)), bins=2)
    assert cg.excluded == (2,)
    assert cg.count.sum() == 3
    assert "zero-variance" in caplog.text


def test_correlogram_needs_replicates():
    with pytest.raises(DataError):
        correlogram(np.ones((5, 3)), np.zeros((3, 2)))


def test_pair_correlations_match_numpy():
    x = np.random.default_rng(4).normal(size=(30, 6))
    np.testing.assert_allclose(pair_correlations(x), np.corrcoef(x.T), atol=1e-13)


def test_plan_generator_is_philox():
    assert isinstance(plan_generator(0).bit_generator, np.random.Philox)
