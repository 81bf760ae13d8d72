import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from probgrid.errors import ConditioningError, DomainError
from probgrid.inference import (
    Candidate, MarginalModel, assign_folds, candidate_grid, crps_gaussian, cross_validate, krige,
)
from probgrid.spatial import component_grid
from probgrid.synthetic import oracle_dense_gaussian_loglik

from test_spatial import comp, model


def marginal(cov, nugget, mean=None):
    n = len(cov)
    mean = np.zeros(n) if mean is None else mean
    return MarginalModel(np.zeros((n, 2)), np.zeros(n), np.asarray(mean, float),
                         np.asarray(cov, float), np.asarray(nugget, float))


def test_two_station_oracle():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    kf = krige(marginal(cov, [1.0, 1.0]), np.array([2.0, 0.0]))
    ref = cov @ np.linalg.solve(cov + np.eye(2), [2.0, 0.0])
    np.testing.assert_allclose(kf.estimate, ref, rtol=1e-14)
    np.testing.assert_allclose(kf.estimate, [14 / 15, 4 / 15], rtol=1e-14)


def test_single_station_interpolates():
    kf = krige(marginal([[2.0]], [0.0]), np.array([3.7]))
    assert kf.estimate[0] == pytest.approx(3.7, abs=1e-12)
    assert kf.variance[0] == pytest.approx(0.0, abs=1e-12)


def _station_model(rng, n=40, tau2=0.2):
    xy = rng.random((n, 2)) * 10
    elev = rng.random(n) * 2000
    comps = [comp(tuple(c), beta0=1.0 + 0.1 * i, beta1=0.5, sigma2=1.0 + 0.2 * i, lam1=2.0, tau2=tau2)
             for i, c in enumerate(component_grid((0, 10, 0, 10), 5.0))]
    fm = model(comps, kappa=2.5)
    return fm, xy, elev


def test_zero_nugget_reproduces_data(rng):
    fm, xy, elev = _station_model(rng)
    mm = MarginalModel.assemble(fm, xy, elev).with_nugget(0.0)
    y = rng.normal(size=len(xy))
    kf = krige(mm, y)
    np.testing.assert_allclose(kf.estimate, y, atol=1e-8)
    np.testing.assert_allclose(kf.variance, 0.0, atol=1e-8)
    off = krige(mm, y, xy, elev)
    np.testing.assert_allclose(off.estimate, y, atol=1e-8)


def test_huge_nugget_shrinks_to_mean(rng):
    fm, xy, elev = _station_model(rng)
    mm = MarginalModel.assemble(fm, xy, elev)
    mm = mm.with_nugget(1e12 * np.diag(mm.cov))
    kf = krige(mm, rng.normal(size=len(xy)) * 5, xy, elev)
    np.testing.assert_allclose(kf.estimate, kf.mean_part, atol=1e-4)


def test_decomposition_and_chunking(rng):
    fm, xy, elev = _station_model(rng)
    mm = MarginalModel.assemble(fm, xy, elev)
    y = rng.normal(size=len(xy))
    targets = rng.random((500, 2)) * 10
    telev = rng.random(500) * 1000
    a = krige(mm, y, targets, telev)
    b = krige(mm, y, targets, telev, chunk=37)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    np.testing.assert_array_equal(a.variance, b.variance)
    np.testing.assert_array_equal(a.estimate, a.mean_part + a.residual_part)
    assert np.all(a.variance >= 0)
    assert np.all(a.noisy_variance >= a.variance)


def test_marginal_loglik_matches_dense_oracle(rng):
    fm, xy, elev = _station_model(rng)
    mm = MarginalModel.assemble(fm, xy, elev)
    y = mm.mean + rng.normal(size=len(xy))
    ref = oracle_dense_gaussian_loglik(mm.mean, mm.cov + np.diag(mm.nugget), y)
    assert mm.loglik(y) == pytest.approx(ref, rel=1e-10)


def test_singular_covariance_raises_conditioning_error():
    with pytest.raises(ConditioningError):
        marginal(-np.ones((2, 2)), [0.0, 0.0]).factor()


def test_crps_at_mean():
    assert crps_gaussian(0.0, 0.0, 1.0) == pytest.approx((math.sqrt(2) - 1) / math.sqrt(math.pi), abs=1e-15)
    assert crps_gaussian(0.0, 0.0, 1.0) == pytest.approx(0.233695, abs=5e-7)


@pytest.mark.parametrize("y, mu, var", [(0.0, 0.0, 1.0), (1.3, -0.4, 2.5), (-3.0, 0.5, 0.3)])
def test_crps_matches_quadrature(y, mu, var):
    sd = math.sqrt(var)
    below = quad(lambda t: norm.cdf(t, mu, sd) ** 2, -np.inf, y)[0]
    above = quad(lambda t: norm.sf(t, mu, sd) ** 2, y, np.inf)[0]
    assert crps_gaussian(y, mu, var) == pytest.approx(below + above, rel=1e-7)


def test_crps_degenerate_and_invalid():
    assert crps_gaussian(2.0, 2.0, 0.0) == 0.0
    assert crps_gaussian(3.0, 1.0, 0.0) == 2.0
    with pytest.raises(DomainError):
        crps_gaussian(0.0, 0.0, -1.0)


def test_candidate_grid_order():
    grid = candidate_grid((9.0, 4.5), (0.5,), ("elevation",))
    assert [c.name for c in grid] == ["r0", "r1", "r2"]
    assert grid[0].radius is None and grid[2].radius == 4.5


def test_folds_deterministic_and_balanced():
    ids = [f"S{i:03d}" for i in range(23)]
    a = assign_folds(ids, 5, seed=3)
    b = assign_folds(list(reversed(ids)), 5, seed=3)
    assert dict(zip(ids, a)) == dict(zip(reversed(ids), b))
    assert sorted(np.bincount(a)) == [4, 4, 5, 5, 5]
    assert not np.array_equal(a, assign_folds(ids, 5, seed=4))


def test_identical_candidates_tie_to_first(rng):
    xy = rng.random((50, 2)) * 6
    y = np.sin(xy[:, 0]) + rng.normal(0, 0.3, 50)
    ids = [f"S{i:03d}" for i in range(50)]
    a = Candidate(None, 0.5, "elevation", "first")
    b = Candidate(None, 0.5, "elevation", "second")
    res = cross_validate(y, xy, np.zeros(50), ids, [a, b], component_grid((0, 6, 0, 6), 3.0))
    assert res.scores["first|elevation|0.5"] == res.scores["second|elevation|0.5"]
    assert res.winner is a
    assert len(res.rows) == 10


def test_failing_candidate_scores_infinity(rng):
    xy = rng.random((30, 2)) * 6
    y = rng.normal(size=30)
    ids = [f"S{i:03d}" for i in range(30)]
    tiny = Candidate(0.01, 0.5, "elevation", "tiny")
    res = cross_validate(y, xy, np.zeros(30), ids, [Candidate(None), tiny], component_grid((0, 6, 0, 6), 3.0))
    assert math.isinf(res.scores["tiny|elevation|0.5"])
    assert res.winner.name == "r0"
