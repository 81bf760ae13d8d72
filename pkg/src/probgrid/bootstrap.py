"""Year-block bootstrap shared across stations, standard errors and the correlogram diagnostic.

Plans are drawn with numpy's counter-based Philox generator seeded from
``SeedSequence(seed)``: ``Generator(Philox(SeedSequence(seed))).integers(0, T, size=(B, T))``.
The same call in any numpy >= 1.17 reproduces a plan from its seed.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .maxima import SeasonalMaxima
from .spatial import pairwise_distance

log = logging.getLogger(__name__)

DEFAULT_B = 250


def plan_generator(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ResamplePlan:
    years: np.ndarray  # the year pool, in slot order
    indices: np.ndarray  # (B, T) positions into ``years``
    seed: int

    @property
    def B(self):
        return self.indices.shape[0]

    @property
    def T(self):
        return self.indices.shape[1]

    def replicate_years(self, b):
        return self.years[self.indices[b]]

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.years, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.indices, dtype="<i8").tobytes())
        h.update(str(self.seed).encode())
        return h.hexdigest()


def make_plan(years, B=DEFAULT_B, seed=0):
    """Draw ``B`` length-``T`` index vectors with replacement from the year pool.

    ``years`` is either the pool itself or an integer ``T`` (pool ``0..T-1``).
    """
    pool = np.arange(years) if np.isscalar(years) else np.asarray(years)
    pool = pool.astype(int)
    if pool.size < 1 or B < 1:
        raise ValueError("need T >= 1 and B >= 1")
    idx = plan_generator(seed).integers(0, pool.size, size=(B, pool.size))
    return ResamplePlan(pool, idx, int(seed))


def resample(maxima, plan, b):
    """Replicate ``b`` of a station's maxima.

    Slot ``j`` receives the value of year ``plan.years[indices[b, j]]`` and
    keeps slot ``j``'s own year as its time covariate, so every replicate
    shares the design of the original series.  Missing years stay missing.
    """
    pos = {int(y): i for i, y in enumerate(maxima.years)}
    src = plan.years[plan.indices[b]]
    take = np.array([pos.get(int(y), -1) for y in src])
    vals = np.where(take >= 0, maxima.values[np.maximum(take, 0)], np.nan)
    days = np.where(take >= 0, maxima.days_available[np.maximum(take, 0)], 0)
    return SeasonalMaxima(maxima.station_id, maxima.season, plan.years.copy(), vals, days)


def bootstrap_se(replicates, axis=0):
    """Sample standard deviation (divisor B-1) across replicates, skipping NaN.

    Returns ``(se, effective_B)``; ``se`` is NaN where fewer than two
    replicates are valid.
    """
    q = np.asarray(replicates, dtype=float)
    valid = ~np.isnan(q)
    n = valid.sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nansum(q, axis=axis) / n
        dev = np.where(valid, q - np.expand_dims(mean, axis), 0.0)
        var = np.sum(dev * dev, axis=axis) / (n - 1)
    se = np.where(n >= 2, np.sqrt(var), np.nan)
    return (se[()] if se.ndim == 0 else se), n


@dataclass(frozen=True)
class Correlogram:
    edges: np.ndarray
    count: np.ndarray
    minimum: np.ndarray
    q25: np.ndarray
    median: np.ndarray
    q75: np.ndarray
    maximum: np.ndarray
    excluded: tuple  # indices of zero-variance stations

    def columns(self):
        return {
            "bin_lo": self.edges[:-1], "bin_hi": self.edges[1:], "count": self.count,
            "min": self.minimum, "q25": self.q25, "median": self.median,
            "q75": self.q75, "max": self.maximum,
        }


def pair_correlations(estimates):
    """Pairwise correlation of replicate estimates, shape ``(B, n)`` -> ``(n, n)``."""
    x = np.asarray(estimates, dtype=float)
    x = x - x.mean(axis=0)
    sd = np.sqrt(np.sum(x * x, axis=0))
    return (x.T @ x) / np.outer(sd, sd)


def correlogram(estimates, lonlat, bins=10, metric="euclidean"):
    """Distance-binned summaries of pairwise bootstrap correlations.

    ``estimates`` has one row per replicate and one column per station.
    Replicates that failed everywhere are dropped, then stations with any
    remaining NaN.  ``bins`` is a count (equal-width bins over
    ``[0, max distance]``) or explicit edges.  Each pair lands in exactly
    one bin (the last bin is closed on the right).
    """
    x = np.asarray(estimates, dtype=float)
    x = x[~np.isnan(x).all(axis=1)]
    if x.shape[0] < 10:
        raise DataError(f"correlogram needs at least 10 valid replicates, got {x.shape[0]}")
    gaps = np.isnan(x).any(axis=0)
    if gaps.any():
        log.warning("correlogram: excluding %d stations with failed replicate fits", int(gaps.sum()))
    with np.errstate(invalid="ignore"):
        sd = x.std(axis=0)
    zero = np.flatnonzero(~gaps & (sd == 0))
    if zero.size:
        log.warning("correlogram: excluding %d zero-variance stations", zero.size)
    keep = np.flatnonzero(~gaps & (sd > 0))
    if keep.size < 2:
        raise DataError("correlogram needs at least two stations with variance")
    corr = pair_correlations(x[:, keep])
    dist = pairwise_distance(np.asarray(lonlat)[keep], np.asarray(lonlat)[keep], metric)
    iu = np.triu_indices(keep.size, k=1)
    r, d = corr[iu], dist[iu]
    if np.isscalar(bins):
        edges = np.linspace(0.0, float(d.max()) if d.size else 1.0, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    which = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, edges.size - 2)
    nb = edges.size - 1
    stats = np.full((5, nb), np.nan)
    count = np.zeros(nb, dtype=int)
    for k in range(nb):
        rk = r[which == k]
        count[k] = rk.size
        if rk.size:
            stats[:, k] = np.quantile(rk, [0.0, 0.25, 0.5, 0.75, 1.0])
    return Correlogram(edges, count, *stats, excluded=tuple(int(i) for i in zero))
