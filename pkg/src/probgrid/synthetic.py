"""Synthetic worlds with known coefficient fields, plus brute-force oracles.

A world fixes station locations, an elevation surface and the true GEV
coefficient fields (at stations and on a lattice).  Maxima are drawn from
the exact GEV law; the shared-shock mode couples stations within a year
through a Gaussian copula, which changes joint behaviour only.
"""

import datetime as dt
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import norm

from ._linalg import robust_cholesky
from .errors import DomainError
from .gev import GevCoefficients, gev_ppf, return_value
from .ghcn import DailyObservation, StationMeta, format_dly, format_stations
from .lattice import Lattice
from .maxima import SEASONS, SeasonalMaxima, season_arrays, season_length
from .spatial import kernel_matrix, ns_cov_from_params, pairwise_distance
from .tables import write_table

GEV_NAMES = ("mu0", "mu1", "sigma", "xi")


@dataclass(frozen=True)
class FieldSpec:
    """A smooth coefficient field: deterministic trend plus optional GP.

    ``mean`` is a constant or ``f(lon, lat, elevation_m)``.  With a
    positive ``variance`` a zero-mean Matérn GP is added; ``variance`` and
    ``length`` (degrees) may be functions of ``(lon, lat)``, which makes
    the GP nonstationary.
    ``log=True`` exponentiates the result (used for ``sigma``).
    """

    mean: object = 0.0
    variance: object = 0.0
    length: object = 2.0
    ratio: float = 1.0  # minor/major length ratio
    angle: float = 0.0  # radians
    kappa: float = 2.5
    log: bool = False

    def trend(self, lonlat, elevation):
        if callable(self.mean):
            return np.asarray(self.mean(lonlat[:, 0], lonlat[:, 1], elevation), dtype=float)
        return np.full(len(lonlat), float(self.mean))

    def kernels(self, lonlat):
        ell = self.length(lonlat[:, 0], lonlat[:, 1]) if callable(self.length) else np.full(len(lonlat), self.length)
        base = kernel_matrix(0.0, 2 * math.log(self.ratio), self.angle)
        return np.asarray(ell, dtype=float)[:, None, None] ** 2 * base

    def variances(self, lonlat):
        if callable(self.variance):
            return np.asarray(self.variance(lonlat[:, 0], lonlat[:, 1]), dtype=float)
        return np.full(len(lonlat), float(self.variance))

    @property
    def random(self):
        return callable(self.variance) or self.variance > 0

    def covariance(self, lonlat):
        k = self.kernels(lonlat)
        s2 = self.variances(lonlat)
        return ns_cov_from_params(lonlat, s2, k, lonlat, s2, k, self.kappa)


def default_elevation(bbox):
    """A smooth north-south ridge across the middle of ``bbox`` (metres)."""
    lon0, lon1, lat0, lat1 = bbox
    mid, width = 0.5 * (lon0 + lon1), 0.15 * (lon1 - lon0)

    def elev(lon, lat):
        lon, lat = np.asarray(lon, float), np.asarray(lat, float)
        ridge = np.exp(-0.5 * ((lon - mid) / width) ** 2)
        wave = 0.7 + 0.3 * np.sin(2 * math.pi * (lat - lat0) / (lat1 - lat0))
        return 150.0 + 1800.0 * ridge * wave

    return elev


def default_fields():
    return {
        "mu0": FieldSpec(mean=lambda lon, lat, e: 25.0 + 6.0 * np.sin(0.6 * lon) * np.cos(0.5 * lat) + 4.0 * e / 1000.0),
        "mu1": FieldSpec(mean=lambda lon, lat, e: 0.03 + 0.02 * np.sin(0.4 * lon)),
        "sigma": FieldSpec(mean=lambda lon, lat, e: math.log(8.0) + 0.15 * np.cos(0.5 * lat), log=True),
        "xi": FieldSpec(mean=lambda lon, lat, e: 0.1 + 0.03 * np.sin(0.3 * (lon + lat))),
    }


@dataclass
class SyntheticWorld:
    bbox: tuple
    station_ids: list
    lonlat: np.ndarray
    elevation: np.ndarray
    truth: dict  # name -> values at stations
    lattice: Lattice
    grid_lonlat: np.ndarray
    grid_elevation: np.ndarray
    grid_truth: dict
    fields: dict
    ref_year: float
    seed: int
    layout: str = "uniform"
    meta: dict = field(default_factory=dict)

    @property
    def n_stations(self):
        return len(self.station_ids)

    def coefficients(self, where="stations"):
        t = self.truth if where == "stations" else self.grid_truth
        return GevCoefficients(t["mu0"], t["mu1"], t["sigma"], t["xi"], self.ref_year)

    def true_return_values(self, r, year, where="stations"):
        return return_value(self.coefficients(where), r, year)


def _station_layout(n, bbox, layout, rng):
    lon0, lon1, lat0, lat1 = bbox
    lo, hi = np.array([lon0, lat0]), np.array([lon1, lat1])
    if layout == "uniform":
        return lo + rng.random((n, 2)) * (hi - lo)
    if layout == "clustered":
        k = max(2, n // 25)
        centres = lo + rng.random((k, 2)) * (hi - lo)
        spread = 0.08 * (hi - lo)
        pts = centres[rng.integers(0, k, n)] + rng.normal(size=(n, 2)) * spread
        return np.clip(pts, lo, hi)
    raise DomainError(f"unknown layout {layout!r}")


def gen_world(n_stations, bbox=(0.0, 10.0, 0.0, 10.0), layout="uniform", fields=None,
              elevation=None, grid_resolution=0.5, ref_year=1950.0, seed=0):
    """Draw a world: station sites, elevations and true coefficient fields.

    Coefficient fields with a GP component are drawn jointly at the
    stations and the lattice centres so both views agree exactly.
    """
    ss = np.random.SeedSequence(seed)
    s_layout, *s_fields = ss.spawn(1 + len(GEV_NAMES))
    rng = np.random.Generator(np.random.Philox(s_layout))
    lonlat = _station_layout(n_stations, bbox, layout, rng)
    fields = {**default_fields(), **(fields or {})}
    elev_fn = elevation or default_elevation(bbox)
    lattice = Lattice.from_bbox(bbox, grid_resolution)
    grid = lattice.centers()
    pts = np.vstack([lonlat, grid])
    elev = np.asarray(elev_fn(pts[:, 0], pts[:, 1]), dtype=float)
    values = {}
    for name, sub in zip(GEV_NAMES, s_fields):
        spec = fields[name]
        v = spec.trend(pts, elev)
        if spec.random:
            L, _ = robust_cholesky(spec.covariance(pts))
            z = np.random.Generator(np.random.Philox(sub)).standard_normal(len(pts))
            v = v + L @ z
        values[name] = np.exp(v) if spec.log else v
    n = n_stations
    return SyntheticWorld(
        bbox=tuple(float(b) for b in bbox),
        station_ids=[f"SYN{i:08d}" for i in range(n)],
        lonlat=lonlat, elevation=elev[:n],
        truth={k: v[:n] for k, v in values.items()},
        lattice=lattice, grid_lonlat=grid, grid_elevation=elev[n:],
        grid_truth={k: v[n:] for k, v in values.items()},
        fields=fields, ref_year=float(ref_year), seed=seed, layout=layout,
    )


def copula_correlation(lonlat, length):
    """Exponential correlation ``exp(-d / length)`` of the shared storm shock."""
    return np.exp(-pairwise_distance(lonlat, lonlat) / length)


def gen_uniforms(n_stations, n_years, storm_dependence="none", lonlat=None, storm_length=1.5,
                 shock_weight=0.5, seed=0):
    """Per-(year, station) uniforms.

    Shared-shock mode mixes a spatially correlated yearly factor (weight
    ``shock_weight`` of the latent variance) with independent noise, then
    maps through the normal CDF, so every marginal stays uniform.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    z = rng.standard_normal((n_years, n_stations))
    if storm_dependence == "none":
        return ndtr(z)
    if storm_dependence == "shared-shock":
        if not 0.0 <= shock_weight <= 1.0:
            raise DomainError("shock_weight must lie in [0, 1]")
        L, _ = robust_cholesky(copula_correlation(lonlat, storm_length))
        shock = rng.standard_normal((n_years, n_stations)) @ L.T
        return ndtr(math.sqrt(shock_weight) * shock + math.sqrt(1.0 - shock_weight) * z)
    raise DomainError(f"unknown storm dependence {storm_dependence!r}")


def gen_maxima(world, years=range(1950, 2018), storm_dependence="none", storm_length=1.5,
               shock_weight=0.5, season="DJF", seed=0):
    """One GEV draw per station and year from the world's true coefficients.

    Returns a list of :class:`SeasonalMaxima` in station order.
    """
    years = np.asarray(list(years), dtype=int)
    u = gen_uniforms(world.n_stations, years.size, storm_dependence, world.lonlat, storm_length,
                     shock_weight, seed)
    t = world.truth
    mu = t["mu0"][None, :] + t["mu1"][None, :] * (years[:, None] - world.ref_year)
    y = gev_ppf(u, mu, t["sigma"][None, :], t["xi"][None, :])
    days = np.array([season_length(season, int(yr)) for yr in years])
    return [SeasonalMaxima(sid, season, years, y[:, i], days)
            for i, sid in enumerate(world.station_ids)]


def maxima_matrix(maxima_list):
    """Stack a list of station maxima into ``(T, n)``."""
    return np.column_stack([m.values for m in maxima_list])


# --- daily data --------------------------------------------------------------

def window_for(years):
    years = list(years)
    return dt.date(years[0] - 1, 12, 1), dt.date(years[-1], 11, 30)


def daily_from_maxima(maxima_by_season, years, seed=0):
    """Daily series whose seasonal maxima are exactly the given values.

    ``maxima_by_season`` maps season -> ``(T, n)`` array.  In each
    season-year one random day carries the maximum; the other days get
    smaller values (half of them dry).  Values are rounded to 0.1 mm as in
    the archive format, so the recovered maxima equal the rounded inputs.
    Returns ``(dates, values)`` with ``values`` shaped ``(days, n)``.
    """
    years = np.asarray(list(years), dtype=int)
    start, end = window_for(years)
    dates = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    s_idx, s_year = season_arrays(dates)
    n = next(iter(maxima_by_season.values())).shape[1]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    out = np.zeros((dates.size, n))
    for k, season in enumerate(SEASONS):
        if season not in maxima_by_season:
            continue
        mx = np.round(np.maximum(maxima_by_season[season], 0.0), 1)
        for j, yr in enumerate(years):
            rows = np.flatnonzero((s_idx == k) & (s_year == yr))
            if rows.size == 0:
                continue
            frac = rng.random((rows.size, n)) ** 2 * (rng.random((rows.size, n)) < 0.5)
            block = np.floor(frac * mx[j] * 10.0) / 10.0
            block = np.minimum(block, np.maximum(mx[j] - 0.1, 0.0))
            pick = rng.integers(0, rows.size, n)
            block[pick, np.arange(n)] = mx[j]
            out[rows] = block
    return dates, out


def write_world(world, directory, years=range(1950, 2018), storm_dependence="none",
                seasons=("DJF",), seed=0):
    """Write ``.dly`` files, a station list and truth sidecars for ``world``.

    Layout: ``dly/<id>.dly``, ``ghcnd-stations.txt``, ``grid.tsv``
    (lon, lat, elevation_m), ``truth_stations.tsv`` and ``truth_grid.tsv``.
    Returns the maxima written, keyed by season.
    """
    years = list(years)
    os.makedirs(os.path.join(directory, "dly"), exist_ok=True)
    mx = {}
    for k, season in enumerate(seasons):
        ml = gen_maxima(world, years, storm_dependence, season=season, seed=seed * 7919 + k)
        mx[season] = maxima_matrix(ml)
    dates, values = daily_from_maxima(mx, years, seed=seed)
    pydates = dates.astype(object)
    for i, sid in enumerate(world.station_ids):
        obs = [DailyObservation(d, float(v)) for d, v in zip(pydates, values[:, i])]
        with open(os.path.join(directory, "dly", f"{sid}.dly"), "w") as fh:
            fh.write(format_dly(sid, obs))
    metas = [StationMeta(sid, float(world.lonlat[i, 1]), float(world.lonlat[i, 0]),
                         float(np.round(world.elevation[i], 1)), f"SYNTHETIC {i}")
             for i, sid in enumerate(world.station_ids)]
    with open(os.path.join(directory, "ghcnd-stations.txt"), "w") as fh:
        fh.write(format_stations(metas))
    meta = {"lattice": world.lattice.spec(), "ref_year": world.ref_year, "seed": world.seed}
    write_table(os.path.join(directory, "grid.tsv"), {
        "lon": world.grid_lonlat[:, 0], "lat": world.grid_lonlat[:, 1],
        "elevation_m": world.grid_elevation}, meta)
    write_table(os.path.join(directory, "truth_stations.tsv"), {
        "station_id": world.station_ids,
        "lon": np.array([m.lon for m in metas]), "lat": np.array([m.lat for m in metas]),
        "elevation_m": np.array([m.elevation for m in metas]),
        **{k: world.truth[k] for k in GEV_NAMES}}, meta)
    write_table(os.path.join(directory, "truth_grid.tsv"), {
        "lon": world.grid_lonlat[:, 0], "lat": world.grid_lonlat[:, 1],
        **{k: world.grid_truth[k] for k in GEV_NAMES}}, meta)
    return mx


@dataclass
class DailyLattice:
    """Daily values on a fine point set, each point belonging to one lattice cell."""

    lattice: Lattice
    points: np.ndarray  # (P, 2)
    cell: np.ndarray  # (P,) flat cell index
    dates: np.ndarray  # (D,) datetime64[D]
    values: np.ndarray  # (D, P) mm

    def cell_average(self):
        """Area average over the points of each cell; shape ``(D, cells)``."""
        n = self.lattice.size
        counts = np.bincount(self.cell, minlength=n)
        sums = np.zeros((self.values.shape[0], n))
        for c in range(n):
            sums[:, c] = self.values[:, self.cell == c].sum(axis=1)
        with np.errstate(invalid="ignore"):
            return sums / counts


def gen_daily_lattice(lattice, years, season="DJF", *, subdivisions=3, scale=None,
                      storm_length=0.6, wet_fraction=0.4, seed=0):
    """Spatially correlated daily precipitation on a ``subdivisions``-refined lattice.

    Each day draws a Gaussian field with exponential correlation
    (``storm_length`` degrees); points are wet where the field exceeds its
    ``1 - wet_fraction`` quantile and the wet amount is exponential with
    mean ``scale(lon, lat)``.  Only days of ``season`` are generated.
    """
    years = np.asarray(list(years), dtype=int)
    res = lattice.resolution / subdivisions
    lon = lattice.lon0 + (np.arange(lattice.nlon * subdivisions) + 0.5) * res
    lat = lattice.lat0 + (np.arange(lattice.nlat * subdivisions) + 0.5) * res
    g = np.meshgrid(lon, lat, indexing="ij")
    pts = np.column_stack([g[0].ravel(), g[1].ravel()])
    scale = scale or (lambda lo, la: 6.0 + 2.0 * np.sin(0.5 * lo) * np.cos(0.4 * la))
    sc = np.asarray(scale(pts[:, 0], pts[:, 1]), dtype=float)
    start, end = window_for(years)
    dates = np.arange(np.datetime64(start, "D"), np.datetime64(end, "D") + 1)
    s_idx, s_year = season_arrays(dates)
    keep = (s_idx == SEASONS.index(season)) & (s_year >= years[0]) & (s_year <= years[-1])
    dates = dates[keep]
    L, _ = robust_cholesky(copula_correlation(pts, storm_length))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    z = rng.standard_normal((dates.size, pts.shape[0])) @ L.T
    # P(Z > c) = wet_fraction; conditional exceedance mapped to an exponential
    c = norm.isf(wet_fraction)
    log_tail = log_ndtr(-z) - math.log(wet_fraction)
    amount = np.where(z > c, -sc[None, :] * log_tail, 0.0)
    return DailyLattice(lattice, pts, lattice.cell_index(pts), dates, amount)


def seasonal_max(dates, values, years):
    """Season-year maxima of daily rows (all from one season); shape ``(T, P)``."""
    _, s_year = season_arrays(dates)
    years = np.asarray(list(years), dtype=int)
    out = np.full((years.size, values.shape[1]), np.nan)
    for j, yr in enumerate(years):
        rows = s_year == yr
        if rows.any():
            out[j] = np.nanmax(values[rows], axis=0)
    return out


# --- oracles -----------------------------------------------------------------

def oracle_dense_gaussian_loglik(mean, covariance, data):
    """Multivariate normal log-density by explicit determinant and solve."""
    c = np.asarray(covariance, dtype=float)
    r = np.asarray(data, dtype=float) - np.asarray(mean, dtype=float)
    if not np.allclose(c, c.T, rtol=1e-12, atol=0.0) or np.linalg.eigvalsh(c)[0] <= 0:
        raise DomainError("covariance is not symmetric positive definite")
    sign, logdet = np.linalg.slogdet(c)
    n = r.size
    return float(-0.5 * (n * math.log(2 * math.pi) + logdet + r @ np.linalg.solve(c, r)))


def oracle_gev_loglik(y, mu, sigma, xi):
    """GEV log-density summed term by term in plain Python."""
    total = 0.0
    for yi, mi, si, xii in np.broadcast(y, mu, sigma, xi):
        if math.isnan(yi):
            continue
        z = (yi - mi) / si
        if abs(xii) < 1e-8:
            total += -math.log(si) - z - math.exp(-z)
            continue
        a = 1.0 + xii * z
        if a <= 0:
            return -math.inf
        total += -math.log(si) - (1.0 + 1.0 / xii) * math.log(a) - a ** (-1.0 / xii)
    return total


def rmse(estimate, truth):
    d = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.nanmean(d * d)))
