"""Seasonal block maxima with the season-year convention (December -> next year's DJF)."""

import calendar
import datetime as dt
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tables import read_table, write_table

SEASONS = ("DJF", "MAM", "JJA", "SON")
DEFAULT_YEARS = (1950, 2017)
DEFAULT_MIN_FRACTION = Fraction(2, 3)


def season_year(date):
    """Map a date to ``(season, season_year)``."""
    month = date.month
    season = SEASONS[(month % 12) // 3]
    return season, date.year + (1 if month == 12 else 0)


def season_bounds(season, year):
    """First and last calendar day of ``season`` in season-year ``year``."""
    k = SEASONS.index(season)
    if k == 0:
        start = dt.date(year - 1, 12, 1)
        end = dt.date(year, 2, 29 if calendar.isleap(year) else 28)
    else:
        m0 = 3 * k
        start = dt.date(year, m0, 1)
        end = dt.date(year, m0 + 2, calendar.monthrange(year, m0 + 2)[1])
    return start, end


def season_length(season, year):
    start, end = season_bounds(season, year)
    return (end - start).days + 1


def season_arrays(dates):
    """Vectorised :func:`season_year` for a ``datetime64[D]`` array.

    Returns ``(season_index, season_year)`` integer arrays.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    months = dates.astype("datetime64[M]").astype(int) % 12 + 1
    years = dates.astype("datetime64[Y]").astype(int) + 1970
    return (months % 12) // 3, years + (months == 12)


@dataclass
class SeasonalMaxima:
    station_id: str
    season: str
    years: np.ndarray  # season-years, increasing
    values: np.ndarray  # mm, NaN = missing
    days_available: np.ndarray

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        self.days_available = np.asarray(self.days_available, dtype=int)

    @property
    def n_present(self):
        return int(np.sum(~np.isnan(self.values)))


def block_maxima(series, season, min_fraction=DEFAULT_MIN_FRACTION, years=DEFAULT_YEARS):
    """Seasonal maxima of a QC'd :class:`~probgrid.ghcn.StationSeries`.

    A season-year keeps its maximum only when its nonmissing-day fraction is
    at least ``min_fraction`` (0 accepts any season with one valid day).
    """
    y0, y1 = years
    all_years = np.arange(y0, y1 + 1)
    k = SEASONS.index(season)
    dates, values = series.nonmissing()
    s_idx, s_year = season_arrays(dates)
    sel = (s_idx == k) & (s_year >= y0) & (s_year <= y1)
    slot = s_year[sel] - y0
    vals = values[sel]
    maxima = np.full(all_years.size, -np.inf)
    np.maximum.at(maxima, slot, vals)
    counts = np.bincount(slot, minlength=all_years.size)
    frac = Fraction(min_fraction)
    keep = np.array([
        c > 0 and Fraction(int(c), season_length(season, int(y))) >= frac
        for c, y in zip(counts, all_years)
    ], dtype=bool)
    out = np.where(keep, maxima, np.nan)
    return SeasonalMaxima(series.station_id, season, all_years, out, counts)


def write_maxima(path, maxima_list, meta=None):
    rows = sorted(maxima_list, key=lambda m: (m.station_id, SEASONS.index(m.season)))
    cols = {"station_id": [], "season": [], "season_year": [], "max_mm": [], "days_available": []}
    for m in rows:
        n = m.years.size
        cols["station_id"].extend([m.station_id] * n)
        cols["season"].extend([m.season] * n)
        cols["season_year"].append(m.years)
        cols["max_mm"].append(m.values)
        cols["days_available"].append(m.days_available)
    for key in ("season_year", "max_mm", "days_available"):
        cols[key] = np.concatenate(cols[key]) if cols[key] else np.zeros(0)
    cols["season_year"] = cols["season_year"].astype(int)
    cols["days_available"] = cols["days_available"].astype(int)
    return write_table(path, cols, meta)


def read_maxima(path):
    """Returns ``(meta, {(station_id, season): SeasonalMaxima})``."""
    meta, frame = read_table(path, string_columns=("station_id", "season"))
    out = {}
    for (sid, season), g in frame.groupby(["station_id", "season"], sort=True):
        out[(sid, season)] = SeasonalMaxima(
            sid, season, g["season_year"].to_numpy(int), g["max_mm"].to_numpy(float),
            g["days_available"].to_numpy(int),
        )
    return meta, out
