"""GHCN-Daily ingestion: fixed-width parsing, flag-based QC, completeness filter."""

import calendar
import datetime as dt
import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError, DuplicateRecordError, ParseError
from .tables import read_table, write_table

log = logging.getLogger(__name__)

MISSING = math.nan
SENTINEL = -9999
LINE_LENGTH = 269
DEFAULT_WINDOW = (dt.date(1949, 12, 1), dt.date(2017, 11, 30))
DEFAULT_COMPLETENESS = Fraction(2, 3)

QC_RULES = (
    "qflag nonblank -> missing",
    "sflag == 'S' -> missing",
    "mflag == 'T' -> 0 mm",
)


@dataclass(frozen=True)
class DailyObservation:
    date: dt.date
    value: float  # mm, NaN when missing
    mflag: str = " "
    qflag: str = " "
    sflag: str = " "

    @property
    def missing(self):
        return math.isnan(self.value)


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    lat: float
    lon: float
    elevation: float  # m, NaN when unknown
    name: str = ""


@dataclass
class StationSeries:
    """QC'd daily precipitation for one station; NaN marks missing days."""

    station_id: str
    lon: float
    lat: float
    elevation: float
    dates: np.ndarray  # datetime64[D], strictly increasing
    values: np.ndarray  # mm
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=float)
        if self.dates.shape != self.values.shape:
            raise ValueError("dates and values differ in length")
        if self.dates.size > 1:
            step = np.diff(self.dates).astype(int)
            if np.any(step == 0):
                dup = self.dates[1:][step == 0][0]
                raise DuplicateRecordError(f"{self.station_id}: duplicate record for {dup}")
            if np.any(step < 0):
                raise DataError(f"{self.station_id}: dates are not increasing")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise DataError(f"{self.station_id}: coordinates ({self.lon}, {self.lat}) out of range")
        if np.any(self.values < 0):
            raise DataError(f"{self.station_id}: negative precipitation")

    @classmethod
    def from_observations(cls, station_id, lon, lat, elevation, observations):
        obs = sorted(observations, key=lambda o: o.date)
        dates = np.array([o.date for o in obs], dtype="datetime64[D]")
        values = np.array([o.value for o in obs], dtype=float)
        return cls(station_id, lon, lat, elevation, dates, values)

    @property
    def observations(self):
        return [
            DailyObservation(d.astype(object), float(v))
            for d, v in zip(self.dates, self.values)
        ]

    def nonmissing(self):
        ok = ~np.isnan(self.values)
        return self.dates[ok], self.values[ok]


def _lines(raw):
    if isinstance(raw, bytes):
        raw = raw.decode("ascii")
    if isinstance(raw, str):
        return raw.splitlines()
    return [ln.decode("ascii") if isinstance(ln, bytes) else ln for ln in raw]


def parse_dly(raw, source=None, elements=("PRCP",)):
    """Parse a GHCN-Daily ``.dly`` payload.

    Returns ``{station_id: [DailyObservation, ...]}`` holding the requested
    elements only (PRCP by default), converted from tenths of mm to mm.
    Sentinel ``-9999`` becomes NaN and day slots past the end of the month
    are dropped.
    """
    out = {}
    for lineno, line in enumerate(_lines(raw), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if len(line) != LINE_LENGTH:
            raise ParseError(f"expected {LINE_LENGTH} characters, got {len(line)}", lineno, source)
        station = line[0:11]
        element = line[17:21]
        if element not in elements:
            continue
        try:
            year = int(line[11:15])
            month = int(line[15:17])
        except ValueError:
            raise ParseError("non-numeric year/month field", lineno, source) from None
        if not 1 <= month <= 12:
            raise ParseError(f"invalid month {month}", lineno, source)
        ndays = calendar.monthrange(year, month)[1]
        obs = out.setdefault(station, [])
        for day in range(1, 32):
            base = 21 + (day - 1) * 8
            if day > ndays:
                continue
            field_ = line[base:base + 5]
            try:
                raw_value = int(field_)
            except ValueError:
                raise ParseError(f"non-numeric value field {field_!r} (day {day})", lineno, source) from None
            mflag, qflag, sflag = line[base + 5], line[base + 6], line[base + 7]
            if raw_value == SENTINEL:
                value = MISSING
            elif raw_value < 0:
                raise ParseError(f"negative precipitation {raw_value} (day {day})", lineno, source)
            else:
                value = raw_value / 10.0
            obs.append(DailyObservation(dt.date(year, month, day), value, mflag, qflag, sflag))
    return out


def format_dly(station_id, observations, element="PRCP"):
    """Serialise observations back to fixed-width ``.dly`` text."""
    if len(station_id) != 11:
        raise ValueError("GHCN station ids are 11 characters")
    by_month = {}
    for o in observations:
        by_month.setdefault((o.date.year, o.date.month), {})[o.date.day] = o
    lines = []
    for (year, month) in sorted(by_month):
        days = by_month[(year, month)]
        parts = [f"{station_id}{year:04d}{month:02d}{element}"]
        for day in range(1, 32):
            o = days.get(day)
            if o is None or o.missing:
                flags = (o.mflag + o.qflag + o.sflag) if o is not None else "   "
                parts.append(f"{SENTINEL:5d}{flags}")
            else:
                parts.append(f"{int(round(o.value * 10)):5d}{o.mflag}{o.qflag}{o.sflag}")
        lines.append("".join(parts))
    return "\n".join(lines) + "\n"


def apply_qc(obs):
    """Flag rules, applied in order; the first matching rule wins."""
    if obs.qflag.strip():
        return DailyObservation(obs.date, MISSING, obs.mflag, obs.qflag, obs.sflag)
    if obs.sflag == "S":
        return DailyObservation(obs.date, MISSING, obs.mflag, obs.qflag, obs.sflag)
    if obs.mflag == "T":
        return DailyObservation(obs.date, 0.0, obs.mflag, obs.qflag, obs.sflag)
    return obs


def window_days(window=DEFAULT_WINDOW):
    start, end = window
    return (end - start).days + 1


def completeness_filter(series, threshold=DEFAULT_COMPLETENESS, window=DEFAULT_WINDOW):
    """True when the nonmissing fraction of days inside ``window`` reaches ``threshold``.

    The comparison is done in exact rational arithmetic.
    """
    start, end = window
    total = window_days(window)
    if total <= 0:
        raise ValueError("empty window")
    lo, hi = np.datetime64(start, "D"), np.datetime64(end, "D")
    inside = (series.dates >= lo) & (series.dates <= hi) & ~np.isnan(series.values)
    count = int(inside.sum())
    if count == 0:
        return False
    return Fraction(count, total) >= Fraction(threshold)


def parse_stations(raw, source=None):
    """Parse the fixed-width ``ghcnd-stations.txt`` metadata file."""
    out = {}
    for lineno, line in enumerate(_lines(raw), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if len(line) < 37:
            raise ParseError("station line too short", lineno, source)
        try:
            lat = float(line[12:20])
            lon = float(line[21:30])
            elev = float(line[31:37])
        except ValueError:
            raise ParseError("non-numeric coordinate field", lineno, source) from None
        sid = line[0:11]
        if elev <= -999.0:
            elev = math.nan
        out[sid] = StationMeta(sid, lat, lon, elev, line[41:71].strip())
    return out


def format_stations(metas):
    lines = []
    for m in metas:
        elev = -999.9 if math.isnan(m.elevation) else m.elevation
        lines.append(f"{m.station_id:11s} {m.lat:8.4f} {m.lon:9.4f} {elev:6.1f} {'':2s} {m.name:30s}")
    return "\n".join(lines) + "\n"


def build_series(meta, observations, window=DEFAULT_WINDOW):
    """QC observations and clip them to the analysis window."""
    start, end = window
    qc = [apply_qc(o) for o in observations if start <= o.date <= end]
    return StationSeries.from_observations(meta.station_id, meta.lon, meta.lat, meta.elevation, qc)


def load_station(path, meta, window=DEFAULT_WINDOW):
    with open(path, "rb") as fh:
        parsed = parse_dly(fh.read(), source=path)
    obs = parsed.get(meta.station_id, [])
    return build_series(meta, obs, window)


def _in_bbox(meta, bbox):
    if bbox is None:
        return True
    lon0, lon1, lat0, lat1 = bbox
    return lon0 <= meta.lon <= lon1 and lat0 <= meta.lat <= lat1


def select_stations(metas, dly_dir, bbox=None):
    """Stations with a ``.dly`` file, inside ``bbox`` and with known elevation."""
    chosen = []
    for sid in sorted(metas):
        m = metas[sid]
        if not os.path.exists(os.path.join(dly_dir, f"{sid}.dly")):
            continue
        if not _in_bbox(m, bbox):
            continue
        if math.isnan(m.elevation):
            log.warning("dropping %s: no elevation in station metadata", sid)
            continue
        chosen.append(m)
    return chosen


def _ingest_one(args):
    path, meta, window, threshold = args
    series = load_station(path, meta, window)
    return series if completeness_filter(series, threshold, window) else None


def ingest(dly_dir, metas, window=DEFAULT_WINDOW, threshold=DEFAULT_COMPLETENESS,
           bbox=None, mapper=map):
    """Load, QC and completeness-filter every eligible station.

    Output is ordered by station id regardless of ``mapper``.
    """
    chosen = select_stations(metas, dly_dir, bbox)
    tasks = [(os.path.join(dly_dir, f"{m.station_id}.dly"), m, window, threshold) for m in chosen]
    kept = [s for s in mapper(_ingest_one, tasks) if s is not None]
    return sorted(kept, key=lambda s: s.station_id)


def write_daily(path_daily, path_stations, series_list, window=DEFAULT_WINDOW,
                threshold=DEFAULT_COMPLETENESS):
    """Dump QC'd series: one row per nonmissing (station, date, value_mm)."""
    series_list = sorted(series_list, key=lambda s: s.station_id)
    meta = {
        "qc_rules": list(QC_RULES),
        "window": [window[0].isoformat(), window[1].isoformat()],
        "completeness_threshold": str(Fraction(threshold)),
        "units": "mm",
    }
    ids, dates, vals = [], [], []
    for s in series_list:
        d, v = s.nonmissing()
        ids.extend([s.station_id] * d.size)
        dates.extend(str(x) for x in d)
        vals.append(v)
    values = np.concatenate(vals) if vals else np.zeros(0)
    h1 = write_table(path_daily, {"station_id": ids, "date": dates, "value_mm": values}, meta)
    h2 = write_table(path_stations, {
        "station_id": [s.station_id for s in series_list],
        "lon": np.array([s.lon for s in series_list], dtype=float),
        "lat": np.array([s.lat for s in series_list], dtype=float),
        "elevation": np.array([s.elevation for s in series_list], dtype=float),
    }, meta)
    return h1, h2


def read_daily(path_daily, path_stations):
    """Inverse of :func:`write_daily`; returns series with nonmissing days only."""
    meta, frame = read_table(path_daily, string_columns=("station_id", "date"))
    _, st = read_table(path_stations, string_columns=("station_id",))
    groups = {k: g for k, g in frame.groupby("station_id", sort=True)}
    out = []
    for row in st.itertuples(index=False):
        g = groups.get(row.station_id)
        dates = g["date"].to_numpy(dtype="datetime64[D]") if g is not None else np.zeros(0, "datetime64[D]")
        values = g["value_mm"].to_numpy(dtype=float) if g is not None else np.zeros(0)
        out.append(StationSeries(row.station_id, float(row.lon), float(row.lat),
                                 float(row.elevation), dates, values, meta=meta))
    return out
