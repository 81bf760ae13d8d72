"""Regular lon/lat lattices of grid-cell centres."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, LatticeMismatchError

_TOL = 1e-6


@dataclass(frozen=True)
class Lattice:
    """Cells of size ``resolution`` tiling ``[lon0, lon1] x [lat0, lat1]``."""

    lon0: float
    lon1: float
    lat0: float
    lat1: float
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigError("grid resolution must be positive")
        if not (self.lon1 > self.lon0 and self.lat1 > self.lat0):
            raise ConfigError("grid bounding box is empty")

    @property
    def nlon(self):
        return int(math.floor((self.lon1 - self.lon0) / self.resolution + _TOL))

    @property
    def nlat(self):
        return int(math.floor((self.lat1 - self.lat0) / self.resolution + _TOL))

    @property
    def size(self):
        return self.nlon * self.nlat

    def centers(self):
        """All cell centres, longitude varying slowest; shape ``(size, 2)``."""
        lon = self.lon0 + (np.arange(self.nlon) + 0.5) * self.resolution
        lat = self.lat0 + (np.arange(self.nlat) + 0.5) * self.resolution
        g = np.meshgrid(lon, lat, indexing="ij")
        return np.column_stack([g[0].ravel(), g[1].ravel()])

    def cell_index(self, lonlat):
        """Flat index of the cell containing each point (-1 outside the lattice)."""
        s = np.asarray(lonlat, dtype=float).reshape(-1, 2)
        i = np.floor((s[:, 0] - self.lon0) / self.resolution).astype(int)
        j = np.floor((s[:, 1] - self.lat0) / self.resolution).astype(int)
        ok = (i >= 0) & (i < self.nlon) & (j >= 0) & (j < self.nlat)
        return np.where(ok, i * self.nlat + j, -1)

    def locate_centers(self, lonlat):
        """Flat indices of points that must sit on cell centres.

        Raises :class:`LatticeMismatchError` for any off-lattice point.
        """
        s = np.asarray(lonlat, dtype=float).reshape(-1, 2)
        idx = self.cell_index(s)
        c = self.centers()
        bad = (idx < 0) | (np.abs(c[np.maximum(idx, 0)] - s).max(axis=1) > _TOL * max(1.0, self.resolution))
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise LatticeMismatchError(
                f"point ({s[k, 0]:g}, {s[k, 1]:g}) is not a cell centre of lattice {self.describe()}")
        return idx

    def spec(self):
        return asdict(self)

    def describe(self):
        return (f"[lon {self.lon0:g}..{self.lon1:g}, lat {self.lat0:g}..{self.lat1:g}, "
                f"res {self.resolution:g}, {self.nlon}x{self.nlat}]")

    @classmethod
    def from_spec(cls, d):
        try:
            return cls(float(d["lon0"]), float(d["lon1"]), float(d["lat0"]), float(d["lat1"]),
                       float(d["resolution"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad lattice spec {d!r}: {exc}") from None

    @classmethod
    def from_bbox(cls, bbox, resolution):
        lon0, lon1, lat0, lat1 = bbox
        return cls(float(lon0), float(lon1), float(lat0), float(lat1), float(resolution))

    def matches(self, other):
        a, b = self.spec(), other.spec()
        return all(abs(a[k] - b[k]) <= _TOL for k in a)


def check_same_lattice(a, b, what_a="station product", what_b="gridded input"):
    if not a.matches(b):
        raise LatticeMismatchError(
            f"lattice mismatch: {what_a} {a.describe()} vs {what_b} {b.describe()}")
