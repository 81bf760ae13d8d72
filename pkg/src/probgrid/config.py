"""Pipeline configuration: TOML file, defaults, environment overrides and validation.

Every key has a default; a config file only lists what it changes.  Paths
are resolved relative to the config file.  Environment overrides:
``PROBGRID_OUTPUT_DIR``, ``PROBGRID_DLY_DIR``, ``PROBGRID_STATIONS_FILE``,
``PROBGRID_GRID_FILE`` and ``PROBGRID_WORKERS``.
"""

import copy
import datetime as dt
import hashlib
import json
import os
import sys
from fractions import Fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .inference import candidate_grid
from .lattice import Lattice
from .maxima import SEASONS
from .parallel import resolve_workers
from .spatial import COVARIATES, FIELD_COEFFICIENTS, KAPPAS

DEFAULTS = {
    "paths": {
        "dly_dir": None,
        "stations_file": None,
        "grid_file": None,
        "output_dir": "probgrid-out",
    },
    "data": {
        "window": ["1949-12-01", "2017-11-30"],
        "completeness": "2/3",
        "season_completeness": "2/3",
        "years": [1950, 2017],
        "seasons": list(SEASONS),
        "bbox": None,  # station filter [lon0, lon1, lat0, lat1]
    },
    "grid": {
        "bbox": [-125.0, -66.5, 24.5, 49.5],
        "resolution": 0.25,
    },
    "gev": {
        "reference_year": 1950,
        "xi_bounds": [-1.0, 1.0],
        "restarts": 4,
        "bootstrap_restarts": 0,
        "min_obs": 30,
    },
    "spatial": {
        "component_spacing": 5.0,
        "bandwidth": 3.0,
        "min_stations": 10,
        "metric": "euclidean",
        "isotropic": ["mu1", "xi"],
    },
    "select": {
        "radii": [9.0, 7.5, 6.0, 4.5],
        "kappas": [0.5, 2.5],
        "covariates": ["elevation", "log_elevation"],
        "folds": 5,
    },
    "bootstrap": {
        "replicates": 250,
        "seed": 0,
    },
    "product": {
        "return_periods": [10, 20, 50, 100],
        "years": list(range(1955, 2016, 10)),
        "jja_mask_fraction": 0.5,
        "jja_min_median_mm": 1.0,
        "jja_mask_radius": None,  # degrees; default: the JJA mu0 fit radius
    },
    "correlogram": {
        "bins": 10,
    },
    "run": {
        "workers": 1,
    },
}

ENV_OVERRIDES = {
    "PROBGRID_OUTPUT_DIR": ("paths", "output_dir"),
    "PROBGRID_DLY_DIR": ("paths", "dly_dir"),
    "PROBGRID_STATIONS_FILE": ("paths", "stations_file"),
    "PROBGRID_GRID_FILE": ("paths", "grid_file"),
    "PROBGRID_WORKERS": ("run", "workers"),
}

# sections that never influence results
_UNHASHED = ("paths", "run")


def _merge(base, user, where=""):
    out = copy.deepcopy(base)
    for key, value in user.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}{key}' must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


class PipelineConfig:
    """Validated configuration.  ``cfg[section][key]`` gives raw values."""

    def __init__(self, data, base_dir="."):
        self.data = data
        self.base_dir = base_dir
        self.validate()

    @classmethod
    def from_dict(cls, user=None, base_dir=".", env=None):
        data = _merge(DEFAULTS, user or {})
        env = os.environ if env is None else env
        for var, (section, key) in ENV_OVERRIDES.items():
            if env.get(var):
                data[section][key] = env[var]
        for key, value in data["paths"].items():
            if value is not None and not os.path.isabs(value):
                data["paths"][key] = os.path.normpath(os.path.join(base_dir, value))
        return cls(data, base_dir)

    @classmethod
    def load(cls, path=None, env=None):
        if path is None:
            return cls.from_dict({}, os.getcwd(), env)
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(user, os.path.dirname(os.path.abspath(path)), env)

    def __getitem__(self, section):
        return self.data[section]

    # --- validation -----------------------------------------------------
    def validate(self):
        d = self.data
        try:
            w0, w1 = (dt.date.fromisoformat(x) for x in d["data"]["window"])
        except (TypeError, ValueError):
            raise ConfigError("data.window must be two ISO dates") from None
        if w1 < w0:
            raise ConfigError("data.window ends before it starts")
        for key in ("completeness", "season_completeness"):
            f = self._fraction(d["data"][key], f"data.{key}")
            if not 0 <= f <= 1:
                raise ConfigError(f"data.{key} must lie in [0, 1]")
        y0, y1 = self._pair(d["data"]["years"], "data.years", int)
        if y1 < y0:
            raise ConfigError("data.years is empty")
        bad = [s for s in d["data"]["seasons"] if s not in SEASONS]
        if bad or not d["data"]["seasons"]:
            raise ConfigError(f"data.seasons must be drawn from {SEASONS}, got {d['data']['seasons']}")
        if d["data"]["bbox"] is not None:
            self._bbox(d["data"]["bbox"], "data.bbox")
        self.lattice  # validates the grid section
        lo, hi = self._pair(d["gev"]["xi_bounds"], "gev.xi_bounds", float)
        if not lo < hi:
            raise ConfigError("gev.xi_bounds must be increasing")
        for key in ("restarts", "bootstrap_restarts", "min_obs"):
            if not isinstance(d["gev"][key], int) or d["gev"][key] < 0:
                raise ConfigError(f"gev.{key} must be a nonnegative integer")
        sp = d["spatial"]
        for key in ("component_spacing", "bandwidth"):
            if not isinstance(sp[key], (int, float)) or sp[key] <= 0:
                raise ConfigError(f"spatial.{key} must be positive")
        if sp["metric"] not in ("euclidean", "great_circle"):
            raise ConfigError("spatial.metric must be 'euclidean' or 'great_circle'")
        if any(c not in FIELD_COEFFICIENTS for c in sp["isotropic"]):
            raise ConfigError(f"spatial.isotropic entries must be among {FIELD_COEFFICIENTS}")
        sel = d["select"]
        if any(k not in KAPPAS for k in sel["kappas"]):
            raise ConfigError(f"select.kappas must be among {KAPPAS}")
        if any(c not in COVARIATES for c in sel["covariates"]):
            raise ConfigError(f"select.covariates must be among {COVARIATES}")
        if any(not isinstance(r, (int, float)) or r <= 0 for r in sel["radii"]):
            raise ConfigError("select.radii must be positive numbers")
        if not isinstance(sel["folds"], int) or sel["folds"] < 2:
            raise ConfigError("select.folds must be an integer >= 2")
        b = d["bootstrap"]
        if not isinstance(b["replicates"], int) or b["replicates"] < 1:
            raise ConfigError("bootstrap.replicates must be a positive integer")
        if not isinstance(b["seed"], int) or b["seed"] < 0:
            raise ConfigError("bootstrap.seed must be a nonnegative integer")
        pr = d["product"]
        if any(not isinstance(r, (int, float)) or r <= 1 for r in pr["return_periods"]):
            raise ConfigError("product.return_periods must all exceed 1")
        if not 0 <= pr["jja_mask_fraction"] <= 1:
            raise ConfigError("product.jja_mask_fraction must lie in [0, 1]")
        self.workers = resolve_workers(d["run"]["workers"])

    @staticmethod
    def _fraction(value, name):
        try:
            return Fraction(str(value))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{name} must be a fraction like '2/3'") from None

    @staticmethod
    def _pair(value, name, kind):
        try:
            a, b = value
            return kind(a), kind(b)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a pair") from None

    @staticmethod
    def _bbox(value, name):
        try:
            lon0, lon1, lat0, lat1 = (float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be [lon0, lon1, lat0, lat1]") from None
        if not (lon0 < lon1 and lat0 < lat1):
            raise ConfigError(f"{name} is empty")
        return lon0, lon1, lat0, lat1

    # --- derived values -------------------------------------------------
    @property
    def lattice(self):
        g = self.data["grid"]
        return Lattice.from_bbox(self._bbox(g["bbox"], "grid.bbox"), g["resolution"])

    @property
    def window(self):
        return tuple(dt.date.fromisoformat(x) for x in self.data["data"]["window"])

    @property
    def completeness(self):
        return Fraction(str(self.data["data"]["completeness"]))

    @property
    def season_completeness(self):
        return Fraction(str(self.data["data"]["season_completeness"]))

    @property
    def years(self):
        y0, y1 = self.data["data"]["years"]
        return int(y0), int(y1)

    @property
    def seasons(self):
        return [s for s in SEASONS if s in self.data["data"]["seasons"]]

    @property
    def seed(self):
        return int(self.data["bootstrap"]["seed"])

    def candidates(self):
        s = self.data["select"]
        return candidate_grid(s["radii"], s["kappas"], s["covariates"])

    def require_path(self, key):
        p = self.data["paths"][key]
        if not p:
            raise ConfigError(f"paths.{key} is not set (config file or PROBGRID_{key.upper()})")
        return p

    def hashed(self):
        return {k: v for k, v in self.data.items() if k not in _UNHASHED}

    def digest(self):
        text = json.dumps(self.hashed(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()
