"""File-based pipeline stages with hash manifests.

Each stage writes into ``<output_dir>/<stage>/`` and finishes by writing
``manifest.json``: the config hash, the sha256 of every upstream manifest
and input file, and the sha256 of every output.  Rerunning a stage whose
manifest still matches (same config hash, inputs and intact outputs) is a
no-op.  Manifests contain no timestamps, paths or worker counts, so equal
inputs give byte-identical manifests at any parallelism degree.
"""

import hashlib
import json
import logging
import math
import os
import shutil

import numpy as np

from . import __version__
from .bootstrap import bootstrap_se, correlogram, make_plan
from .errors import DataError, MissingStageError, UsageError
from .ghcn import StationSeries, ingest, parse_stations, read_daily, select_stations, write_daily
from .inference import Candidate
from .lattice import Lattice, check_same_lattice
from .maxima import block_maxima, read_maxima, write_maxima
from .parallel import worker_pool
from .spatial import FIELD_COEFFICIENTS, SmoothedFieldModel, component_grid, in_radius, kernel_ellipse
from .tables import read_table, sha256_bytes, sha256_file, write_table
from .workflow import (ModelSettings, StationFits, field_to_gev, fit_series_bootstrap, fit_stations,
                       return_values, run_replicate, select_models, smooth_and_krige)

log = logging.getLogger(__name__)

STAGES = ("ingest", "maxima", "fit-gev", "select", "fit-spatial", "bootstrap", "product")
EXPORT_KINDS = ("map", "scatter", "correlogram", "ellipses")
MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
GEV_COLUMNS = ("mu0", "mu1", "sigma", "xi")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _candidate_dict(c):
    return {"radius": c.radius, "kappa": c.kappa, "covariate": c.covariate_kind, "label": c.label}


def _candidate(d):
    return Candidate(d["radius"], d["kappa"], d["covariate"], d["label"])


def _replicate_task(args):
    (b, plan, maxima_list, lonlat, elevation, settings, grid, grid_elev, full_fits,
     full_models, season) = args
    rep = run_replicate(b, plan, maxima_list, lonlat, elevation, settings, grid, grid_elev,
                        full_fits, full_models, season)
    return rep.station_theta, rep.grid_theta, rep.failed


def _cell_task(args):
    """Per-cell GEV fit plus bootstrap of a gridded daily series."""
    series, season, min_fraction, years, plan, settings, periods, rv_years = args
    m = block_maxima(series, season, min_fraction, years)
    if not np.array_equal(m.years, plan.years):
        raise DataError("season-years do not match the bootstrap year pool")
    state, best, se, _ = fit_series_bootstrap(m.values, m.years, plan, settings, periods, rv_years)
    return state, best, se


class Pipeline:
    """Staged workflow driven by a :class:`~probgrid.config.PipelineConfig`."""

    def __init__(self, config, workers=None):
        self.cfg = config
        self.workers = config.workers if workers is None else int(workers)
        self.out = config.require_path("output_dir")

    # --- manifests ------------------------------------------------------
    def stage_dir(self, stage):
        return os.path.join(self.out, stage)

    def manifest(self, stage):
        path = os.path.join(self.stage_dir(stage), MANIFEST)
        if not os.path.exists(path):
            raise MissingStageError(stage.split("/")[0])
        with open(path) as fh:
            return json.load(fh)

    def _path(self, stage, rel):
        p = os.path.join(self.stage_dir(stage), rel)
        if not os.path.exists(p):
            raise MissingStageError(stage.split("/")[0], f"{rel} not found")
        return p

    def _upstream(self, *stages):
        out = {}
        for s in stages:
            path = os.path.join(self.stage_dir(s), MANIFEST)
            if not os.path.exists(path):
                raise MissingStageError(s.split("/")[0])
            out[f"{s}/{MANIFEST}"] = sha256_file(path)
        return out

    def verify(self, stage):
        """True when every output listed in the stage manifest is intact."""
        try:
            m = self.manifest(stage)
        except MissingStageError:
            return False
        d = self.stage_dir(stage)
        for rel, digest in m["outputs"].items():
            p = os.path.join(d, rel)
            if not os.path.exists(p) or sha256_file(p) != digest:
                return False
        return True

    def _run(self, stage, inputs, compute):
        """Run ``compute(dirpath, mapper) -> info`` unless the manifest is current."""
        d = self.stage_dir(stage)
        mpath = os.path.join(d, MANIFEST)
        if os.path.exists(mpath):
            with open(mpath) as fh:
                old = json.load(fh)
            if (old.get("config_hash") == self.cfg.digest() and old.get("inputs") == inputs
                    and old.get("package_version") == __version__ and self.verify(stage)):
                log.info("%s: up to date", stage)
                return "up-to-date", old
        if os.path.isdir(d):
            shutil.rmtree(d)
        os.makedirs(d)
        with worker_pool(self.workers) as mapper:
            info = compute(d, mapper)
        outputs = {}
        for root, _, files in os.walk(d):
            for f in files:
                p = os.path.join(root, f)
                rel = os.path.relpath(p, d).replace(os.sep, "/")
                if rel != MANIFEST:
                    outputs[rel] = sha256_file(p)
        manifest = {
            "stage": stage,
            "manifest_version": MANIFEST_VERSION,
            "package_version": __version__,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "inputs": inputs,
            "outputs": dict(sorted(outputs.items())),
            "info": info,
        }
        tmp = mpath + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(_dumps(manifest))
        os.replace(tmp, mpath)
        return "ran", manifest

    # --- shared readers -------------------------------------------------
    def settings(self, selection=None):
        c = self.cfg
        return ModelSettings(
            ref_year=float(c["gev"]["reference_year"]),
            xi_bounds=tuple(float(x) for x in c["gev"]["xi_bounds"]),
            gev_restarts=c["gev"]["restarts"],
            bootstrap_restarts=c["gev"]["bootstrap_restarts"],
            min_obs=c["gev"]["min_obs"],
            centers=component_grid(c["grid"]["bbox"], float(c["spatial"]["component_spacing"])),
            bandwidth=float(c["spatial"]["bandwidth"]),
            min_stations=c["spatial"]["min_stations"],
            metric=c["spatial"]["metric"],
            isotropic=tuple(c["spatial"]["isotropic"]),
            selection=selection or {},
        )

    def read_grid(self):
        """Product cells ``(lonlat, elevation_m)``; each must be a lattice cell centre."""
        path = self.cfg.require_path("grid_file")
        if not os.path.exists(path):
            raise DataError(f"grid file not found: {path}")
        _, frame = read_table(path)
        for col in ("lon", "lat", "elevation_m"):
            if col not in frame:
                raise DataError(f"{path}: missing column {col!r}")
        lonlat = frame[["lon", "lat"]].to_numpy(float)
        idx = self.cfg.lattice.locate_centers(lonlat)
        if np.unique(idx).size != idx.size:
            raise DataError(f"{path}: duplicate grid cells")
        return lonlat, frame["elevation_m"].to_numpy(float)

    def read_stations(self):
        _, st = read_table(self._path("ingest", "stations.tsv"), string_columns=("station_id",))
        return {r.station_id: (float(r.lon), float(r.lat), float(r.elevation))
                for r in st.itertuples(index=False)}

    def read_maxima(self, season):
        _, mx = read_maxima(self._path("maxima", "maxima.tsv"))
        return [mx[k] for k in sorted(mx) if k[1] == season]

    def read_fits(self, season):
        meta, f = read_table(self._path("fit-gev", "station_fits.tsv"),
                             string_columns=("station_id", "season"))
        f = f[f["season"] == season]
        fits = StationFits(
            list(f["station_id"]), f[list(GEV_COLUMNS)].to_numpy(float),
            f["loglik"].to_numpy(float), f["converged"].to_numpy(int).astype(bool),
            f["n_obs"].to_numpy(int), float(meta["ref_year"]),
        )
        return fits, f[["lon", "lat"]].to_numpy(float), f["elevation"].to_numpy(float)

    def read_selection(self):
        with open(self._path("select", "selection.json")) as fh:
            raw = json.load(fh)
        return {s: {k: _candidate(v) for k, v in d.items()} for s, d in raw.items()}

    def read_models(self, season):
        models = {}
        for name in FIELD_COEFFICIENTS:
            p = os.path.join(self.stage_dir("fit-spatial"), "models", f"{season}_{name}.json")
            if os.path.exists(p):
                with open(p) as fh:
                    models[name] = SmoothedFieldModel.loads(fh.read())
        return models

    # --- stages ---------------------------------------------------------
    def ingest(self):
        cfg = self.cfg
        stations_file = cfg.require_path("stations_file")
        dly_dir = cfg.require_path("dly_dir")
        if not os.path.exists(stations_file):
            raise DataError(f"station metadata file not found: {stations_file}")
        with open(stations_file, "rb") as fh:
            raw = fh.read()
        metas = parse_stations(raw, source=stations_file)
        bbox = cfg["data"]["bbox"]
        chosen = select_stations(metas, dly_dir, bbox)
        listing = "".join(
            f"{m.station_id} {sha256_file(os.path.join(dly_dir, m.station_id + '.dly'))}\n"
            for m in chosen)
        inputs = {"stations_file": sha256_bytes(raw), "dly_files": sha256_bytes(listing.encode())}

        def compute(d, mapper):
            series = ingest(dly_dir, metas, cfg.window, cfg.completeness, bbox, mapper)
            write_daily(os.path.join(d, "daily.tsv"), os.path.join(d, "stations.tsv"), series,
                        cfg.window, cfg.completeness)
            return {"stations_considered": len(chosen), "stations_kept": len(series)}

        return self._run("ingest", inputs, compute)

    def maxima(self):
        cfg = self.cfg
        inputs = self._upstream("ingest")

        def compute(d, mapper):
            series = read_daily(self._path("ingest", "daily.tsv"), self._path("ingest", "stations.tsv"))
            out = [block_maxima(s, season, cfg.season_completeness, cfg.years)
                   for s in series for season in cfg.seasons]
            write_maxima(os.path.join(d, "maxima.tsv"), out, {
                "years": list(cfg.years), "min_fraction": str(cfg.season_completeness)})
            return {"series": len(out)}

        return self._run("maxima", inputs, compute)

    def fit_gev(self):
        inputs = self._upstream("maxima")

        def compute(d, mapper):
            st = self.read_stations()
            st_settings = self.settings()
            cols = {k: [] for k in ("station_id", "season", "lon", "lat", "elevation", *GEV_COLUMNS,
                                    "loglik", "converged", "n_obs")}
            info = {}
            for season in self.cfg.seasons:
                ml = self.read_maxima(season)
                fits = fit_stations(ml, st_settings, mapper=mapper)
                info[season] = {"stations": len(ml), "converged": int(fits.converged.sum())}
                for i, sid in enumerate(fits.station_ids):
                    lon, lat, elev = st[sid]
                    cols["station_id"].append(sid)
                    cols["season"].append(season)
                    cols["lon"].append(lon)
                    cols["lat"].append(lat)
                    cols["elevation"].append(elev)
                    for k, name in enumerate(GEV_COLUMNS):
                        cols[name].append(fits.coefs[i, k])
                    cols["loglik"].append(fits.loglik[i])
                    cols["converged"].append(int(fits.converged[i]))
                    cols["n_obs"].append(int(fits.n_obs[i]))
            for k in ("lon", "lat", "elevation", *GEV_COLUMNS, "loglik"):
                cols[k] = np.asarray(cols[k], dtype=float)
            for k in ("converged", "n_obs"):
                cols[k] = np.asarray(cols[k], dtype=int)
            write_table(os.path.join(d, "station_fits.tsv"), cols,
                        {"ref_year": st_settings.ref_year, "units": "mm"})
            return info

        return self._run("fit-gev", inputs, compute)

    def select(self):
        inputs = self._upstream("fit-gev")
        cfg = self.cfg

        def compute(d, mapper):
            settings = self.settings()
            selection, rows, info = {}, [], {}
            for season in cfg.seasons:
                fits, lonlat, elev = self.read_fits(season)
                sel, results = select_models(fits, lonlat, elev, cfg.candidates(), settings,
                                             folds=cfg["select"]["folds"], seed=cfg.seed, mapper=mapper)
                selection[season] = {k: _candidate_dict(v) for k, v in sel.items()}
                info[season] = {k: v.name for k, v in sel.items()}
                for name, res in results.items():
                    for r in res.rows:
                        rows.append((season, name, r["candidate"], r["covariate"], r["kappa"],
                                     math.nan if r["radius"] is None else r["radius"], r["fold"], r["crps"]))
            with open(os.path.join(d, "selection.json"), "w") as fh:
                fh.write(_dumps(selection))
            cols = list(zip(*rows)) if rows else [[]] * 8
            write_table(os.path.join(d, "cv_scores.tsv"), {
                "season": cols[0], "coefficient": cols[1], "candidate": cols[2],
                "covariate": cols[3], "kappa": np.asarray(cols[4], float),
                "radius": np.asarray(cols[5], float), "fold": np.asarray(cols[6], int),
                "crps": np.asarray(cols[7], float)})
            return info

        return self._run("select", inputs, compute)

    def fit_spatial(self):
        inputs = self._upstream("select")
        inputs["grid_file"] = sha256_file(self.cfg.require_path("grid_file"))

        def compute(d, mapper):
            grid, grid_elev = self.read_grid()
            selection = self.read_selection()
            info = {}
            for season in self.cfg.seasons:
                fits, lonlat, elev = self.read_fits(season)
                sp = smooth_and_krige(fits, lonlat, elev, self.settings(selection[season]), grid,
                                      grid_elev, season=season, mapper=mapper)
                for name, model in sp.models.items():
                    if model is not None:
                        p = os.path.join(d, "models", f"{season}_{name}.json")
                        os.makedirs(os.path.dirname(p), exist_ok=True)
                        with open(p, "w") as fh:
                            fh.write(model.dumps())
                cols = {"lon": grid[:, 0], "lat": grid[:, 1]}
                for k, name in enumerate(FIELD_COEFFICIENTS):
                    cols[name] = sp.estimate[:, k]
                for k, name in enumerate(FIELD_COEFFICIENTS):
                    cols[f"var_{name}"] = sp.variance[:, k]
                write_table(os.path.join(d, f"best_{season}.tsv"), cols,
                            {"season": season, "lattice": self.cfg.lattice.spec()})
                info[season] = {"failed": sp.failed}
            return info

        return self._run("fit-spatial", inputs, compute)

    def plan(self):
        y0, y1 = self.cfg.years
        return make_plan(np.arange(y0, y1 + 1), self.cfg["bootstrap"]["replicates"], self.cfg.seed)

    def bootstrap(self):
        inputs = self._upstream("fit-spatial")

        def compute(d, mapper):
            plan = self.plan()
            B, T = plan.indices.shape
            write_table(os.path.join(d, "plan.tsv"), {
                "replicate": np.repeat(np.arange(B), T), "slot": np.tile(np.arange(T), B),
                "year": plan.years[plan.indices].ravel()}, {"seed": plan.seed, "plan_sha256": plan.digest()})
            grid, grid_elev = self.read_grid()
            selection = self.read_selection()
            info = {"seed": plan.seed, "plan_sha256": plan.digest(), "B": B}
            for season in self.cfg.seasons:
                fits, lonlat, elev = self.read_fits(season)
                ml = self.read_maxima(season)
                if [m.station_id for m in ml] != fits.station_ids:
                    raise DataError("maxima and station fits disagree; rerun `probgrid fit-gev`")
                settings = self.settings(selection[season])
                models = self.read_models(season)
                tasks = [(b, plan, ml, lonlat, elev, settings, grid, grid_elev, fits, models, season)
                         for b in range(B)]
                effective = np.zeros(4, dtype=int)
                for b, (st_theta, grid_theta, failed) in enumerate(mapper(_replicate_task, tasks)):
                    base = os.path.join(d, "replicates", season, f"b{b:04d}")
                    for k, name in enumerate(FIELD_COEFFICIENTS):
                        write_table(f"{base}_{name}.tsv", {
                            "lon": grid[:, 0], "lat": grid[:, 1], "value": grid_theta[:, k]})
                        effective[k] += int(not np.isnan(grid_theta[:, k]).all())
                    write_table(f"{base}_stations.tsv", {
                        "station_id": fits.station_ids,
                        **{name: st_theta[:, k] for k, name in enumerate(FIELD_COEFFICIENTS)}})
                info[season] = {"effective_B": dict(zip(FIELD_COEFFICIENTS, effective.tolist()))}
            return info

        return self._run("bootstrap", inputs, compute)

    def _replicate_array(self, season, what):
        B = self.cfg["bootstrap"]["replicates"]
        frames = []
        for b in range(B):
            rel = os.path.join("replicates", season, f"b{b:04d}_{what}.tsv")
            _, f = read_table(self._path("bootstrap", rel), string_columns=("station_id",))
            frames.append(f)
        return frames

    def jja_mask(self, grid, selection):
        """Dry-region mask for JJA cells.

        A station is valid when its JJA fit converged and its median JJA
        maximum exceeds ``jja_min_median_mm``.  A cell is masked when some
        stations lie within the mask radius and the valid fraction among them
        is below ``jja_mask_fraction``.
        """
        pr = self.cfg["product"]
        fits, lonlat, _ = self.read_fits("JJA")
        medians = np.array([np.nanmedian(m.values) if m.n_present else math.nan
                            for m in self.read_maxima("JJA")])
        valid = fits.converged & (medians > pr["jja_min_median_mm"])
        radius = pr["jja_mask_radius"]
        if radius is None:
            r = selection.get("mu0", Candidate(None)).radius
            radius = r if r is not None else float(self.cfg["spatial"]["component_spacing"])
        metric = self.cfg["spatial"]["metric"]
        mask = np.zeros(len(grid), dtype=bool)
        for i, cell in enumerate(grid):
            near = in_radius(lonlat, cell, radius, metric)
            if near.any():
                mask[i] = valid[near].mean() < pr["jja_mask_fraction"]
        return mask

    def product(self):
        inputs = self._upstream("bootstrap")
        cfg = self.cfg

        def compute(d, mapper):
            grid, _ = self.read_grid()
            selection = self.read_selection()
            ref_year = float(cfg["gev"]["reference_year"])
            periods = [float(r) for r in cfg["product"]["return_periods"]]
            rv_years = [int(y) for y in cfg["product"]["years"]]
            info = {}
            for season in cfg.seasons:
                _, best = read_table(self._path("fit-spatial", f"best_{season}.tsv"))
                theta = best[list(FIELD_COEFFICIENTS)].to_numpy(float)
                reps = np.stack([
                    np.column_stack([f["value"].to_numpy(float) for f in fr])
                    for fr in zip(*(self._replicate_array(season, n) for n in FIELD_COEFFICIENTS))
                ])  # (B, m, 4)
                mask = self.jja_mask(grid, selection[season]) if season == "JJA" else np.zeros(len(grid), bool)
                gev_best = field_to_gev(theta, ref_year)
                gev_reps = np.concatenate([reps[..., :2], np.exp(reps[..., 2:3]), reps[..., 3:]], axis=-1)
                se, n_eff = bootstrap_se(gev_reps, axis=0)
                cols = {"lon": grid[:, 0], "lat": grid[:, 1]}
                for k, name in enumerate(GEV_COLUMNS):
                    cols[name] = np.where(mask, np.nan, np.asarray(getattr(gev_best, name), float))
                for k, name in enumerate(GEV_COLUMNS):
                    cols[f"se_{name}"] = np.where(mask, np.nan, se[:, k])
                cols["n_eff"] = n_eff.min(axis=1).astype(int)
                cols["masked"] = mask.astype(int)
                meta = {"season": season, "ref_year": ref_year, "lattice": cfg.lattice.spec(),
                        "units": "mm"}
                write_table(os.path.join(d, f"coefficients_{season}.tsv"), cols, meta)

                rv = return_values(theta, ref_year, periods, rv_years)  # (P, Y, m)
                rv_reps = np.stack([return_values(reps[b], ref_year, periods, rv_years)
                                    for b in range(reps.shape[0])])
                rv_se, rv_n = bootstrap_se(rv_reps, axis=0)
                P, Y, m = rv.shape
                write_table(os.path.join(d, f"return_values_{season}.tsv"), {
                    "lon": np.tile(grid[:, 0], P * Y), "lat": np.tile(grid[:, 1], P * Y),
                    "return_period": np.repeat(np.repeat(periods, Y), m),
                    "year": np.repeat(np.tile(rv_years, P), m).astype(int),
                    "value": np.where(np.tile(mask, P * Y), np.nan, rv.ravel()),
                    "se": np.where(np.tile(mask, P * Y), np.nan, rv_se.ravel()),
                    "n_eff": rv_n.ravel().astype(int),
                    "masked": np.tile(mask, P * Y).astype(int),
                }, meta)

                st_frames = self._replicate_array(season, "stations")
                fits, lonlat, _ = self.read_fits(season)
                n_corr = 0
                for k, name in enumerate(FIELD_COEFFICIENTS):
                    est = np.column_stack([f[name].to_numpy(float) for f in st_frames]).T
                    try:
                        cg = correlogram(est, lonlat, cfg["correlogram"]["bins"], cfg["spatial"]["metric"])
                    except DataError as exc:
                        log.warning("%s %s: no correlogram: %s", season, name, exc)
                        continue
                    write_table(os.path.join(d, f"correlogram_{season}_{name}.tsv"), cg.columns(),
                                {"season": season, "coefficient": name})
                    n_corr += 1
                info[season] = {"cells": int(len(grid)), "masked": int(mask.sum()),
                                "correlograms": n_corr}
            return info

        return self._run("product", inputs, compute)

    def run_all(self):
        return [getattr(self, s.replace("-", "_"))()[0] for s in STAGES]

    # --- gridded comparison ---------------------------------------------
    def compare(self, daily_file):
        if not os.path.exists(daily_file):
            raise DataError(f"gridded daily file not found: {daily_file}")
        inputs = self._upstream("product")
        inputs["daily_file"] = sha256_file(daily_file)
        cfg = self.cfg

        def compute(d, mapper):
            meta, frame = read_table(daily_file, string_columns=("date",))
            if "lattice" not in meta:
                raise DataError(f"{daily_file}: missing lattice metadata")
            check_same_lattice(cfg.lattice, Lattice.from_spec(meta["lattice"]))
            grid, grid_elev = self.read_grid()
            prod_idx = cfg.lattice.locate_centers(grid)
            cells = {}
            for (lon, lat), g in frame.groupby(["lon", "lat"], sort=True):
                idx = int(cfg.lattice.locate_centers([[lon, lat]])[0])
                cells[idx] = (g["date"].to_numpy("datetime64[D]"), g["value_mm"].to_numpy(float))
            plan = self.plan()
            periods = [float(r) for r in cfg["product"]["return_periods"]]
            rv_years = [int(y) for y in cfg["product"]["years"]]
            settings = self.settings()
            cov_rows = []
            for season in cfg.seasons:
                tasks, where = [], []
                for i, idx in enumerate(prod_idx):
                    if idx not in cells:
                        continue
                    dates, vals = cells[idx]
                    ok = ~np.isnan(vals)
                    series = StationSeries(f"cell{idx}", float(grid[i, 0]), float(grid[i, 1]),
                                           float(grid_elev[i]), dates[ok], vals[ok])
                    tasks.append((series, season, cfg.season_completeness, cfg.years, plan,
                                  settings, periods, rv_years))
                    where.append(i)
                results = list(mapper(_cell_task, tasks))
                _, prod = read_table(self._path("product", f"return_values_{season}.tsv"))
                P, Y, m = len(periods), len(rv_years), len(grid)
                pv = prod["value"].to_numpy(float).reshape(P, Y, m)
                ps = prod["se"].to_numpy(float).reshape(P, Y, m)
                rows = []
                status = {"ok": 0, "empty": m - len(tasks), "failed": 0}
                for i, (state, best, se) in zip(where, results):
                    status[state] += 1
                    if state != "ok":
                        continue
                    for a in range(P):
                        for b in range(Y):
                            if np.isnan(pv[a, b, i]):
                                continue
                            rows.append((grid[i, 0], grid[i, 1], periods[a], rv_years[b],
                                         best[a, b], se[a, b], pv[a, b, i], ps[a, b, i]))
                cols = list(zip(*rows)) if rows else [[]] * 8
                write_table(os.path.join(d, f"scatter_{season}.tsv"), {
                    "lon": np.asarray(cols[0], float), "lat": np.asarray(cols[1], float),
                    "return_period": np.asarray(cols[2], float), "year": np.asarray(cols[3], int),
                    "gridded_value": np.asarray(cols[4], float), "gridded_se": np.asarray(cols[5], float),
                    "station_value": np.asarray(cols[6], float), "station_se": np.asarray(cols[7], float),
                }, {"season": season, "x": "gridded", "y": "station"})
                cov_rows.append((season, m, status["ok"], status["empty"], status["failed"]))
            c = list(zip(*cov_rows))
            write_table(os.path.join(d, "coverage.tsv"), {
                "season": c[0], "cells": np.asarray(c[1], int), "used": np.asarray(c[2], int),
                "empty": np.asarray(c[3], int), "failed": np.asarray(c[4], int)})
            return {s: {"used": u, "empty": e, "failed": f} for s, _, u, e, f in cov_rows}

        return self._run("compare", inputs, compute)

    # --- plot-ready exports ---------------------------------------------
    def export(self, kind):
        if kind not in EXPORT_KINDS:
            raise UsageError(f"unknown export kind {kind!r}; choose one of {', '.join(EXPORT_KINDS)}")
        upstream = {"map": "product", "correlogram": "product", "scatter": "compare",
                    "ellipses": "fit-spatial"}[kind]
        inputs = self._upstream(upstream)
        stage = f"export/{kind}"

        def compute(d, mapper):
            getattr(self, f"_export_{kind}")(d)
            return {"kind": kind}

        return self._run(stage, inputs, compute)

    def _copy(self, stage, prefix, d):
        src = self.stage_dir(stage)
        names = sorted(f for f in os.listdir(src) if f.startswith(prefix))
        for f in names:
            shutil.copyfile(os.path.join(src, f), os.path.join(d, f))
        return names

    def _export_correlogram(self, d):
        self._copy("product", "correlogram_", d)

    def _export_scatter(self, d):
        self._copy("compare", "scatter_", d)

    def _export_map(self, d):
        cfg = self.cfg
        for season in cfg.seasons:
            meta, c = read_table(self._path("product", f"coefficients_{season}.tsv"))
            lon, lat = c["lon"].to_numpy(float), c["lat"].to_numpy(float)
            for name in GEV_COLUMNS:
                for col in (name, f"se_{name}"):
                    write_table(os.path.join(d, f"map_{season}_{col}.tsv"),
                                {"lon": lon, "lat": lat, "value": c[col].to_numpy(float)})
            _, rv = read_table(self._path("product", f"return_values_{season}.tsv"))
            for (r, y), g in rv.groupby(["return_period", "year"], sort=True):
                tag = f"rv{r:g}_{int(y)}"
                for col in ("value", "se"):
                    write_table(os.path.join(d, f"map_{season}_{tag}_{col}.tsv"), {
                        "lon": g["lon"].to_numpy(float), "lat": g["lat"].to_numpy(float),
                        "value": g[col].to_numpy(float)})

    def _export_ellipses(self, d):
        for season in self.cfg.seasons:
            for name, model in self.read_models(season).items():
                comps = model.active()
                centers = np.array([c.center for c in comps], dtype=float)
                kern = model.local(centers).kernel
                ell = np.array([kernel_ellipse(k) for k in kern]).reshape(-1, 3)
                write_table(os.path.join(d, f"ellipses_{season}_{name}.tsv"), {
                    "lon": centers[:, 0], "lat": centers[:, 1], "semi_major": ell[:, 0],
                    "semi_minor": ell[:, 1], "angle_deg": ell[:, 2]},
                    {"season": season, "coefficient": name, "units": "degrees"})


def write_gridded_daily(path, lattice, lonlat, dates, values):
    """Write a gridded daily product in the lattice format read by ``compare``.

    ``values`` has shape ``(days, cells)``; NaN entries are omitted.
    """
    values = np.asarray(values, dtype=float)
    lonlat = np.asarray(lonlat, dtype=float)
    lattice.locate_centers(lonlat)
    day, cell = np.nonzero(~np.isnan(values))
    order = np.lexsort((day, cell))
    day, cell = day[order], cell[order]
    return write_table(path, {
        "lon": lonlat[cell, 0], "lat": lonlat[cell, 1],
        "date": np.asarray(dates).astype("datetime64[D]").astype(str)[day],
        "value_mm": values[day, cell]}, {"lattice": lattice.spec(), "units": "mm"})


def digest_dir(path):
    """sha256 over (relative path, sha256) of every file below ``path``."""
    h = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for f in sorted(files):
            p = os.path.join(root, f)
            h.update(f"{os.path.relpath(p, path)} {sha256_file(p)}\n".encode())
    return h.hexdigest()
