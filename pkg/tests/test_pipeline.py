import os
import shutil
import subprocess
import sys

import numpy as np

from probgrid.cli import main
from probgrid.config import PipelineConfig
from probgrid.gev import GevCoefficients, gev_ppf
from probgrid.lattice import Lattice
from probgrid.pipeline import STAGES, Pipeline, digest_dir, write_gridded_daily
from probgrid.synthetic import daily_from_maxima
from probgrid.tables import read_table


def pipe(cfg):
    return Pipeline(PipelineConfig.load(str(cfg), env={}))


def test_every_manifest_verifies(fixture_run):
    p = pipe(fixture_run)
    for stage in STAGES:
        assert p.verify(stage), stage
        m = p.manifest(stage)
        assert m["config_hash"] == p.cfg.digest() and m["seed"] == 3


def test_rerun_is_a_no_op(fixture_run, capsys):
    out = os.path.dirname(fixture_run) + "/out"
    before = digest_dir(out)
    assert main(["-c", str(fixture_run), "run"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == [f"{s}: up-to-date" for s in STAGES]
    assert digest_dir(out) == before


def test_product_contents(fixture_run):
    p = pipe(fixture_run)
    lattice = p.cfg.lattice
    _, rv = read_table(os.path.join(p.stage_dir("product"), "return_values_DJF.tsv"))
    sel = rv[(rv["return_period"] == 20) & (rv["year"] == 2010)]
    assert len(sel) == lattice.size
    assert np.all(np.isfinite(sel["value"])) and np.all(sel["se"] >= 0)
    meta, coef = read_table(os.path.join(p.stage_dir("product"), "coefficients_DJF.tsv"))
    assert Lattice.from_spec(meta["lattice"]) == lattice
    assert np.all(coef["sigma"] > 0) and np.all(coef["n_eff"] <= 20)
    # bootstrap members: one grid per (replicate, coefficient, season)
    reps = os.listdir(os.path.join(p.stage_dir("bootstrap"), "replicates", "DJF"))
    assert sum(f.endswith("_mu0.tsv") for f in reps) == 20


def test_kriging_sanity_envelope(fixture_run):
    """Cells far from every station stay within the mean range +- 5 station-residual SDs."""
    from probgrid.spatial import pairwise_distance

    p = pipe(fixture_run)
    _, best = read_table(os.path.join(p.stage_dir("fit-spatial"), "best_DJF.tsv"))
    grid, elev = p.read_grid()
    fits, lonlat, st_elev = p.read_fits("DJF")
    far = pairwise_distance(grid, lonlat).min(axis=1) > 0.5
    assert far.any()
    for name, model in p.read_models("DJF").items():
        resid = fits.theta(name) - model.mean(lonlat, st_elev)
        sd = np.nanstd(resid)
        mean = model.mean(grid, elev)
        v = best[name].to_numpy(float)[far]
        assert np.all(v >= mean.min() - 5 * sd) and np.all(v <= mean.max() + 5 * sd), name


def test_missing_upstream_names_the_stage(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[paths]\noutput_dir = "{tmp_path / "out"}"\n')
    assert main(["-c", str(cfg), "fit-gev"]) == 3
    assert "probgrid maxima" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[gev]\nrestarts = -1\n")
    assert main(["-c", str(cfg), "ingest"]) == 2


def test_unknown_export_kind(fixture_run, capsys):
    assert main(["-c", str(fixture_run), "export", "bogus"]) == 2
    assert "unknown export kind" in capsys.readouterr().err


def test_exports(fixture_run):
    p = pipe(fixture_run)
    assert main(["-c", str(fixture_run), "export", "map"]) == 0
    assert main(["-c", str(fixture_run), "export", "correlogram"]) == 0
    assert main(["-c", str(fixture_run), "export", "ellipses"]) == 0
    d = p.stage_dir("export/map")
    _, m = read_table(os.path.join(d, "map_DJF_rv20_2010_value.tsv"))
    assert len(m) == p.cfg.lattice.size and list(m.columns) == ["lon", "lat", "value"]
    src = p.stage_dir("product")
    names = sorted(f for f in os.listdir(src) if f.startswith("correlogram_"))
    assert names
    for f in names:
        with open(os.path.join(src, f), "rb") as a, open(os.path.join(p.stage_dir("export/correlogram"), f), "rb") as b:
            assert a.read() == b.read()
    for coef in ("mu1", "xi"):  # isotropic by default
        _, e = read_table(os.path.join(p.stage_dir("export/ellipses"), f"ellipses_DJF_{coef}.tsv"))
        np.testing.assert_array_equal(e["angle_deg"], 0.0)
        np.testing.assert_allclose(e["semi_major"], e["semi_minor"], rtol=1e-12)


def _isolated_copy(fixture_run, tmp_path):
    src = os.path.dirname(fixture_run)
    dst = tmp_path / "fx"
    shutil.copytree(src, dst)
    return dst / "config.toml"


def test_stage_isolation_and_tamper_detection(fixture_run, tmp_path, capsys):
    cfg = _isolated_copy(fixture_run, tmp_path)
    p = pipe(cfg)
    before = digest_dir(p.stage_dir("product"))
    shutil.rmtree(p.stage_dir("product"))
    assert all(p.verify(s) for s in STAGES[:-1])
    assert main(["-c", str(cfg), "product"]) == 0
    assert digest_dir(p.stage_dir("product")) == before
    target = os.path.join(p.stage_dir("fit-gev"), "station_fits.tsv")
    with open(target, "a") as fh:
        fh.write("# tampered\n")
    assert not p.verify("fit-gev")
    capsys.readouterr()
    assert main(["-c", str(cfg), "fit-gev"]) == 0
    assert capsys.readouterr().out.strip() == "fit-gev: ran"


def _product_daily(p, drop=()):
    """Daily series whose maxima follow the product's own best coefficients, per cell."""
    grid, _ = p.read_grid()
    _, coef = read_table(os.path.join(p.stage_dir("product"), "coefficients_DJF.tsv"))
    years = np.arange(1950, 2018)
    c = GevCoefficients(*(coef[k].to_numpy(float) for k in ("mu0", "mu1", "sigma", "xi")), 1950.0)
    rng = np.random.default_rng(7)
    mu = c.location(years[:, None])
    mx = gev_ppf(rng.random(mu.shape), mu, c.sigma, c.xi)
    dates, values = daily_from_maxima({"DJF": mx}, years, seed=1)
    values[:, list(drop)] = np.nan
    return grid, dates, values


def test_compare_self_consistency(fixture_run, tmp_path):
    cfg = _isolated_copy(fixture_run, tmp_path)
    p = pipe(cfg)
    grid, dates, values = _product_daily(p, drop=(0, 1, 2))
    daily = tmp_path / "gridded.tsv"
    write_gridded_daily(daily, p.cfg.lattice, grid, dates, values)
    assert main(["-c", str(cfg), "compare", str(daily)]) == 0
    _, sc = read_table(os.path.join(p.stage_dir("compare"), "scatter_DJF.tsv"))
    x, y = sc["gridded_value"].to_numpy(), sc["station_value"].to_numpy()
    slope = float(x @ y / (x @ x))
    assert 0.9 <= slope <= 1.1
    _, cov = read_table(os.path.join(p.stage_dir("compare"), "coverage.tsv"), string_columns=("season",))
    row = cov[cov["season"] == "DJF"].iloc[0]
    assert row["empty"] == 3 and row["used"] + row["failed"] == p.cfg.lattice.size - 3
    assert set(zip(sc["lon"], sc["lat"])).isdisjoint({tuple(grid[i]) for i in range(3)})
    assert main(["-c", str(cfg), "export", "scatter"]) == 0


def test_compare_rejects_other_lattice(fixture_run, tmp_path, capsys):
    cfg = _isolated_copy(fixture_run, tmp_path)
    other = Lattice(0, 4, 0, 4, 1.0)
    daily = tmp_path / "coarse.tsv"
    write_gridded_daily(daily, other, other.centers(), np.array(["1950-01-01"], dtype="datetime64[D]"),
                        np.ones((1, other.size)))
    assert main(["-c", str(cfg), "compare", str(daily)]) == 3
    err = capsys.readouterr().err
    assert "res 0.5" in err and "res 1" in err


def test_console_script_version():
    exe = shutil.which("probgrid")
    cmd = [exe] if exe else [sys.executable, "-m", "probgrid.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("probgrid ")
