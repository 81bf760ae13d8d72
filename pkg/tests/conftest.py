import datetime as dt

import numpy as np
import pytest


def dly_line(station="USW00012345", year=1999, month=1, element="PRCP", days=None):
    """Hand-built fixed-width record; ``days`` maps day -> (value_field, flags)."""
    days = days or {}
    parts = [f"{station}{year:04d}{month:02d}{element}"]
    for d in range(1, 32):
        value, flags = days.get(d, (-9999, "   "))
        parts.append(f"{value:5d}{flags}")
    return "".join(parts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def daily_series(station_id, start, values, lon=1.0, lat=1.0, elevation=100.0):
    from probgrid.ghcn import StationSeries

    dates = np.arange(np.datetime64(start, "D"), np.datetime64(start, "D") + len(values))
    return StationSeries(station_id, lon, lat, elevation, dates, np.asarray(values, float))


@pytest.fixture
def make_series():
    return daily_series


@pytest.fixture
def date():
    return dt.date


FIXTURE_ARGS = ["--stations", "20", "--replicates", "20", "--seasons", "DJF", "JJA", "--seed", "3"]


def build_fixture(directory, workers=1):
    """Write the 20-station synthetic fixture and run every stage; returns the config path."""
    from probgrid.cli import main

    assert main(["synth", str(directory)] + FIXTURE_ARGS) == 0
    cfg = directory / "config.toml"
    with open(cfg, "a") as fh:
        fh.write("\n[product]\nyears = [1955, 1985, 2010, 2015]\n")
    assert main(["-c", str(cfg), "-w", str(workers), "run"]) == 0
    return cfg


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory):
    return build_fixture(tmp_path_factory.mktemp("fixture"))


# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def record():
    def _record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
