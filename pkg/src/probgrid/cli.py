"""``probgrid`` command line.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numerical failure.
"""

import argparse
import logging
import os
import sys

from . import __version__
from .config import PipelineConfig
from .errors import ProbgridError
from .pipeline import EXPORT_KINDS, STAGES, Pipeline

log = logging.getLogger("probgrid")


def _write_fixture(args):
    from .synthetic import gen_world, write_world

    os.makedirs(args.directory, exist_ok=True)
    bbox = tuple(args.bbox)
    world = gen_world(args.stations, bbox=bbox, layout=args.layout, grid_resolution=args.resolution,
                      ref_year=args.years[0], seed=args.seed)
    write_world(world, args.directory, range(args.years[0], args.years[1] + 1),
                storm_dependence=args.storm_dependence, seasons=tuple(args.seasons), seed=args.seed)
    y0, y1 = args.years
    seasons = ", ".join(f'"{s}"' for s in args.seasons)
    text = f"""[paths]
dly_dir = "dly"
stations_file = "ghcnd-stations.txt"
grid_file = "grid.tsv"
output_dir = "out"

[data]
window = ["{y0 - 1}-12-01", "{y1}-11-30"]
years = [{y0}, {y1}]
seasons = [{seasons}]

[grid]
bbox = [{bbox[0]}, {bbox[1]}, {bbox[2]}, {bbox[3]}]
resolution = {args.resolution}

[gev]
reference_year = {y0}
min_obs = {min(30, y1 - y0 + 1)}

[spatial]
component_spacing = {max(bbox[1] - bbox[0], bbox[3] - bbox[2]) / 2}
min_stations = {min(10, args.stations)}

[select]
radii = [{max(bbox[1] - bbox[0], bbox[3] - bbox[2]) * 0.9}]
kappas = [0.5]
covariates = ["elevation"]

[bootstrap]
replicates = {args.replicates}
seed = {args.seed}
"""
    path = os.path.join(args.directory, "config.toml")
    with open(path, "w") as fh:
        fh.write(text)
    print(path)


def build_parser():
    p = argparse.ArgumentParser(prog="probgrid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"probgrid {__version__}")
    p.add_argument("-c", "--config", help="TOML config file")
    p.add_argument("-w", "--workers", type=int, help="worker processes (overrides config)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, help=f"run the {stage} stage")
    sub.add_parser("run", help="run every stage from ingest to product")
    c = sub.add_parser("compare", help="per-cell fits of a gridded daily product vs the station product")
    c.add_argument("daily_file")
    e = sub.add_parser("export", help="plot-ready tables")
    e.add_argument("kind", help=" | ".join(EXPORT_KINDS))
    s = sub.add_parser("synth", help="write a synthetic fixture (data files plus config.toml)")
    s.add_argument("directory")
    s.add_argument("--stations", type=int, default=20)
    s.add_argument("--years", type=int, nargs=2, default=[1950, 2017])
    s.add_argument("--bbox", type=float, nargs=4, default=[0.0, 4.0, 0.0, 4.0])
    s.add_argument("--resolution", type=float, default=0.5)
    s.add_argument("--seasons", nargs="+", default=["DJF"])
    s.add_argument("--layout", default="uniform", choices=["uniform", "clustered"])
    s.add_argument("--storm-dependence", default="shared-shock", choices=["none", "shared-shock"])
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            _write_fixture(args)
            return 0
        cfg = PipelineConfig.load(args.config)
        pipe = Pipeline(cfg, workers=args.workers)
        if args.command == "run":
            for stage, status in zip(STAGES, pipe.run_all()):
                print(f"{stage}: {status}")
        elif args.command == "compare":
            print(f"compare: {pipe.compare(args.daily_file)[0]}")
        elif args.command == "export":
            print(f"export {args.kind}: {pipe.export(args.kind)[0]}")
        else:
            status, _ = getattr(pipe, args.command.replace("-", "_"))()
            print(f"{args.command}: {status}")
    except ProbgridError as exc:
        print(f"probgrid: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
