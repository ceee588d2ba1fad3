"""Command-line entry point: ``tiltsmooth {fit,simulate,covid,dose}``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from . import __version__
from .estimators import ESTIMATOR_KINDS, EstimatorSpec, fit_spec
from .exceptions import DataFormatError, TiltSmoothError, UnknownSeries
from .realdata import (
    FIELDS,
    ZERO_COUNT_VALUE,
    CovidColumns,
    compare_estimators,
    dose_response_compare,
    read_covid_records,
    read_dose_csv,
    series_sample,
)
from .simulate import config_to_dict, emit_tables, load_config, ordered_map, run_campaign
from .smoothers import Sample
from .tilting import OptimizerConfig, expand_p, quadrature_grid

log = logging.getLogger("tiltsmooth")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation (missing input file and the like); exits with code 2."""


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    base_seed: int | None
    version: str = __version__
    timestamp: str = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _fmt(v: float) -> str:
    return "nan" if v is None or np.isnan(v) else f"{v:.6g}"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_")


def _require_file(path):
    if path is None or not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _spec_from_args(args, kind=None) -> EstimatorSpec:
    return EstimatorSpec(kind or args.estimator, nodes=args.nodes, kernel=args.kernel, h=args.h)


def _optimizer(args) -> OptimizerConfig:
    return OptimizerConfig(max_evals=args.max_evals, grid_points=args.grid_points)


def _write_curve(path, xs, ys, header=("x", "y_hat")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(xs, ys):
            w.writerow([repr(float(x)), repr(float(y))])


def _read_xy(path) -> Sample:
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"x", "y"} <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: expected columns x,y", 1)
        for rec in reader:
            try:
                xs.append(float(rec["x"]))
                ys.append(float(rec["y"]))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: cannot parse x/y", reader.line_num) from None
    return Sample(np.array(xs), np.array(ys))


# -- subcommands -------------------------------------------------------------

def cmd_fit(args) -> int:
    _require_file(args.input)
    s = _read_xy(args.input)
    spec = _spec_from_args(args)
    est = fit_spec(spec, s, {}, _optimizer(args))
    grid, _ = quadrature_grid(*s.eval_interval, args.grid_points)
    _write_curve(os.path.join(args.out, "fitted_curve.csv"), grid, est.predict(grid))
    resid = s.y - est.predict(s.x)
    lines = [f"estimator: {spec.name}", f"n: {s.n}", f"h: {est.bandwidth_!r}"]
    if spec.tilted:
        p = expand_p(est.tilt_params_, s)
        lines += [
            f"objective: {est.objective_!r}",
            f"uniform_objective: {est.fit_.start_objective!r}",
            "node_positions: " + " ".join(repr(float(v)) for v in est.tilt_params_.node_positions),
            "node_values: " + " ".join(repr(float(v)) for v in est.node_values_),
            f"p_sum: {float(p.sum())!r}",
        ]
    lines.append(f"mse: {float(np.mean(resid * resid))!r}")
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    RunManifest("fit", {"input": os.path.abspath(args.input), "estimator": asdict(spec),
                        "grid_points": args.grid_points, "max_evals": args.max_evals}, args.seed).write(args.out)
    return EXIT_OK


def _bundled_config(name: str) -> str:
    return str(resources.files("tiltsmooth").joinpath("configs", name))


def cmd_simulate(args) -> int:
    path = args.config or _bundled_config("table1_desk.cfg")
    _require_file(path)
    cfg = load_config(path)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.replications is not None:
        overrides["replications"] = args.replications
    if overrides:
        cfg = replace(cfg, **overrides)

    step = max(1, len(cfg.scenarios) * cfg.replications // 20)

    def progress(i, total):
        if i % step == 0 or i == total:
            log.info("simulate: %d/%d replications", i, total)

    res = run_campaign(cfg, threads=args.threads, progress=progress)
    emit_tables(res, args.out)
    RunManifest("simulate", {"config_file": os.path.abspath(path), **config_to_dict(cfg)},
                cfg.base_seed).write(args.out)
    n_failed = int(res.failures.sum())
    if n_failed:
        log.warning("%d estimator fits failed; see failures.csv", n_failed)
    return EXIT_OK


def _covid_job(job):
    country, field_, s, specs, optimizer = job
    return compare_estimators(s, specs, optimizer)


def cmd_covid(args) -> int:
    _require_file(args.input)
    cols = CovidColumns(args.date_col, args.country_col, args.cases_col, args.deaths_col, args.date_format)
    series = read_covid_records(args.input, cols)
    countries = args.country or sorted(series)
    missing = [c for c in countries if c not in series]
    if missing:
        raise UnknownSeries(f"country not found: {', '.join(missing)}; available: {', '.join(sorted(series))}")
    specs = [_spec_from_args(args, k) for k in (args.estimator or ["io", "nw", "tilted-nw"])]
    optimizer = _optimizer(args)
    jobs = [(c, f, series_sample(series[c], f, args.zero_value), specs, optimizer)
            for f in args.fields for c in countries]
    results = ordered_map(_covid_job, jobs, args.threads)

    names = [s.name for s in specs]
    failed = 0
    with open(os.path.join(args.out, "mse_by_country.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "field", "n", *names, "best", "failed"])
        for (country, field_, s, _, _), rows in zip(jobs, results):
            by_name = {r.name: r for r in rows}
            best = " ".join(r.name for r in rows if r.best)
            bad = [r.name for r in rows if r.failed]
            failed += len(bad)
            w.writerow([country, field_, s.n, *(_fmt(by_name[n].mse) for n in names), best, " ".join(bad)])
            grid, _ = quadrature_grid(*s.eval_interval, args.grid_points)
            for r in rows:
                if not r.failed:
                    _write_curve(os.path.join(args.out, f"fitted_curve_{_safe(f'{country}_{field_}_{r.name}')}.csv"),
                                 grid, r.estimator.predict(grid))
                else:
                    log.error("%s %s %s: %s", country, field_, r.name, r.error)
    RunManifest("covid", {"input": os.path.abspath(args.input), "countries": countries, "fields": args.fields,
                          "zero_value": args.zero_value, "columns": asdict(cols),
                          "estimators": [asdict(s) for s in specs], "grid_points": args.grid_points,
                          "max_evals": args.max_evals}, args.seed).write(args.out)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_dose(args) -> int:
    _require_file(args.input)
    doses, responses = read_dose_csv(args.input)
    specs = (EstimatorSpec("tilted-ll", nodes=args.nodes, kernel=args.kernel), EstimatorSpec("ll", kernel=args.kernel),
             EstimatorSpec("io"))
    rows = dose_response_compare(doses, responses, specs, loss=args.loss, optimizer=_optimizer(args))
    with open(os.path.join(args.out, "dose_response_mse.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "estimator", "mse", "best", "error"])
        for i, r in enumerate(rows, 1):
            w.writerow([i, r.name, _fmt(r.mse), int(r.best), r.error or ""])
    grid = np.geomspace(doses.min(), doses.max(), args.grid_points)
    for r in rows:
        if r.failed:
            log.error("%s: %s", r.name, r.error)
            continue
        pred = r.estimator.predict(grid if r.name == "4PL" else np.log10(grid))
        _write_curve(os.path.join(args.out, f"fitted_curve_{_safe(r.name)}.csv"), grid, pred, ("dose", "y_hat"))
    RunManifest("dose", {"input": os.path.abspath(args.input), "loss": args.loss,
                         "estimators": [asdict(s) for s in specs] + [{"kind": "4pl"}],
                         "grid_points": args.grid_points, "max_evals": args.max_evals}, args.seed).write(args.out)
    return EXIT_FAILED if any(r.failed for r in rows) else EXIT_OK


# -- argument parsing --------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed for stochastic outputs")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--nodes", type=_positive_int, default=4, help="tilt nodes for tilted estimators")
    est.add_argument("--h", type=_positive_float, default=None, help="fixed bandwidth (skips selection)")
    est.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    est.add_argument("--grid-points", type=_positive_int, default=201)
    est.add_argument("--max-evals", type=_positive_int, default=500, help="Nelder-Mead budget per bandwidth")

    p = argparse.ArgumentParser(prog="tiltsmooth", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common, est], help="fit one estimator to an x,y CSV")
    f.add_argument("input", help="CSV with x,y columns")
    f.add_argument("--estimator", choices=ESTIMATOR_KINDS, default="tilted-nw")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo campaign")
    s.add_argument("--config", help="campaign file (TOML); defaults to the bundled table1_desk.cfg")
    s.add_argument("--replications", type=_positive_int, default=None, help="override the config's replications")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("covid", parents=[common, est], help="compare estimators on daily count series")
    c.add_argument("input", help="ECDC-style CSV export")
    c.add_argument("--estimator", choices=ESTIMATOR_KINDS, action="append",
                   help="repeatable; default io, nw, tilted-nw")
    c.add_argument("--country", action="append", help="repeatable; default every country in the file")
    c.add_argument("--fields", nargs="+", choices=FIELDS, default=list(FIELDS))
    c.add_argument("--zero-value", type=_positive_float, default=ZERO_COUNT_VALUE,
                   help="count substituted for zeros before the log")
    defaults = CovidColumns()
    c.add_argument("--date-col", default=defaults.date)
    c.add_argument("--country-col", default=defaults.country)
    c.add_argument("--cases-col", default=defaults.cases)
    c.add_argument("--deaths-col", default=defaults.deaths)
    c.add_argument("--date-format", default=defaults.date_format)
    c.set_defaults(func=cmd_covid)

    d = sub.add_parser("dose", parents=[common, est], help="tilted LL, LL, IO and robust 4PL on dose,response CSV")
    d.add_argument("input", help="CSV with dose,response columns")
    d.add_argument("--loss", choices=("huber", "squared"), default="huber")
    d.set_defaults(func=cmd_dose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except UsageError as exc:
        print(f"tiltsmooth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TiltSmoothError, ValueError, OSError) as exc:
        print(f"tiltsmooth {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
