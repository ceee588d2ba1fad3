"""Monte Carlo harness: synthetic samples, ISE/MISE, factorial campaigns and CSV tables.

A campaign is a list of scenarios crossed with a list of estimators. Every
replication draws one sample that all estimators are fitted on, so the
estimators are compared on paired data. MISE is the median of the
replication ISEs; the mean is reported alongside for diagnosis.
"""

from __future__ import annotations

import csv
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from math import pi, sqrt

import numpy as np
from threadpoolctl import threadpool_limits

from .estimators import EstimatorSpec, fit_spec
from .exceptions import ConfigError, TiltSmoothError
from .smoothers import Sample
from .tilting import OptimizerConfig, quadrature_grid

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "RegressionFn",
    "Design",
    "Scenario",
    "SimConfig",
    "SimResult",
    "replication_seed",
    "gen_sample",
    "ise",
    "run_campaign",
    "emit_tables",
    "load_config",
    "parse_config",
    "ordered_map",
]

log = logging.getLogger(__name__)

FAILURE_FLAG_FRACTION = 0.10


def r_exp(x):
    """x + 4 exp(-2 x^2) / sqrt(2 pi)"""
    x = np.asarray(x, dtype=float)
    return x + 4.0 * np.exp(-2.0 * x * x) / sqrt(2.0 * pi)


def r_sin(x):
    """sin(4 pi x)"""
    return np.sin(4.0 * pi * np.asarray(x, dtype=float))


class RegressionFn(str, Enum):
    EXP = "exp"
    SIN = "sin"

    def __call__(self, x):
        return r_exp(x) if self is RegressionFn.EXP else r_sin(x)

    @property
    def default_interval(self) -> tuple[float, float]:
        return (-2.0, 2.0) if self is RegressionFn.EXP else (0.0, 1.0)


class Design(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


def _coerce_enum(cls, value, what):
    try:
        return value if isinstance(value, cls) else cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown {what} {value!r}; expected one of {choices}") from None


@dataclass(frozen=True)
class Scenario:
    """One data-generating setting.

    ``design_bounds`` is the support of a uniform design (ignored for the
    standard normal design); it defaults to the function's usual support.
    ``sigma = 0`` is accepted for noiseless checks.
    """

    fn: RegressionFn
    design: Design
    sigma: float
    n: int
    ise_interval: tuple[float, float] | None = None
    design_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        fn = _coerce_enum(RegressionFn, self.fn, "regression function")
        design = _coerce_enum(Design, self.design, "design")
        object.__setattr__(self, "fn", fn)
        object.__setattr__(self, "design", design)
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be nonnegative, got {self.sigma!r}")
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"n must be an integer >= 8, got {self.n!r}")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "n", int(self.n))
        for name, default in (("ise_interval", fn.default_interval), ("design_bounds", fn.default_interval)):
            value = getattr(self, name)
            a, b = default if value is None else (float(v) for v in value)
            if not a < b:
                raise ValueError(f"{name} must satisfy a < b, got {value!r}")
            object.__setattr__(self, name, (a, b))

    @property
    def family(self) -> str:
        """Table name, e.g. ``exp_normal`` or ``sin_uniform_0.15_0.85`` for a non-default interval."""
        name = f"{self.fn.value}_{self.design.value}"
        if self.ise_interval != self.fn.default_interval:
            name += "_{:g}_{:g}".format(*self.ise_interval)
        return name

    @property
    def label(self) -> str:
        return f"{self.family}_n{self.n}_sigma{self.sigma:g}"


@dataclass(frozen=True)
class SimConfig:
    scenarios: tuple[Scenario, ...]
    estimators: tuple[EstimatorSpec, ...]
    replications: int = 100
    base_seed: int = 0
    grid_points: int = 201
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be an unsigned 64-bit integer")
        names = self.estimator_names
        dupes = sorted({x for x in names if names.count(x) > 1})
        if dupes:
            raise ValueError(f"duplicate estimator names: {', '.join(dupes)}")
        # the tilting objective shares the ISE grid
        if self.optimizer.grid_points != self.grid_points:
            object.__setattr__(self, "optimizer", replace(self.optimizer, grid_points=self.grid_points))

    @property
    def estimator_names(self) -> list[str]:
        return [_spec_name(e) for e in self.estimators]


def _spec_name(spec: EstimatorSpec) -> str:
    name = spec.name
    if spec.kind != "io" and spec.kernel != "gaussian":
        name += f" {spec.kernel}"
    if spec.h is not None:
        name += f" h={spec.h:g}"
    return name


def replication_seed(base_seed: int, scenario: int, replication: int) -> int:
    """64-bit seed for one replication, hashed from (base_seed, scenario, replication)."""
    ss = np.random.SeedSequence([int(base_seed), int(scenario), int(replication)])
    return int(ss.generate_state(1, np.uint64)[0])


def gen_sample(sc: Scenario, seed: int) -> Sample:
    """Y = r(X) + sigma eps with X from the design; ``eval_interval`` is the ISE interval."""
    rng = np.random.default_rng(seed)
    if sc.design is Design.NORMAL:
        x = rng.standard_normal(sc.n)
    else:
        x = rng.uniform(*sc.design_bounds, size=sc.n)
    eps = rng.standard_normal(sc.n)
    return Sample(x, sc.fn(x) + sc.sigma * eps, sc.ise_interval)


def ise(estimate, truth, interval, grid_points: int = 201) -> float:
    """Trapezoid-rule integral of (estimate - truth)^2 over ``interval``.

    ``estimate`` and ``truth`` are callables or arrays already evaluated on
    the uniform ``grid_points`` grid.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    grid, w = quadrature_grid(float(interval[0]), float(interval[1]), grid_points)

    def on_grid(f):
        v = np.asarray(f(grid) if callable(f) else f, dtype=float)
        if v.shape != grid.shape:
            raise ValueError(f"expected {grid_points} grid values, got shape {v.shape}")
        return v

    diff = on_grid(estimate) - on_grid(truth)
    return float(w @ (diff * diff))


@dataclass(frozen=True)
class _Unit:
    j: int
    k: int
    seed: int
    scenario: Scenario
    estimators: tuple[EstimatorSpec, ...]
    grid_points: int
    optimizer: OptimizerConfig


def _run_unit(u: _Unit):
    s = gen_sample(u.scenario, u.seed)
    grid, _ = quadrature_grid(*u.scenario.ise_interval, u.grid_points)
    truth = u.scenario.fn(grid)
    cache: dict = {}
    out = []
    for spec in u.estimators:
        t0 = time.perf_counter()
        try:
            est = fit_spec(spec, s, cache, u.optimizer)
            value, err = ise(est.predict(grid), truth, u.scenario.ise_interval, u.grid_points), None
        except (TiltSmoothError, ValueError) as exc:
            value, err = np.nan, f"{type(exc).__name__}: {exc}"
        out.append((value, err, time.perf_counter() - t0))
    return out


def _init_worker():
    threadpool_limits(1)


@dataclass
class SimResult:
    """Raw ISEs of shape (scenarios, estimators, replications); NaN marks a failed replication."""

    config: SimConfig
    ise: np.ndarray
    seeds: np.ndarray
    runtimes: np.ndarray
    errors: dict = field(default_factory=dict)

    @property
    def estimator_names(self) -> list[str]:
        return self.config.estimator_names

    @property
    def failures(self) -> np.ndarray:
        return np.isnan(self.ise).sum(axis=2)

    @property
    def mise(self) -> np.ndarray:
        """Median ISE over successful replications, NaN where every replication failed."""
        out = np.full(self.ise.shape[:2], np.nan)
        for j, e in np.ndindex(*out.shape):
            ok = self.ise[j, e][~np.isnan(self.ise[j, e])]
            if ok.size:
                out[j, e] = np.median(ok)
        return out

    @property
    def mean_ise(self) -> np.ndarray:
        out = np.full(self.ise.shape[:2], np.nan)
        for j, e in np.ndindex(*out.shape):
            ok = self.ise[j, e][~np.isnan(self.ise[j, e])]
            if ok.size:
                out[j, e] = ok.mean()
        return out

    @property
    def flagged(self) -> np.ndarray:
        """Scenarios where some estimator failed in more than 10% of replications."""
        return (self.failures > FAILURE_FLAG_FRACTION * self.ise.shape[2]).any(axis=1)

    def cell(self, scenario: int, estimator: str) -> np.ndarray:
        return self.ise[scenario, self.estimator_names.index(estimator)]


def run_campaign(cfg: SimConfig, threads: int = 1, progress=None) -> SimResult:
    """Run every (scenario, replication) unit and fold results in index order.

    ``threads`` is the number of worker processes; BLAS inside each worker
    is pinned to one thread so results do not depend on ``threads``.
    """
    S, E, R = len(cfg.scenarios), len(cfg.estimators), cfg.replications
    units = [
        _Unit(j, k, replication_seed(cfg.base_seed, j, k), sc, cfg.estimators, cfg.grid_points, cfg.optimizer)
        for j, sc in enumerate(cfg.scenarios) for k in range(R)
    ]
    results = ordered_map(_run_unit, units, threads, progress)

    ises = np.full((S, E, R), np.nan)
    runtimes = np.zeros((S, E, R))
    seeds = np.zeros((S, R), dtype=np.uint64)
    errors = {}
    for u, rows in zip(units, results):
        seeds[u.j, u.k] = u.seed
        for e, (value, err, dt) in enumerate(rows):
            ises[u.j, e, u.k] = value
            runtimes[u.j, e, u.k] = dt
            if err is not None:
                errors[(u.j, e, u.k)] = err
    res = SimResult(cfg, ises, seeds, runtimes, errors)
    for j in np.flatnonzero(res.flagged):
        log.warning("scenario %s: more than %d%% failed replications", cfg.scenarios[j].label,
                    int(100 * FAILURE_FLAG_FRACTION))
    return res


def ordered_map(fn, items, threads: int = 1, progress=None) -> list:
    """``[fn(x) for x in items]`` over ``threads`` worker processes, results in input order.

    BLAS is limited to one thread everywhere so numbers never depend on ``threads``.
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    items = list(items)
    out = []
    if threads == 1:
        with threadpool_limits(1):
            for x in items:
                out.append(fn(x))
                if progress is not None:
                    progress(len(out), len(items))
        return out
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
        for r in pool.map(fn, items, chunksize=max(1, len(items) // (8 * threads))):
            out.append(r)
            if progress is not None:
                progress(len(out), len(items))
    return out


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6g}"


def emit_tables(res: SimResult, path) -> list[str]:
    """Write ``mise_<family>.csv`` per scenario family plus ``ise_raw.csv`` and ``failures.csv``.

    Returns the written file names. Table cells carry 6 significant digits;
    the raw file keeps full precision.
    """
    os.makedirs(path, exist_ok=True)
    names = res.estimator_names
    mise, mean, failed, flagged = res.mise, res.mean_ise, res.failures, res.flagged
    families: dict[str, list[int]] = {}
    for j, sc in enumerate(res.config.scenarios):
        families.setdefault(sc.family, []).append(j)

    written = []
    for family, rows in families.items():
        fname = f"mise_{family}.csv"
        with open(os.path.join(path, fname), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "sigma", *names, "best", *(f"mean_{e}" for e in names),
                        *(f"failed_{e}" for e in names), "flagged"])
            for j in sorted(rows, key=lambda j: (res.config.scenarios[j].n, res.config.scenarios[j].sigma)):
                sc = res.config.scenarios[j]
                best = "" if np.all(np.isnan(mise[j])) else names[int(np.nanargmin(mise[j]))]
                w.writerow([sc.n, f"{sc.sigma:g}", *map(_fmt, mise[j]), best, *map(_fmt, mean[j]),
                            *failed[j].tolist(), int(flagged[j])])
        written.append(fname)

    with open(os.path.join(path, "ise_raw.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "estimator", "replication", "seed", "ise"])
        for j, e, k in product(range(res.ise.shape[0]), range(len(names)), range(res.ise.shape[2])):
            v = res.ise[j, e, k]
            if not np.isnan(v):
                w.writerow([res.config.scenarios[j].label, names[e], k, int(res.seeds[j, k]), repr(float(v))])
    written.append("ise_raw.csv")

    with open(os.path.join(path, "failures.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "estimator", "replication", "seed", "error"])
        for (j, e, k) in sorted(res.errors):
            w.writerow([res.config.scenarios[j].label, names[e], k, int(res.seeds[j, k]), res.errors[(j, e, k)]])
    written.append("failures.csv")
    return written


# -- config files -------------------------------------------------------------

_TOP_KEYS = {"base_seed", "replications", "grid_points", "scenarios", "estimators", "optimizer"}
_SCENARIO_KEYS = {"function", "design", "n", "sigma", "ise_interval", "design_bounds"}
_ESTIMATOR_KEYS = {"kind", "nodes", "kernel", "h"}
_OPTIMIZER_KEYS = {"max_evals", "h_grid_size", "tol"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(where or "<root>", "expected a table")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _int(value, where, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(where, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(where, f"must be <= {hi}, got {value}")
    return value


def _positive(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not np.isfinite(value):
        raise ConfigError(where, f"must be a positive number, got {value!r}")
    return float(value)


def _interval(value, where):
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError(where, "expected [a, b]")
    if not value[0] < value[1]:
        raise ConfigError(where, f"needs a < b, got {value}")
    return (float(value[0]), float(value[1]))


def _as_list(value):
    return value if isinstance(value, list) else [value]


def parse_config(d: dict) -> SimConfig:
    """Build a :class:`SimConfig` from a parsed config table.

    ``n`` and ``sigma`` of a scenario entry may be lists; the entry then
    expands to their factorial product (n varying slowest).
    """
    _check_keys(d, _TOP_KEYS, "")
    for key in ("scenarios", "estimators"):
        if key not in d:
            raise ConfigError(key, "missing")
        if not isinstance(d[key], list) or not d[key]:
            raise ConfigError(key, "expected a nonempty list")

    scenarios = []
    for i, entry in enumerate(d["scenarios"]):
        where = f"scenarios[{i}]"
        _check_keys(entry, _SCENARIO_KEYS, where)
        for key in ("function", "design", "n", "sigma"):
            if key not in entry:
                raise ConfigError(f"{where}.{key}", "missing")
        ns = [_int(v, f"{where}.n", lo=8) for v in _as_list(entry["n"])]
        sigmas = [_positive(v, f"{where}.sigma") for v in _as_list(entry["sigma"])]
        extra = {k: _interval(entry[k], f"{where}.{k}") for k in ("ise_interval", "design_bounds") if k in entry}
        for n, sigma in product(ns, sigmas):
            try:
                scenarios.append(Scenario(entry["function"], entry["design"], sigma, n, **extra))
            except ValueError as exc:
                field_ = "function" if "function" in str(exc) else "design"
                raise ConfigError(f"{where}.{field_}", str(exc)) from None

    estimators = []
    for i, entry in enumerate(d["estimators"]):
        where = f"estimators[{i}]"
        _check_keys(entry, _ESTIMATOR_KEYS, where)
        if "kind" not in entry:
            raise ConfigError(f"{where}.kind", "missing")
        kw = {}
        if "nodes" in entry:
            kw["nodes"] = _int(entry["nodes"], f"{where}.nodes", lo=2)
        if "h" in entry:
            kw["h"] = _positive(entry["h"], f"{where}.h")
        if "kernel" in entry:
            kw["kernel"] = entry["kernel"]
        try:
            estimators.append(EstimatorSpec(entry["kind"], **kw))
        except ValueError as exc:
            raise ConfigError(f"{where}.{'kernel' if 'kernel' in str(exc) else 'kind'}", str(exc)) from None

    opt = d.get("optimizer", {})
    _check_keys(opt, _OPTIMIZER_KEYS, "optimizer")
    opt_kw = {}
    if "max_evals" in opt:
        opt_kw["max_evals"] = _int(opt["max_evals"], "optimizer.max_evals", lo=1)
    if "h_grid_size" in opt:
        opt_kw["h_grid_size"] = _int(opt["h_grid_size"], "optimizer.h_grid_size", lo=1)
    if "tol" in opt:
        opt_kw["tol"] = _positive(opt["tol"], "optimizer.tol")

    kw = {}
    if "replications" in d:
        kw["replications"] = _int(d["replications"], "replications", lo=1)
    if "base_seed" in d:
        kw["base_seed"] = _int(d["base_seed"], "base_seed", lo=0, hi=2**64 - 1)
    if "grid_points" in d:
        kw["grid_points"] = _int(d["grid_points"], "grid_points", lo=2)
    try:
        return SimConfig(scenarios, estimators, optimizer=OptimizerConfig(**opt_kw), **kw)
    except ValueError as exc:
        raise ConfigError("estimators", str(exc)) from None


def load_config(path) -> SimConfig:
    """Read a TOML campaign file (see ``configs/table1_desk.cfg``)."""
    with open(path, "rb") as fh:
        try:
            d = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return parse_config(d)


def config_to_dict(cfg: SimConfig) -> dict:
    """Plain-data view of a config, one scenario entry per scenario (used in run manifests)."""
    return {
        "base_seed": cfg.base_seed,
        "replications": cfg.replications,
        "grid_points": cfg.grid_points,
        "scenarios": [
            {"function": sc.fn.value, "design": sc.design.value, "n": sc.n, "sigma": sc.sigma,
             "ise_interval": list(sc.ise_interval), "design_bounds": list(sc.design_bounds)}
            for sc in cfg.scenarios
        ],
        "estimators": [
            {k: v for k, v in (("kind", e.kind), ("nodes", e.nodes), ("kernel", e.kernel), ("h", e.h)) if v is not None}
            for e in cfg.estimators
        ],
        "optimizer": {"max_evals": cfg.optimizer.max_evals, "h_grid_size": cfg.optimizer.h_grid_size,
                      "tol": cfg.optimizer.tol},
    }
