"""Real-data pipelines: daily count series and dose-response curves.

Count series are read from ECDC-style CSV exports, log transformed (zero
counts replaced by a small positive value first) and indexed by day. Each
estimator is fitted to the whole series and scored by in-sample MSE on the
log scale. Dose-response data are smoothed on log10(dose) and compared with
a robust four-parameter logistic fit on the original dose scale.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from math import log

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._optim import nelder_mead
from .estimators import EstimatorSpec, _column, fit_spec
from .exceptions import DataFormatError, DoseDomainError, InsufficientDesign, TiltSmoothError, UnknownSeries
from .smoothers import Sample
from .tilting import OptimizerConfig

__all__ = [
    "CovidColumns",
    "SeriesRecord",
    "read_covid_records",
    "series_sample",
    "ingest_covid_csv",
    "write_covid_csv",
    "ComparisonRow",
    "compare_estimators",
    "FourPL",
    "FourPLRegressor",
    "fit_4pl_robust",
    "read_dose_csv",
    "dose_response_compare",
]

FIELDS = ("cases", "deaths")
ZERO_COUNT_VALUE = 0.5
HUBER_K = 1.345
MAD_SCALE = 1.482602218505602  # 1 / Phi^-1(3/4)


# -- count series ------------------------------------------------------------

@dataclass(frozen=True)
class CovidColumns:
    date: str = "dateRep"
    country: str = "countriesAndTerritories"
    cases: str = "cases"
    deaths: str = "deaths"
    date_format: str = "%d/%m/%Y"


@dataclass(frozen=True)
class SeriesRecord:
    date: dt.date
    country: str
    cases: int
    deaths: int


def _count(text: str, name: str, row: int) -> int:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"{name} {text!r} is not a number", row) from None
    if not np.isfinite(value) or value != int(value):
        raise DataFormatError(f"{name} {text!r} is not a whole count", row)
    if value < 0:
        raise DataFormatError(f"negative {name} count {int(value)}", row)
    return int(value)


def read_covid_records(path, columns: CovidColumns | None = None) -> dict[str, list[SeriesRecord]]:
    """Parse every row into per-country records sorted by date.

    Row numbers in errors are file line numbers (the header is row 1).
    """
    cols = columns or CovidColumns()
    out: dict[str, list[SeriesRecord]] = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (cols.date, cols.country, cols.cases, cols.deaths) if c not in header]
        if missing:
            raise DataFormatError(f"missing column(s) {', '.join(missing)}; found {', '.join(header)}", 1)
        for rec in reader:
            row = reader.line_num
            try:
                date = dt.datetime.strptime((rec[cols.date] or "").strip(), cols.date_format).date()
            except ValueError:
                raise DataFormatError(f"cannot parse date {rec[cols.date]!r} as {cols.date_format}", row) from None
            country = (rec[cols.country] or "").strip()
            if not country:
                raise DataFormatError("empty country", row)
            out.setdefault(country, []).append(
                SeriesRecord(date, country, _count(rec[cols.cases], "cases", row),
                             _count(rec[cols.deaths], "deaths", row)))
    for country, recs in out.items():
        recs.sort(key=lambda r: r.date)
        for a, b in zip(recs, recs[1:]):
            if a.date == b.date:
                raise DataFormatError(f"duplicate date {a.date.isoformat()} for {country}")
    return out


def series_sample(records, field: str, zero_value: float = ZERO_COUNT_VALUE) -> Sample:
    """X = days since the first record, Y = log(count) with zeros replaced by ``zero_value``."""
    if field not in FIELDS:
        raise ValueError(f"field must be one of {', '.join(FIELDS)}, got {field!r}")
    if not zero_value > 0:
        raise ValueError("zero_value must be positive")
    records = sorted(records, key=lambda r: r.date)
    if len(records) < 2:
        raise DataFormatError(f"series has {len(records)} observation(s); at least 2 are needed")
    start = records[0].date
    x = np.array([(r.date - start).days for r in records], dtype=float)
    counts = np.array([getattr(r, field) for r in records], dtype=float)
    y = np.log(np.where(counts == 0, zero_value, counts))
    return Sample(x, y, (0.0, float(x[-1])))


def ingest_covid_csv(path, country: str, field: str = "cases", *, zero_value: float = ZERO_COUNT_VALUE,
                     columns: CovidColumns | None = None) -> Sample:
    """Log-count series of one country, indexed by day."""
    series = read_covid_records(path, columns)
    if country not in series:
        raise UnknownSeries(f"country {country!r} not found; available: {', '.join(sorted(series)) or 'none'}")
    return series_sample(series[country], field, zero_value)


def write_covid_csv(path, series: dict[str, Sample], field: str = "cases", *,
                    start: dt.date = dt.date(2020, 1, 1), zero_value: float = ZERO_COUNT_VALUE,
                    columns: CovidColumns | None = None) -> None:
    """Write log-count samples back out as counts so they re-ingest to the same X and Y.

    The other count column is written as zero.
    """
    cols = columns or CovidColumns()
    zero_y = log(zero_value)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([cols.date, cols.country, cols.cases, cols.deaths])
        for country, s in series.items():
            for x, y in zip(s.x, s.y):
                count = 0 if y == zero_y else int(round(np.exp(y)))
                date = (start + dt.timedelta(days=int(x))).strftime(cols.date_format)
                w.writerow([date, country, count if field == "cases" else 0, count if field == "deaths" else 0])


# -- estimator comparison ----------------------------------------------------

@dataclass
class ComparisonRow:
    name: str
    mse: float
    best: bool = False
    error: str | None = None
    estimator: object = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.error is not None


def _rank(rows: list[ComparisonRow]) -> list[ComparisonRow]:
    rows = sorted(rows, key=lambda r: (r.failed, r.mse if not r.failed else 0.0, r.name))
    for r in rows:
        r.best = False
    ok = [r for r in rows if not r.failed]
    if ok:
        for r in ok:
            if r.mse == ok[0].mse:
                r.best = True
    return rows


def _name(spec) -> str:
    return spec.name if isinstance(spec, EstimatorSpec) else type(spec).__name__


def compare_estimators(s: Sample, specs, optimizer: OptimizerConfig | None = None) -> list[ComparisonRow]:
    """Fit each estimator on the whole sample and rank by in-sample MSE.

    ``specs`` holds :class:`EstimatorSpec` items or unfitted scikit-learn
    regressors. Failures are kept as rows with ``error`` set, ranked last.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("no estimators to compare")
    cache: dict = {}
    rows = []
    for spec in specs:
        try:
            if isinstance(spec, EstimatorSpec):
                est = fit_spec(spec, s, cache, optimizer)
            else:
                est = clone(spec).fit(s.x[:, None], s.y)
            resid = s.y - est.predict(s.x[:, None])
            rows.append(ComparisonRow(_name(spec), float(np.mean(resid * resid)), estimator=est))
        except (TiltSmoothError, ValueError) as exc:
            rows.append(ComparisonRow(_name(spec), float("nan"), error=f"{type(exc).__name__}: {exc}"))
    return _rank(rows)


# -- four-parameter logistic -------------------------------------------------

@dataclass(frozen=True)
class FourPL:
    """f(x) = d + (a - d) / (1 + (x / c)^b) for doses x > 0."""

    a: float
    d: float
    c: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"c must be positive, got {self.c!r}")

    def __call__(self, x) -> np.ndarray:
        x = _doses(x)
        # 1 / (1 + (x/c)^b) written through the logistic function to stay finite
        return self.d + (self.a - self.d) * expit(-self.b * (np.log(x) - np.log(self.c)))

    def canonical(self) -> "FourPL":
        """Same curve with d >= a."""
        return self if self.d >= self.a else FourPL(self.d, self.a, self.c, -self.b)


def _doses(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DoseDomainError("doses must be finite and positive")
    return x


def _huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _fit_4pl(logx, y, loss, starts, y_scale):
    def f(theta):
        a, d, logc, b = theta
        r = y - (d + (a - d) * expit(-b * (logx - logc)))
        return float(np.sum(loss(r)))

    steps = np.array([0.1 * y_scale, 0.1 * y_scale, 0.5, 0.5])
    fatol = 1e-24 * y_scale * y_scale * y.size
    # short searches from every start, then polish the best one
    best = min((nelder_mead(f, s0, step=steps, max_evals=400, ftol=1e-10, fatol=fatol, adaptive=True)
                for s0 in starts), key=lambda r: r.fun)
    theta, fun = best.x, best.fun
    for _ in range(10):
        res = nelder_mead(f, theta, step=0.1 * steps, max_evals=2000, ftol=1e-15, fatol=fatol, adaptive=True)
        if not res.fun < fun - 1e-12 * fun:
            break
        theta, fun = res.x, res.fun
    return theta, fun


def fit_4pl_robust(doses, responses, loss: str = "huber", delta: float | None = None):
    """Fit the four-parameter logistic by direct search over (a, d, log c, b).

    ``loss`` is ``"squared"`` or ``"huber"``. The Huber threshold defaults to
    1.345 times the normal-consistent MAD of a least-squares fit's residuals.
    Returns ``(FourPL, mse)`` with the plain MSE of the final curve.
    """
    x = _doses(np.ravel(doses))
    y = np.asarray(responses, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("doses and responses differ in length")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    if np.unique(x).size < 5:
        raise InsufficientDesign(f"need at least 5 distinct doses, got {np.unique(x).size}")
    if loss not in ("squared", "huber"):
        raise ValueError(f"loss must be 'squared' or 'huber', got {loss!r}")

    logx = np.log(x)
    y_scale = float(np.ptp(y)) or max(abs(float(y.mean())), 1.0)
    lo, hi = float(y.min()), float(y.max())
    qs = np.quantile(logx, [0.5, 0.25, 0.75])
    starts = [(lo, hi, qs[0], 1.0)]
    starts += [(lo, hi, q, b) for q in qs for b in (-1.0, 3.0, -3.0)]
    starts += [(lo, hi, q, 1.0) for q in qs[1:]]

    theta, _ = _fit_4pl(logx, y, lambda r: r * r, starts, y_scale)
    if loss == "huber":
        ls = FourPL(theta[0], theta[1], float(np.exp(theta[2])), theta[3])
        resid = y - ls(x)
        if delta is None:
            delta = HUBER_K * MAD_SCALE * float(np.median(np.abs(resid - np.median(resid))))
        if delta > 1e-12 * y_scale:
            theta, _ = _fit_4pl(logx, y, lambda r: _huber(r, delta), [tuple(theta)] + starts, y_scale)

    model = FourPL(float(theta[0]), float(theta[1]), float(np.exp(theta[2])), float(theta[3])).canonical()
    resid = y - model(x)
    return model, float(np.mean(resid * resid))


class FourPLRegressor(RegressorMixin, BaseEstimator):
    """Robust four-parameter logistic regression of responses on positive doses."""

    def __init__(self, loss="huber", delta=None):
        self.loss = loss
        self.delta = delta

    def fit(self, X, y):
        self.model_, self.mse_ = fit_4pl_robust(_column(X), y, self.loss, self.delta)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_(_column(X))


def read_dose_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``dose,response`` columns."""
    doses, responses = [], []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("dose", "response") if c not in header]
        if missing:
            raise DataFormatError(f"missing column(s) {', '.join(missing)}", 1)
        for rec in reader:
            row = reader.line_num
            try:
                dose, resp = float(rec["dose"]), float(rec["response"])
            except (TypeError, ValueError):
                raise DataFormatError(f"cannot parse dose/response {rec['dose']!r}, {rec['response']!r}", row) from None
            if not (np.isfinite(dose) and dose > 0):
                raise DataFormatError(f"dose must be positive, got {rec['dose']!r}", row)
            if not np.isfinite(resp):
                raise DataFormatError(f"response must be finite, got {rec['response']!r}", row)
            doses.append(dose)
            responses.append(resp)
    if not doses:
        raise DataFormatError("no data rows")
    return np.array(doses), np.array(responses)


DOSE_SMOOTHERS = (EstimatorSpec("tilted-ll", 4), EstimatorSpec("ll"), EstimatorSpec("io"))


def dose_response_compare(doses, responses, specs=DOSE_SMOOTHERS, *, loss: str = "huber",
                          optimizer: OptimizerConfig | None = None) -> list[ComparisonRow]:
    """Tilted LL, LL and IO on log10(dose) against the robust 4PL, ranked by MSE."""
    x = _doses(np.ravel(doses))
    y = np.asarray(responses, dtype=float).ravel()
    rows = compare_estimators(Sample(np.log10(x), y), specs, optimizer)
    try:
        model, mse = fit_4pl_robust(x, y, loss)
        reg = FourPLRegressor(loss)
        reg.model_, reg.mse_ = model, mse
        rows.append(ComparisonRow("4PL", mse, estimator=reg))
    except (TiltSmoothError, ValueError) as exc:
        rows.append(ComparisonRow("4PL", float("nan"), error=f"{type(exc).__name__}: {exc}"))
    return _rank(rows)
