"""Group-level summaries of fitted parameters and slope comparisons.

The per-trial store is a :class:`ParameterTable`: one row per
(subject, activity, muscle, weight, trial, family) holding the fitted
parameters and log-likelihood. Laplacian statistics of the LGM fits
(``sigma1`` as sigma_L, ``lambda1`` as lambda_L) are aggregated into
:class:`TrendSeries` per group and weight; BB and FCU fits of the same trial
are paired into the combined L-power root ``rho_L`` and the ratio ``gamma_L``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, DegenerateDataError, DomainError, EmptyResultError
from .recording import EXPERIENCE_ORDER, METADATA_KEYS, Experience, TrialMetadata

PARAM_COLUMNS = ("lambda1", "lambda2", "mu1", "sigma1", "mu2", "sigma2", "mu", "sigma", "scale", "nu")
TABLE_COLUMNS = METADATA_KEYS + ("family", "n", "loglik") + PARAM_COLUMNS
ROW_KEY = ("subject_id", "activity", "muscle", "weight_kg", "trial_index", "family")
PAIR_KEY = ("subject_id", "experience", "activity", "weight_kg", "trial_index")


class PairingWarning(UserWarning):
    pass


class InsufficientDataError(DataError):
    pass


class DivisionError(DomainError, ZeroDivisionError):
    pass


def fmt_number(x):
    """12 significant digits: stable text for determinism checks."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


class ParameterTable:
    """Per-trial fitted parameters joined with trial metadata."""

    def __init__(self, rows=()):
        self._rows = []
        self._keys = {}
        for row in rows:
            self.add_row(row)

    def add_row(self, row):
        row = dict(row)
        key = tuple(row[k] for k in ROW_KEY)
        if key in self._keys:
            # later fits of the same trial replace earlier ones
            self._rows[self._keys[key]] = row
        else:
            self._keys[key] = len(self._rows)
            self._rows.append(row)

    def add_fit(self, metadata: TrialMetadata, fit):
        row = metadata.to_dict()
        row.update(family=fit.family.value, n=fit.n, loglik=fit.loglik)
        row.update(fit.params.to_dict())
        self.add_row(row)

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        return iter(self._rows)

    @property
    def rows(self):
        return list(self._rows)

    def column(self, name):
        return [row.get(name) for row in self._rows]

    def select(self, **criteria):
        def keep(row):
            return all(row.get(k) == (v.value if hasattr(v, "value") else v) for k, v in criteria.items())

        return ParameterTable(r for r in self._rows if keep(r))

    def sorted_rows(self):
        def key(row):
            return tuple(_sort_token(k, row.get(k)) for k in ROW_KEY)

        return sorted(self._rows, key=key)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in self.sorted_rows():
            writer.writerow([row.get(c) if isinstance(row.get(c), str) else fmt_number(row.get(c)) for c in TABLE_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        table = cls()
        for raw in csv.DictReader(io.StringIO(text)):
            row = {}
            for col, value in raw.items():
                if value in ("", None):
                    continue
                if col in ("subject_id", "trial_index", "n"):
                    row[col] = int(value)
                elif col in ("experience", "activity", "muscle", "family"):
                    row[col] = value
                else:
                    row[col] = float(value)
            table.add_row(row)
        return table


def _sort_token(key, value):
    if key == "experience" and value in {e.value for e in Experience}:
        return (0, EXPERIENCE_ORDER[Experience(value)], "")
    if isinstance(value, (int, float)):
        return (1, float(value), "")
    return (2, 0.0, str(value))


@dataclass(frozen=True)
class TrendPoint:
    weight_kg: float
    mean: float
    stderr: float
    n: int


@dataclass(frozen=True)
class TrendSeries:
    group: str
    points: tuple
    keys: dict = field(default_factory=dict)

    @property
    def weights(self):
        return np.array([p.weight_kg for p in self.points])

    @property
    def means(self):
        return np.array([p.mean for p in self.points])


def group_label(keys):
    return ";".join(f"{k}={v}" for k, v in keys.items()) or "all"


def aggregate(table, value, group_by=("experience",), family=None):
    """Mean and standard error of ``value`` per (group, weight) cell.

    ``value`` is a column name or a callable on a row; rows where it is
    missing are skipped. Cells with a single row report ``stderr = 0`` and
    ``n = 1``. Series come back ordered by group (experience in training order)
    with points sorted by weight.
    """
    rows = list(table)
    if family is not None:
        fam = getattr(family, "value", family)
        rows = [r for r in rows if r.get("family") == fam]
    getter = value if callable(value) else (lambda r: r.get(value))
    cells = {}
    for row in rows:
        v = getter(row)
        if v is None or not math.isfinite(float(v)):
            continue
        gkey = tuple(row.get(k) for k in group_by)
        cells.setdefault(gkey, {}).setdefault(float(row["weight_kg"]), []).append(float(v))
    if not cells:
        raise EmptyResultError(f"no rows carry a value for {getattr(value, '__name__', value)!r}")

    out = []
    for gkey in sorted(cells, key=lambda g: tuple(_sort_token(k, v) for k, v in zip(group_by, g))):
        points = []
        for w in sorted(cells[gkey]):
            vals = np.asarray(cells[gkey][w])
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            points.append(TrendPoint(w, float(vals.mean()), se, int(vals.size)))
        keys = dict(zip(group_by, gkey))
        out.append(TrendSeries(group_label(keys), tuple(points), keys))
    return out


def trends_to_csv(series_list):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "weight_kg", "mean", "stderr", "n"])
    for s in series_list:
        for p in s.points:
            writer.writerow([s.group, fmt_number(p.weight_kg), fmt_number(p.mean), fmt_number(p.stderr), p.n])
    return buf.getvalue()


def rho_L(sigma_bb, sigma_fcu):
    """Root of the summed Laplacian variances of the two muscle sites."""
    if sigma_bb < 0 or sigma_fcu < 0:
        raise DomainError("standard deviations must be non-negative")
    return math.sqrt(sigma_bb * sigma_bb + sigma_fcu * sigma_fcu)


def gamma_L(sigma_bb, sigma_fcu):
    if sigma_fcu == 0:
        raise DivisionError("sigma_fcu is zero")
    if sigma_fcu < 0 or sigma_bb < 0:
        raise DomainError("standard deviations must be non-negative")
    return sigma_bb / sigma_fcu


def pair_muscles(table, family="LGM", value="sigma1"):
    """Pair BB and FCU rows of the same trial and derive ``rho_L``/``gamma_L``.

    Returns ``(rows, unpaired)``; unpaired trials are dropped with a warning.
    """
    fam = getattr(family, "value", family)
    by_key = {}
    for row in table:
        if row.get("family") != fam or row.get(value) is None:
            continue
        by_key.setdefault(tuple(row[k] for k in PAIR_KEY), {})[row["muscle"]] = float(row[value])
    derived, unpaired = [], []
    for key in sorted(by_key, key=lambda k: tuple(_sort_token(n, v) for n, v in zip(PAIR_KEY, k))):
        sites = by_key[key]
        meta = dict(zip(PAIR_KEY, key))
        if "BB" not in sites or "FCU" not in sites:
            unpaired.append(dict(meta, present=",".join(sorted(sites))))
            continue
        bb, fcu = sites["BB"], sites["FCU"]
        derived.append(dict(meta, sigma_bb=bb, sigma_fcu=fcu, rho_L=rho_L(bb, fcu), gamma_L=gamma_L(bb, fcu)))
    if unpaired:
        warnings.warn(f"{len(unpaired)} trial(s) lack a BB/FCU partner and were dropped", PairingWarning, stacklevel=2)
    return derived, unpaired


@dataclass(frozen=True)
class SlopeTestResult:
    f_stat: float
    p_value: float
    same_slope: bool
    df1: int
    df2: int
    slope_a: float
    slope_b: float

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _centered(series):
    x, y = series.weights, series.means
    if np.unique(x).size < 3:
        raise InsufficientDataError(f"series {series.group!r} has fewer than 3 distinct weights")
    return x - x.mean(), y - y.mean()


def slope_f_test(series_a: TrendSeries, series_b: TrendSeries, alpha=0.05):
    """Extra-sum-of-squares F-test for equal regression slopes.

    Compares separate lines per series (4 parameters) against lines sharing a
    common slope (3 parameters); ``same_slope`` means the p-value is >= alpha.
    """
    xa, ya = _centered(series_a)
    xb, yb = _centered(series_b)
    sxx_a, sxx_b = float(xa @ xa), float(xb @ xb)
    sxy_a, sxy_b = float(xa @ ya), float(xb @ yb)
    slope_a, slope_b = sxy_a / sxx_a, sxy_b / sxx_b
    rss_sep = float(np.sum((ya - slope_a * xa) ** 2) + np.sum((yb - slope_b * xb) ** 2))
    common = (sxy_a + sxy_b) / (sxx_a + sxx_b)
    rss_pool = float(np.sum((ya - common * xa) ** 2) + np.sum((yb - common * xb) ** 2))
    total = float(ya @ ya + yb @ yb)
    if rss_sep <= 1e-14 * max(total, np.finfo(float).tiny):
        raise DegenerateDataError("zero residual variance in the separate-slope model")
    df2 = xa.size + xb.size - 4
    f_stat = max(rss_pool - rss_sep, 0.0) / (rss_sep / df2)
    p = float(stats.f.sf(f_stat, 1, df2))
    return SlopeTestResult(f_stat, p, bool(p >= alpha), 1, df2, slope_a, slope_b)


def analyze_table(table: ParameterTable, alpha=0.05):
    """Trend tables and slope tests for the Laplacian statistics of LGM fits.

    Returns ``(trends, f_tests, unpaired)`` where ``trends`` maps a statistic
    name to its list of series.
    """
    if len(table) == 0:
        raise EmptyResultError("parameter table is empty")
    lgm = [r for r in table if r.get("family") == "LGM"]
    if not lgm:
        raise EmptyResultError("parameter table holds no LGM fits")
    trends = {
        "sigma_L": aggregate(lgm, "sigma1", ("activity", "muscle", "experience")),
        "lambda_L": aggregate(lgm, "lambda1", ("activity", "muscle", "experience")),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PairingWarning)
        derived, unpaired = pair_muscles(lgm)
    if derived:
        trends["rho_L"] = aggregate(derived, "rho_L", ("activity", "experience"))
        trends["gamma_L"] = aggregate(derived, "gamma_L", ("activity", "experience"))

    f_tests = []
    for stat, series_list in trends.items():
        if stat == "lambda_L":
            continue
        strata = {}
        for s in series_list:
            stratum = tuple((k, v) for k, v in s.keys.items() if k != "experience")
            strata.setdefault(stratum, []).append(s)
        for stratum, members in strata.items():
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    a, b = members[i], members[j]
                    entry = {
                        "statistic": stat,
                        "stratum": group_label(dict(stratum)),
                        "group_a": a.keys.get("experience"),
                        "group_b": b.keys.get("experience"),
                    }
                    try:
                        res = slope_f_test(a, b, alpha)
                    except DataError as exc:
                        entry.update(status="skipped", reason=str(exc))
                    else:
                        entry.update(status="ok", **res.to_dict())
                    f_tests.append(entry)
    return trends, f_tests, unpaired
