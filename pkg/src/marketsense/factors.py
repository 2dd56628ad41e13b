"""
OLS factor regressions: Carhart four-factor and Fama-French five-factor.

Factor files follow the public research-library layout
(``Date,Mkt-RF,SMB,HML,RMW,CMA,RF[,Mom]``, percent values, ``YYYYMMDD`` dates).
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .analytics import TRADING_DAYS, ReturnSeries
from .errors import InsufficientOverlap, MissingFactor, PreconditionError, RankDeficient, TooFewRows

MODELS = {
    "carhart4": ("Mkt-RF", "SMB", "HML", "Mom"),
    "ff5": ("Mkt-RF", "SMB", "HML", "RMW", "CMA"),
}
MODEL_TITLES = {"carhart4": "Carhart 4-Factor", "ff5": "Fama-French 5-Factor"}
TABLE_ROWS = ("Mkt-RF", "SMB", "HML", "Mom", "RMW", "CMA")
MIN_OVERLAP = 30


# ---------------------------------------------------------------------------
# Student t tail probabilities via the regularized incomplete beta function


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_bt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def stars(p: float) -> str:
    if p is None or math.isnan(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


# ---------------------------------------------------------------------------


@dataclass
class OLSResult:
    params: np.ndarray
    standard_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    rss: float
    tss: float
    n_obs: int
    df_resid: int
    residuals: np.ndarray = field(repr=False)


def ols(y: Sequence[float], X: np.ndarray) -> OLSResult:
    """Ordinary least squares through a QR factorization.

    ``X`` must already carry an intercept column if one is wanted. Standard
    errors are the classical (homoskedastic) ones; p-values are two-sided.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise PreconditionError("X must be 2-D with one row per observation")
    n, k = X.shape
    if n <= k:
        raise TooFewRows(f"{n} rows for {k} regressors")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise RankDeficient("design matrix is not of full column rank")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    centred = y - y.mean()
    tss = float(centred @ centred)
    df = n - k
    sigma2 = rss / df
    r_inv = np.linalg.inv(R)
    se = np.sqrt(np.maximum(sigma2 * np.einsum("ij,ij->i", r_inv, r_inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, np.nan, np.sign(beta) * np.inf))
    p = np.array([t_two_sided_p(float(v), df) for v in t])
    if tss > 0:
        r2 = min(max(1.0 - rss / tss, 0.0), 1.0)
    else:
        r2 = 1.0 if rss <= 1e-30 else 0.0
    return OLSResult(beta, se, t, p, r2, rss, tss, n, df, resid)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorPanel:
    dates: tuple[dt.date, ...]
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise PreconditionError("factor dates must be strictly increasing")
        for name, col in self.columns.items():
            if len(col) != len(self.dates):
                raise PreconditionError(f"column {name} has the wrong length")

    def has(self, *names: str) -> bool:
        return all(n in self.columns for n in names)


def load_factor_csv(path: str | Path) -> FactorPanel:
    """Parse a factor file; values are converted from percent to decimals.

    Preamble lines before the ``Date`` header and trailing non-numeric lines
    (copyright footers) are skipped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(csv.reader(fh))
    start = next((i for i, row in enumerate(lines) if row and row[0].strip() == "Date"), None)
    if start is None:
        raise PreconditionError(f"{path}: no 'Date' header row")
    header = [h.strip() for h in lines[start]]
    dates: list[dt.date] = []
    cols: dict[str, list[float]] = {h: [] for h in header[1:] if h}
    for row in lines[start + 1:]:
        if not row or not row[0].strip().isdigit() or len(row[0].strip()) != 8:
            if dates:
                break
            continue
        dates.append(dt.datetime.strptime(row[0].strip(), "%Y%m%d").date())
        for name, val in zip(header[1:], row[1:]):
            if name:
                cols[name].append(float(val) / 100.0)
    return FactorPanel(tuple(dates), {k: np.array(v) for k, v in cols.items()})


@dataclass
class Aligned:
    dates: tuple[dt.date, ...]
    y: np.ndarray
    factors: dict[str, np.ndarray]


def align(
    strategy_returns: ReturnSeries,
    panel: FactorPanel,
    benchmark_returns: ReturnSeries | None = None,
) -> Aligned:
    """Inner-join strategy returns with the factor panel.

    The dependent variable is the strategy return minus RF, or minus the
    benchmark return when ``benchmark_returns`` is given.
    """
    if benchmark_returns is None and "RF" not in panel.columns:
        raise MissingFactor("panel has no RF column")
    pos = {d: i for i, d in enumerate(panel.dates)}
    bench = None if benchmark_returns is None else dict(zip(benchmark_returns.dates, benchmark_returns.values))
    keep, rows, ys = [], [], []
    for d, r in zip(strategy_returns.dates, strategy_returns.values):
        i = pos.get(d)
        if i is None or (bench is not None and d not in bench):
            continue
        keep.append(d)
        rows.append(i)
        ys.append(r - (bench[d] if bench is not None else panel.columns["RF"][i]))
    if len(keep) < MIN_OVERLAP:
        raise InsufficientOverlap(f"only {len(keep)} overlapping dates (need {MIN_OVERLAP})")
    idx = np.array(rows)
    return Aligned(tuple(keep), np.array(ys), {k: np.asarray(v)[idx] for k, v in panel.columns.items()})


@dataclass
class FactorModelResult:
    model: str
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    t_stats: dict[str, float]
    p_values: dict[str, float]
    stars: dict[str, str]
    alpha_daily: float
    alpha_annual: float
    alpha_p_value: float
    r_squared: float
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "coefficients": self.coefficients,
            "standard_errors": self.standard_errors,
            "t_stats": self.t_stats,
            "p_values": self.p_values,
            "stars": self.stars,
            "alpha_daily": self.alpha_daily,
            "alpha_annual": self.alpha_annual,
            "alpha_p_value": self.alpha_p_value,
            "r_squared": self.r_squared,
            "n_obs": self.n_obs,
        }


def fit_factor_model(model: str, data: Aligned) -> FactorModelResult:
    if model not in MODELS:
        raise PreconditionError(f"unknown model {model!r}")
    names = MODELS[model]
    missing = [n for n in names if n not in data.factors]
    if missing:
        raise MissingFactor(f"{model} needs columns {missing}")
    X = np.column_stack([np.ones(len(data.y))] + [data.factors[n] for n in names])
    res = ols(data.y, X)

    def pick(arr):
        return {n: float(arr[i + 1]) for i, n in enumerate(names)}

    p = pick(res.p_values)
    return FactorModelResult(
        model=model,
        coefficients=pick(res.params),
        standard_errors=pick(res.standard_errors),
        t_stats=pick(res.t_stats),
        p_values=p,
        stars={n: stars(v) for n, v in p.items()},
        alpha_daily=float(res.params[0]),
        alpha_annual=float(res.params[0] * TRADING_DAYS),
        alpha_p_value=float(res.p_values[0]),
        r_squared=res.r_squared,
        n_obs=res.n_obs,
    )


@dataclass
class FactorModels:
    results: dict[str, FactorModelResult]
    errors: dict[str, str]

    @property
    def carhart4(self) -> FactorModelResult | None:
        return self.results.get("carhart4")

    @property
    def ff5(self) -> FactorModelResult | None:
        return self.results.get("ff5")

    def to_dict(self) -> dict:
        return {"results": {k: v.to_dict() for k, v in self.results.items()}, "errors": self.errors}


def run_factor_models(
    strategy_returns: ReturnSeries,
    panel: FactorPanel,
    benchmark_returns: ReturnSeries | None = None,
) -> FactorModels:
    """Fit both models; a model whose factor columns are missing is reported in ``errors``."""
    data = align(strategy_returns, panel, benchmark_returns)
    results, errors = {}, {}
    for model in MODELS:
        try:
            results[model] = fit_factor_model(model, data)
        except MissingFactor as exc:
            errors[model] = str(exc)
    if not results:
        raise MissingFactor("; ".join(errors.values()))
    return FactorModels(results, errors)


def format_factor_table(models: FactorModels) -> str:
    """Render a plain-text table with one column per model and ``--`` for excluded factors."""
    order = [m for m in MODELS]
    header = ["Factor"] + [MODEL_TITLES[m] for m in order]
    rows = [header]
    for name in TABLE_ROWS:
        label = "Mkt-RF (beta)" if name == "Mkt-RF" else name
        row = [label]
        for m in order:
            res = models.results.get(m)
            if res is None:
                row.append("n/a")
            elif name not in res.coefficients:
                row.append("--")
            else:
                row.append(f"{res.coefficients[name]:.3f}{res.stars[name]}")
        rows.append(row)
    rows.append(["R^2"] + [f"{models.results[m].r_squared:.3f}" if m in models.results else "n/a" for m in order])
    rows.append(
        ["Alpha (ann. %)"]
        + [
            f"{100 * models.results[m].alpha_annual:.2f}{stars(models.results[m].alpha_p_value)}" if m in models.results else "n/a"
            for m in order
        ]
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    lines.append("Note: ***p < 0.01, **p < 0.05, *p < 0.1. Dashes (--) indicate factor not included in model.")
    return "\n".join(lines) + "\n"
