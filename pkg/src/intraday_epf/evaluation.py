"""Rolling-window backtests and forecast statistics."""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import pandas as pd
from scipy.stats import norm

from .id_index import IndexPanel
from .market_data import ConfigError, DataError, Kind, ProductKey, fmt_hhmm, to_ordinal
from .models import ModelSpec, fit_predict
from .solver import LambdaGrid

log = logging.getLogger(__name__)

FORECAST_HEADER = ["model", "day", "slot_min", "kind", "forecast", "realized"]


@dataclass(frozen=True)
class BacktestConfig:
    window_days: int = 365
    start: str = ""
    end: str = ""
    models: tuple[str, ...] = ("Naive.DA", "Naive.MR1")
    kinds: tuple[str, ...] = ("H", "QH")
    slots: tuple[int, ...] | None = None
    workers: int = 1
    reduced: bool = False
    grid: tuple[float, ...] | None = None

    def validate(self) -> None:
        if self.window_days < 30:
            raise ConfigError("window_days must be at least 30")
        if not self.start or not self.end:
            raise ConfigError("backtest start and end are required")
        if to_ordinal(self.end) < to_ordinal(self.start):
            raise ConfigError("out-of-sample period is empty")
        if not self.models:
            raise ConfigError("no models requested")
        for m in self.models:
            try:
                ModelSpec.parse(m)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        for k in self.kinds:
            Kind.parse(k)
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    def days(self) -> range:
        return range(to_ordinal(self.start), to_ordinal(self.end) + 1)

    def products(self, day_ord: int) -> list[ProductKey]:
        out = []
        for k in self.kinds:
            kind = Kind.parse(k)
            slots = self.slots if self.slots is not None else range(0, 1440, kind.step_min)
            for s in slots:
                if s % kind.step_min == 0:
                    out.append(ProductKey(date.fromordinal(day_ord), int(s), kind))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BacktestConfig":
        data = dict(data)
        for key in ("models", "kinds", "slots", "grid"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad backtest config: {exc}") from None


@dataclass
class ForecastRecord:
    model: str
    day: str
    slot_min: int
    kind: str
    forecast: float
    realized: float
    tau_ms: int = 0
    calib_start: str = ""
    calib_end: str = ""
    selected_lambda: float | None = None
    nonzero: int | None = None
    n_features: int = 0
    audit_violations: int = 0
    failed: bool = False
    error: str = ""

    @property
    def err(self) -> float:
        return self.forecast - self.realized


@dataclass
class FitDiagnostic:
    model: str
    day: str
    slot_min: int
    kind: str
    fit: dict
    importance: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# backtest

_PANEL: IndexPanel | None = None


def _run_day(args):
    cfg, day_ord = args
    return _forecast_day(_PANEL, cfg, day_ord)


def _forecast_day(panel: IndexPanel, cfg: BacktestConfig, day_ord: int):
    records, diags = [], []
    grid = LambdaGrid(np.asarray(cfg.grid)) if cfg.grid else None
    c0 = date.fromordinal(day_ord - cfg.window_days).isoformat()
    c1 = date.fromordinal(day_ord - 1).isoformat()
    for name in cfg.models:
        spec = ModelSpec.parse(name)
        for product in cfg.products(day_ord):
            base = dict(model=spec.name, day=product.day.isoformat(), slot_min=product.slot,
                        kind=product.kind.value, calib_start=c0, calib_end=c1)
            try:
                out = fit_predict(spec, panel, product, cfg.window_days, reduced=cfg.reduced,
                                  grid=grid if spec.family == "FullInfo" else None,
                                  solver_opts={"keep_path": False})
            except (DataError, ValueError, FloatingPointError) as exc:
                records.append(ForecastRecord(forecast=np.nan, realized=np.nan, failed=True,
                                              error=f"{type(exc).__name__}: {exc}", **base))
                continue
            f = out.forecast
            records.append(ForecastRecord(
                forecast=f.value, realized=f.realized, tau_ms=f.tau_ms,
                selected_lambda=f.selected_lambda, nonzero=f.nonzero, n_features=f.n_features,
                audit_violations=f.audit_violations, **base))
            if out.fit is not None:
                iota = {}
                if spec.family != "ARX":
                    vec = coefficient_importance(out.fit.beta_std)
                    if vec is not None:
                        nz = np.flatnonzero(vec)
                        iota = {out.catalog.name(int(i)): float(vec[i]) for i in nz}
                diags.append(FitDiagnostic(spec.name, base["day"], product.slot,
                                           product.kind.value, out.fit.diagnostics(), iota,
                                           list(f.warnings)))
    return day_ord, records, diags


@dataclass
class BacktestResult:
    records: list[ForecastRecord]
    diagnostics: list[FitDiagnostic]

    @property
    def failures(self) -> list[ForecastRecord]:
        return [r for r in self.records if r.failed]

    def frame(self) -> pd.DataFrame:
        return records_frame(self.records)


def run_backtest(cfg: BacktestConfig, panel: IndexPanel,
                 on_day: Callable[[int, list, list], None] | None = None,
                 skip_days: Iterable[int] = ()) -> BacktestResult:
    """One forecast per (model, product, out-of-sample day) from the trailing window.

    Days are processed independently (optionally in a forked worker pool) and
    reduced in day order, so the output does not depend on scheduling.
    """
    cfg.validate()
    days = [d for d in cfg.days() if d not in set(skip_days)]
    needed = min(cfg.days()) - cfg.window_days - 15
    if needed < panel.day0 or max(cfg.days()) >= panel.day0 + panel.n_days:
        raise ConfigError("loaded data does not cover the backtest range, window and lag history")
    results = {}
    if cfg.workers > 1 and len(days) > 1:
        global _PANEL
        _PANEL = panel
        ctx = mp.get_context("fork")
        with ctx.Pool(cfg.workers) as pool:
            for day_ord, recs, diags in pool.imap_unordered(_run_day, [(cfg, d) for d in days]):
                results[day_ord] = (recs, diags)
                if on_day:
                    on_day(day_ord, recs, diags)
        _PANEL = None
    else:
        for d in days:
            day_ord, recs, diags = _forecast_day(panel, cfg, d)
            results[day_ord] = (recs, diags)
            if on_day:
                on_day(day_ord, recs, diags)
    records, diags = [], []
    for d in sorted(results):
        records.extend(results[d][0])
        diags.extend(results[d][1])
    return BacktestResult(records, diags)


def records_frame(records: Iterable[ForecastRecord]) -> pd.DataFrame:
    rows = [asdict(r) for r in records]
    cols = list(ForecastRecord.__dataclass_fields__)
    return pd.DataFrame(rows, columns=cols)


def write_forecasts(path: Path | str, records: Iterable[ForecastRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for r in records:
            if r.failed:
                continue
            w.writerow([r.model, r.day, r.slot_min, r.kind, repr(float(r.forecast)),
                        repr(float(r.realized))])


def read_forecasts(path: Path | str) -> list[ForecastRecord]:
    df = pd.read_csv(path, dtype={"model": str, "day": str, "kind": str})
    if list(df.columns[:6]) != FORECAST_HEADER:
        raise DataError(f"{path}: unexpected forecast header {list(df.columns)}")
    return [ForecastRecord(str(m), str(d), int(s), str(k), float(f), float(r))
            for m, d, s, k, f, r in df[FORECAST_HEADER].itertuples(index=False)]


# ---------------------------------------------------------------------------
# error statistics


@dataclass
class ErrorSummary:
    model: str
    kind: str
    mae: float
    rmse: float
    mae_sd: float
    rmse_sd: float
    per_product_mae: np.ndarray
    per_product_rmse: np.ndarray
    n_days: int
    excluded_days: int = 0


def error_matrix(records: Iterable[ForecastRecord], model: str, kind: str):
    """Errors [days, slots] over days where every product forecast succeeded.

    Returns (days, slots, E, excluded_day_count).
    """
    rows = [r for r in records if r.model == model and r.kind == kind]
    if not rows:
        raise DataError(f"no records for {model} / {kind}")
    df = pd.DataFrame({"day": [r.day for r in rows], "slot": [r.slot_min for r in rows],
                       "err": [r.err if not r.failed else np.nan for r in rows]})
    if df.duplicated(["day", "slot"]).any():
        raise DataError(f"duplicate records for {model} / {kind}")
    wide = df.pivot(index="day", columns="slot", values="err").sort_index()
    complete = wide.notna().all(axis=1)
    failed_days = df.groupby("day")["err"].apply(lambda e: e.isna().any())
    # a missing product without a failure flag means the run itself is broken
    gaps = (~complete) & ~failed_days.reindex(wide.index).fillna(False)
    if gaps.any():
        raise DataError(f"unequal per-product record counts for {model} / {kind}")
    wide = wide[complete]
    return list(wide.index), list(wide.columns), wide.to_numpy(), int((~complete).sum())


def bootstrap_sd(E: np.ndarray, B: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Bootstrap SDs of MAE and RMSE, resampling whole days with replacement."""
    n = E.shape[0]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(B, n))
    abs_day = np.abs(E).mean(axis=1)
    sq_day = (E ** 2).mean(axis=1)
    mae_b = abs_day[idx].mean(axis=1)
    rmse_b = np.sqrt(sq_day[idx].mean(axis=1))
    return float(mae_b.std(ddof=1)), float(rmse_b.std(ddof=1))


def summarize_errors(records, model: str, kind: str, B: int = 1000, seed: int = 0) -> ErrorSummary:
    days, slots, E, excluded = error_matrix(records, model, kind)
    if E.shape[0] == 0:
        raise DataError(f"no complete days for {model} / {kind}")
    mae_s = np.abs(E).mean(axis=0)
    rmse_s = np.sqrt((E ** 2).mean(axis=0))
    mae_sd, rmse_sd = bootstrap_sd(E, B, seed) if E.shape[0] > 1 else (0.0, 0.0)
    return ErrorSummary(model, kind, float(np.abs(E).mean()), float(np.sqrt((E ** 2).mean())),
                        mae_sd, rmse_sd, mae_s, rmse_s, len(days), excluded)


def summary_table(records, models: list[str], B: int = 1000, seed: int = 0) -> pd.DataFrame:
    """Models x {mae, rmse} x {H, QH} with bootstrap SDs and the 2-sigma flags.

    A flag marks values within two bootstrap SDs of the column's best model.
    """
    out = []
    kinds = sorted({r.kind for r in records}, key=lambda k: ("H", "QH").index(k))
    for m in models:
        row = {"model": m}
        for k in kinds:
            tag = k.lower()
            try:
                s = summarize_errors(records, m, k, B, seed)
            except DataError:
                continue
            row.update({f"mae_{tag}": s.mae, f"rmse_{tag}": s.rmse,
                        f"mae_{tag}_sd": s.mae_sd, f"rmse_{tag}_sd": s.rmse_sd,
                        f"excluded_days_{tag}": s.excluded_days})
        out.append(row)
    df = pd.DataFrame(out)
    for k in kinds:
        tag = k.lower()
        for metric in ("mae", "rmse"):
            col = f"{metric}_{tag}"
            if col not in df or df[col].isna().all():
                continue
            best = df[col].idxmin()
            limit = df.at[best, col] + 2.0 * df.at[best, f"{col}_sd"]
            df[f"{col}_within_2sd"] = df[col] <= limit
    return df


# ---------------------------------------------------------------------------
# Diebold-Mariano


@dataclass(frozen=True)
class DmResult:
    model_a: str
    model_b: str
    kind: str
    norm: int
    statistic: float
    p_forward: float
    p_reverse: float
    n_days: int
    degenerate: bool = False


def dm_statistic(delta: np.ndarray, hac_lags: int = 0) -> tuple[float, bool]:
    """mean(delta) * sqrt(N) / sd(delta); zero variance gives (0, True)."""
    d = np.asarray(delta, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least two loss differentials")
    mean = d.mean()
    var = d.var(ddof=1)
    if hac_lags > 0:
        c = d - mean
        for lag in range(1, min(hac_lags, n - 1) + 1):
            w = 1.0 - lag / (hac_lags + 1.0)
            var += 2.0 * w * float(c[lag:] @ c[:-lag]) / (n - 1)
    if not var > 0.0:
        return 0.0, True
    return float(mean * np.sqrt(n) / np.sqrt(var)), False


def dm_from_errors(EA: np.ndarray, EB: np.ndarray, norm_order: int = 1, hac_lags: int = 0):
    """Statistic and one-sided p-values from aligned error matrices [days, S].

    p_forward tests H0: E(delta) <= 0 with delta = ||e_A||_i - ||e_B||_i, so a
    small value says B's forecasts are significantly better than A's.
    p_reverse tests the mirrored hypothesis and equals 1 - p_forward.
    """
    if norm_order not in (1, 2):
        raise ValueError("norm must be 1 or 2")
    delta = (np.linalg.norm(EA, ord=norm_order, axis=1)
             - np.linalg.norm(EB, ord=norm_order, axis=1))
    stat, degenerate = dm_statistic(delta, hac_lags)
    if degenerate:
        return stat, 0.5, 0.5, True
    return stat, float(norm.sf(stat)), float(norm.cdf(stat)), False


def dm_test(records, model_a: str, model_b: str, kind: str, norm_order: int = 1,
            hac_lags: int = 0) -> DmResult:
    da, sa, EA, _ = error_matrix(records, model_a, kind)
    db, sb, EB, _ = error_matrix(records, model_b, kind)
    if sa != sb:
        raise DataError("models cover different product sets")
    common = sorted(set(da) & set(db))
    if len(common) < 2:
        raise DataError("fewer than two common days")
    ia = [da.index(d) for d in common]
    ib = [db.index(d) for d in common]
    stat, pf, pr, deg = dm_from_errors(EA[ia], EB[ib], norm_order, hac_lags)
    return DmResult(model_a, model_b, kind, norm_order, stat, pf, pr, len(common), deg)


def dm_matrix(records, models: list[str], kind: str, norm_order: int = 1,
              hac_lags: int = 0) -> pd.DataFrame:
    """Cell (row A, column B) is p_forward of dm(A, B): small when column B is better."""
    out = pd.DataFrame(np.nan, index=list(models), columns=list(models))
    for a in models:
        for b in models:
            if a != b:
                out.at[a, b] = dm_test(records, a, b, kind, norm_order, hac_lags).p_forward
    return out


# ---------------------------------------------------------------------------
# coefficient importance


def coefficient_importance(beta_std) -> np.ndarray | None:
    """|beta_i| / sum_j |beta_j|; None when every coefficient is zero."""
    b = np.abs(np.asarray(beta_std, dtype=float))
    total = b.sum()
    if total == 0.0:
        return None
    return b / total


@dataclass
class ImportanceTable:
    model: str
    kind: str
    slot_min: int
    mean: dict[str, float]
    n_fits: int
    skipped: int

    def top(self, k: int = 4) -> list[tuple[str, float]]:
        return sorted(self.mean.items(), key=lambda kv: (-kv[1], kv[0]))[:k]

    def format_top(self, k: int = 4) -> str:
        return ", ".join(f"{name} ({100 * v:.2f})" for name, v in self.top(k))


def importance(fits: Iterable[dict[str, float] | None], model: str, kind: str,
               slot_min: int) -> ImportanceTable:
    """Mean importance over the rolling window for one product.

    Each element maps regressor names to their importance in one fit; None
    marks a fit whose coefficients were all zero (skipped and counted).
    """
    sums: dict[str, float] = {}
    n = skipped = 0
    for fit in fits:
        if fit is None or not fit:
            skipped += 1
            continue
        n += 1
        for name, v in fit.items():
            sums[name] = sums.get(name, 0.0) + v
    mean = {k: v / n for k, v in sums.items()} if n else {}
    return ImportanceTable(model, kind, slot_min, mean, n, skipped)


def importance_tables(diags: Iterable[FitDiagnostic], model: str) -> list[ImportanceTable]:
    groups: dict[tuple[str, int], list] = {}
    for d in diags:
        if d.model == model:
            groups.setdefault((d.kind, d.slot_min), []).append(d.importance or None)
    return [importance(v, model, k, s) for (k, s), v in sorted(groups.items(),
                                                                  key=lambda kv: (kv[0][0] != "H", kv[0][1]))]


def importance_frame(tables: list[ImportanceTable], k: int = 4) -> pd.DataFrame:
    rows = []
    for t in tables:
        row = {"model": t.model, "kind": t.kind, "product": fmt_hhmm(t.slot_min),
               "n_fits": t.n_fits, "skipped": t.skipped}
        row.update({f"top{i}": "" for i in range(1, k + 1)})
        for i, (name, v) in enumerate(t.top(k), start=1):
            row[f"top{i}"] = f"{name} ({100 * v:.2f})"
        rows.append(row)
    cols = ["model", "kind", "product", "n_fits", "skipped"] + [f"top{i}" for i in range(1, k + 1)]
    return pd.DataFrame(rows, columns=cols)


# ---------------------------------------------------------------------------
# lag correlations


def pearson_columns(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pearson correlation of y with each column of X; NaN for constant columns."""
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    den = np.sqrt((yc @ yc) * (Xc ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (yc @ Xc) / den
    return np.where(den > 0, r, np.nan)


def lag_correlation_report(panel: IndexPanel, kind: Kind, slot_min: int, days: Iterable[int],
                           grid_kind: Kind | None = None, lags=(-1, 0, 1),
                           min_days: int = 60) -> pd.DataFrame:
    """Correlation of a product's realized ID3 with every 15-minute grid value
    of its neighbours, one row per (lag, slot, tile); tiles ending after the
    forecast time are flagged unavailable."""
    days = np.asarray(list(days), dtype=np.int64)
    if days.size < min_days:
        raise DataError(f"need at least {min_days} days of history, got {days.size}")
    grid_kind = grid_kind or kind
    cal = panel.calendar
    kp = panel.kinds[grid_kind]
    cube = kp.tile_values()[0]
    di = days - panel.day0
    if di.min() - max(lags) < 0 or di.max() - min(lags) >= panel.n_days:
        raise DataError("lag history outside loaded data")
    y = panel.id3(kind)[di, slot_min // kind.step_min]
    tau_rel = slot_min - 195
    open_min = (cal.trading_open_hourly_min if grid_kind is Kind.HOURLY
                else cal.trading_open_quarter_hourly_min)
    rows = []
    for j in lags:
        block = cube[di - j]                         # [days, S, T]
        open_rel = (-j - 1) * 1440 + open_min
        for k in range(kp.n_slots):
            n_t = int(kp.n_tiles_slot[k])
            vals = block[:, k, :n_t]
            ok_rows = np.all(np.isfinite(vals), axis=1)
            r = pearson_columns(y[ok_rows], vals[ok_rows]) if ok_rows.sum() >= 3 else np.full(n_t, np.nan)
            ends = open_rel + 15 * (np.arange(n_t) + 1)
            b_rel = -j * 1440 + k * grid_kind.step_min
            for t in range(n_t):
                rows.append((j, fmt_hhmm(k * grid_kind.step_min), int(ends[t]),
                             (b_rel - int(ends[t])) / 60.0, bool(ends[t] <= tau_rel),
                             float(r[t]) if np.isfinite(r[t]) else np.nan))
    return pd.DataFrame(rows, columns=["lag", "product", "tile_end_rel_min", "x_hours",
                                       "available", "corr"])


def own_tile_ranking(report: pd.DataFrame, slot_min: int) -> pd.DataFrame:
    """Available own-product tiles sorted by correlation (diagnostic helper)."""
    own = report[(report["lag"] == 0) & (report["product"] == fmt_hhmm(slot_min))
                 & report["available"]]
    return own.sort_values("corr", ascending=False)


__all__ = [
    "BacktestConfig", "BacktestResult", "DmResult", "ErrorSummary", "FitDiagnostic",
    "ForecastRecord", "ImportanceTable", "bootstrap_sd", "coefficient_importance", "dm_from_errors",
    "dm_matrix", "dm_statistic", "dm_test", "error_matrix", "importance", "importance_frame",
    "importance_tables", "lag_correlation_report", "own_tile_ranking", "pearson_columns",
    "read_forecasts", "records_frame", "run_backtest", "summarize_errors", "summary_table",
    "write_forecasts",
]
