"""Command-line front end: synth, ingest-check, backtest, report, dm, importance, lagcorr.

Every run is driven by one JSON config file; flags only override paths and
verbosity. Exit codes: 0 success, 1 configuration error, 2 data error,
3 partial failures present.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import pandas as pd

from . import solver
from .evaluation import (
    BacktestConfig, FitDiagnostic, ForecastRecord, dm_matrix, importance_frame,
    importance_tables, lag_correlation_report, read_forecasts, run_backtest, summary_table,
    write_forecasts,
)
from .id_index import ID3_WINDOW, MR1_WINDOW, MR2_WINDOW, IndexPanel, write_index_csv
from .market_data import (
    ConfigError, DataError, Kind, MarketCalendar, SynthConfig, descriptive_stats,
    generate_synthetic_market, load_market, to_ordinal, write_market,
)
from .models import MODEL_NAMES, ModelSpec

log = logging.getLogger("intraday_epf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    output_dir: str = "run"
    data_dir: str | None = None
    synth: dict | None = None
    calendar: dict = field(default_factory=dict)
    backtest: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.market_calendar()
        if self.synth is not None and "synth" not in self.seeds and "seed" not in self.synth:
            raise ConfigError("a synth seed is mandatory (seeds.synth)")
        for m in self.backtest.get("models", []):
            try:
                ModelSpec.parse(m)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def market_calendar(self) -> MarketCalendar:
        try:
            return MarketCalendar.from_dict(self.calendar)
        except TypeError as exc:
            raise ConfigError(f"bad calendar: {exc}") from None

    def synth_config(self) -> SynthConfig:
        data = dict(self.synth or {})
        if "synth" in self.seeds:
            data["seed"] = int(self.seeds["synth"])
        try:
            cfg = SynthConfig.from_dict(data)
            cfg.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth config: {exc}") from None
        return cfg

    def backtest_config(self) -> BacktestConfig:
        cfg = BacktestConfig.from_dict(self.backtest)
        cfg.validate()
        return cfg

    def bootstrap_seed(self) -> int:
        return int(self.seeds.get("bootstrap", 0))

    def out(self) -> Path:
        return Path(self.output_dir)

    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out() / "data"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pandas", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _defaults(cfg: RunConfig) -> dict:
    """Every convention the run relies on, for the manifest."""
    return {
        "calendar": cfg.market_calendar().to_dict(),
        "solver_tolerance": solver.DEFAULT_TOL,
        "max_sweeps_per_lambda": "10 * p",
        "saturation_dev_ratio": solver.SATURATION_DEV_RATIO,
        "bic_df_cap_ratio": solver.MAX_DF_RATIO,
        "bic_df_rule": solver.FitResult.__dataclass_fields__["df_rule"].default,
        "bic_rss_floor": 1e-12,
        "lambda_grid_fi": "2^i, i = linspace(4, -10, 100)",
        "lambda_grid_lasso_ar": "10^(-(19 - i) / 6), i = 10..1",
        "elastic_net_alpha": 0.5,
        "bootstrap_replications": int(cfg.report.get("bootstrap_reps", 1000)),
        "dm_variance": "sample variance" if not cfg.report.get("hac_lags") else
                       f"Newey-West, {cfg.report['hac_lags']} lags",
        "forecast_lead_min": 195,
    }


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _load_panel(cfg: RunConfig):
    cal = cfg.market_calendar()
    store, auctions, balancing = load_market(cfg.data_path(), cal)
    return store, auctions, balancing, IndexPanel(store, auctions, balancing)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    sc = cfg.synth_config()
    window = int(cfg.backtest.get("window_days", 0) or 0)
    if window and sc.n_days < window + 16:
        raise ConfigError(f"synthetic range of {sc.n_days} days is shorter than the "
                          f"calibration window plus lag history ({window + 16} days)")
    cal = cfg.market_calendar()
    store, auctions, balancing = generate_synthetic_market(sc, calendar=cal)
    out = cfg.data_path()
    hashes = write_market(out, store, auctions, balancing)
    manifest = {"seed": sc.seed, "synth": sc.to_dict(), "calendar": cal.to_dict(),
                "files": hashes, "generator_mode": "martingale intraday path"
                if sc.intraday_phi == 1.0 else f"AR(1) intraday path, phi={sc.intraday_phi}"}
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(store)} trades to {out}")
    return EXIT_OK


def cmd_ingest_check(cfg: RunConfig, args) -> int:
    store, auctions, balancing = load_market(cfg.data_path(), cfg.market_calendar())
    stats = descriptive_stats(store)
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    stats.to_csv(out / "descriptive_stats.csv", index=False)
    panel = IndexPanel(store, auctions, balancing)
    for kind in Kind:
        write_index_csv(out / f"indices_{kind.value}.csv", panel, kind,
                        (ID3_WINDOW, MR1_WINDOW, MR2_WINDOW))
    print(f"{len(store)} trades over {len(store.days())} delivery days; digest {store.digest()[:16]}")
    print(stats.to_string(index=False))
    return EXIT_OK


def _checkpoint_path(out: Path, day_ord: int) -> Path:
    from datetime import date
    return out / "checkpoints" / f"day-{date.fromordinal(day_ord).isoformat()}.json"


def cmd_backtest(cfg: RunConfig, args) -> int:
    bt = cfg.backtest_config()
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    key = hashlib.sha256(json.dumps(asdict(bt), sort_keys=True).encode()
                         + json.dumps(cfg.calendar, sort_keys=True).encode()).hexdigest()
    done: dict[int, tuple[list, list]] = {}
    for d in bt.days():
        p = _checkpoint_path(out, d)
        if p.exists():
            blob = json.loads(p.read_text(encoding="utf-8"))
            if blob.get("key") == key:
                done[d] = ([ForecastRecord(**r) for r in blob["records"]],
                           [FitDiagnostic(**x) for x in blob["diagnostics"]])
    if done:
        log.info("resuming: %d of %d days already checkpointed", len(done), len(bt.days()))

    def save(day_ord, recs, diags):
        _write_json(_checkpoint_path(out, day_ord), {
            "key": key, "records": [asdict(r) for r in recs],
            "diagnostics": [asdict(x) for x in diags]})

    if len(done) < len(bt.days()):
        _, _, _, panel = _load_panel(cfg)
        result = run_backtest(bt, panel, on_day=save, skip_days=done)
        fresh = {}
        for r in result.records:
            fresh.setdefault(to_ordinal(r.day), ([], []))[0].append(r)
        for x in result.diagnostics:
            fresh.setdefault(to_ordinal(x.day), ([], []))[1].append(x)
        done.update(fresh)
    records, diags = [], []
    for d in sorted(done):
        records.extend(done[d][0])
        diags.extend(done[d][1])
    write_forecasts(out / "forecasts.csv", records)
    with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as fh:
        for x in diags:
            fh.write(json.dumps(asdict(x), sort_keys=True) + "\n")
    failures = [r for r in records if r.failed]
    pd.DataFrame([asdict(r) for r in failures],
                 columns=list(ForecastRecord.__dataclass_fields__)).to_csv(
        out / "failures.csv", index=False)
    violations = sum(r.audit_violations for r in records)
    _write_json(out / "backtest_manifest.json", {
        "config_hash": cfg.digest(), "backtest": asdict(bt), "records": len(records),
        "failures": len(failures), "audit_violations": violations,
        "defaults": _defaults(cfg), "versions": _versions()})
    print(f"{len(records)} records, {len(failures)} failures, {violations} audit violations")
    return EXIT_PARTIAL if failures else EXIT_OK


def _records(cfg: RunConfig) -> list[ForecastRecord]:
    path = cfg.out() / "forecasts.csv"
    if not path.exists():
        raise DataError(f"missing forecasts file {path}; run backtest first")
    return read_forecasts(path)


def _models_in(records) -> list[str]:
    seen = {r.model for r in records}
    return [m for m in MODEL_NAMES if m in seen]


def _write_dm(cfg: RunConfig, records) -> list[Path]:
    wanted = cfg.report.get("dm_models") or _models_in(records)
    hac = int(cfg.report.get("hac_lags", 0))
    paths = []
    for kind in sorted({r.kind for r in records}):
        models = [m for m in wanted if any(r.model == m and r.kind == kind for r in records)]
        if len(models) < 2:
            continue
        for norm_order in (1, 2):
            mat = dm_matrix(records, models, kind, norm_order, hac)
            p = cfg.out() / f"dm_{kind}_norm{norm_order}.csv"
            mat.to_csv(p, index_label="model")
            paths.append(p)
    return paths


def _read_diagnostics(cfg: RunConfig) -> list[FitDiagnostic]:
    path = cfg.out() / "diagnostics.jsonl"
    if not path.exists():
        raise DataError(f"missing diagnostics file {path}; run backtest first")
    with open(path, encoding="utf-8") as fh:
        return [FitDiagnostic(**json.loads(line)) for line in fh if line.strip()]


def _write_importance(cfg: RunConfig, records) -> list[Path]:
    requested = cfg.report.get("importance_models") or _models_in(records)
    k = int(cfg.report.get("top_k", 4))
    diags = None
    paths = []
    for m in requested:
        spec = ModelSpec.parse(m)
        if spec.is_naive or spec.family == "ARX":
            print(f"importance skipped for {m}: no penalized coefficients")
            continue
        if diags is None:
            diags = _read_diagnostics(cfg)
        tables = importance_tables(diags, m)
        if not tables:
            continue
        p = cfg.out() / f"importance_{m}.csv"
        importance_frame(tables, k).to_csv(p, index=False)
        paths.append(p)
    return paths


def _write_lagcorr(cfg: RunConfig) -> Path | None:
    spec = cfg.report.get("lagcorr")
    if not spec:
        return None
    _, _, _, panel = _load_panel(cfg)
    kind = Kind.parse(spec.get("kind", "H"))
    slot = int(spec.get("slot_min", 1200))
    n = int(spec.get("days", 60))
    last = panel.day0 + panel.n_days - 2
    days = range(last - n + 1, last + 1)
    grid_kind = Kind.parse(spec["grid_kind"]) if spec.get("grid_kind") else None
    rep = lag_correlation_report(panel, kind, slot, days, grid_kind=grid_kind)
    p = cfg.out() / "lagcorr.csv"
    rep.to_csv(p, index=False)
    return p


def _report_manifest(cfg: RunConfig, paths: list[Path]) -> None:
    files = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}
    _write_json(cfg.out() / "report_manifest.json", {
        "config_hash": cfg.digest(), "seeds": {"bootstrap": cfg.bootstrap_seed(),
                                              **cfg.seeds},
        "defaults": _defaults(cfg), "versions": _versions(), "files": files})


def cmd_report(cfg: RunConfig, args) -> int:
    records = _records(cfg)
    models = _models_in(records)
    B = int(cfg.report.get("bootstrap_reps", 1000))
    summary = summary_table(records, models, B, cfg.bootstrap_seed())
    p = cfg.out() / "summary.csv"
    summary.to_csv(p, index=False)
    paths = [p] + _write_dm(cfg, records) + _write_importance(cfg, records)
    lc = _write_lagcorr(cfg)
    if lc is not None:
        paths.append(lc)
    _report_manifest(cfg, paths)
    print(summary.to_string(index=False))
    return EXIT_OK


def cmd_dm(cfg: RunConfig, args) -> int:
    paths = _write_dm(cfg, _records(cfg))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_importance(cfg: RunConfig, args) -> int:
    for p in _write_importance(cfg, _records(cfg)):
        print(p)
    return EXIT_OK


def cmd_lagcorr(cfg: RunConfig, args) -> int:
    p = _write_lagcorr(cfg)
    if p is None:
        raise ConfigError("report.lagcorr is not configured")
    print(p)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "ingest-check": cmd_ingest_check, "backtest": cmd_backtest,
    "report": cmd_report, "dm": cmd_dm, "importance": cmd_importance, "lagcorr": cmd_lagcorr,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intraday-epf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--data-dir", help="override data_dir")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.data_dir:
            cfg.data_dir = args.data_dir
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
