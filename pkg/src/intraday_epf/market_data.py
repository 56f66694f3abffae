"""Market datasets, calendar and information clock.

All absolute times are integer milliseconds since 1970-01-01 00:00 UTC on an
idealized calendar (every day has 24 hourly / 96 quarter-hourly products).
Days are carried internally as proleptic Gregorian ordinals
(``date.toordinal()``).  Prices are stored as integer ticks of 0.01 EUR/MWh
and volumes as integer ticks of 0.001 MWh so that ingestion and export
round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

MS_PER_MIN = 60_000
MS_PER_DAY = 86_400_000
EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

PRICE_TICKS = 100     # ticks per EUR/MWh
VOLUME_TICKS = 1000   # ticks per MWh


class DataError(Exception):
    """Raised for malformed or inconsistent market data."""


class ConfigError(Exception):
    """Raised for inconsistent configuration."""


class Kind(str, Enum):
    HOURLY = "H"
    QUARTER_HOURLY = "QH"

    @property
    def step_min(self) -> int:
        return 60 if self is Kind.HOURLY else 15

    @property
    def n_slots(self) -> int:
        return 24 if self is Kind.HOURLY else 96

    @classmethod
    def parse(cls, text: str) -> "Kind":
        key = text.strip().lower()
        if key in ("h", "hourly"):
            return cls.HOURLY
        if key in ("qh", "quarterhourly", "quarter-hourly", "quarter_hourly"):
            return cls.QUARTER_HOURLY
        raise ValueError(f"unknown product kind {text!r}")


def day_ms(day_ord: int) -> int:
    """Absolute ms of midnight of the given day ordinal."""
    return (int(day_ord) - EPOCH_ORDINAL) * MS_PER_DAY


def to_ordinal(day: date | int | str) -> int:
    if isinstance(day, int):
        return day
    if isinstance(day, str):
        day = date.fromisoformat(day)
    return day.toordinal()


def fmt_hhmm(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


@dataclass(frozen=True, order=True)
class ProductKey:
    day: date
    slot: int
    kind: Kind

    def __post_init__(self):
        step = self.kind.step_min
        if not (0 <= self.slot < 1440) or self.slot % step:
            raise ValueError(f"slot {self.slot} invalid for {self.kind.value} products")

    @property
    def ordinal(self) -> int:
        return self.day.toordinal()

    @property
    def slot_index(self) -> int:
        return self.slot // self.kind.step_min

    def __str__(self) -> str:
        return f"{self.kind.value} {self.day.isoformat()} {fmt_hhmm(self.slot)}"


@dataclass(frozen=True)
class MarketCalendar:
    """Idealized delivery calendar and publication conventions.

    ``trading_open_*`` are clock minutes on day d-1 at which trading of day-d
    products starts; ``*_publication_min`` are clock minutes on day d-1 at which
    the day-d auction results become known.  The publication defaults are
    assumptions (the exchange latencies are not public) and are recorded in run
    manifests.
    """

    trading_open_hourly_min: int = 15 * 60
    trading_open_quarter_hourly_min: int = 16 * 60
    gate_closure_min: int = 30
    da_publication_min: int = 13 * 60
    ia_publication_min: int = 15 * 60 + 10
    bv_publication_lag_min: int = 15
    dst_fix: bool = False

    def delivery_start(self, day_ord: int, slot_min: int) -> int:
        return day_ms(day_ord) + int(slot_min) * MS_PER_MIN

    def trading_open(self, kind: Kind, day_ord: int) -> int:
        minutes = (self.trading_open_hourly_min if kind is Kind.HOURLY
                   else self.trading_open_quarter_hourly_min)
        return day_ms(day_ord - 1) + minutes * MS_PER_MIN

    def gate_closure(self, day_ord: int, slot_min: int) -> int:
        return self.delivery_start(day_ord, slot_min) - self.gate_closure_min * MS_PER_MIN

    def forecast_time(self, day_ord: int, slot_min: int) -> int:
        """tau = delivery start - 3h15m."""
        return self.delivery_start(day_ord, slot_min) - 195 * MS_PER_MIN

    def auction_publication(self, market: str, day_ord: int) -> int:
        minutes = self.da_publication_min if market == "DA" else self.ia_publication_min
        return day_ms(day_ord - 1) + minutes * MS_PER_MIN

    def bv_publication(self, day_ord: int, slot_min: int) -> int:
        return self.delivery_start(day_ord, slot_min) + (15 + self.bv_publication_lag_min) * MS_PER_MIN

    def validate(self) -> None:
        for kind in Kind:
            # earliest product of day d must open before its own gate closure
            open_rel = self.trading_open(kind, 1) - day_ms(1)
            if open_rel >= -self.gate_closure_min * MS_PER_MIN:
                raise ConfigError(f"trading opens after gate closure for {kind.value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "MarketCalendar":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown calendar fields: {sorted(unknown)}")
        cal = cls(**data)
        cal.validate()
        return cal


@dataclass(frozen=True)
class InformationClock:
    """Forecast time tau; a datum is visible iff published at or before ``now``."""

    now: int

    def sees(self, publication_ms) -> np.ndarray | bool:
        return np.asarray(publication_ms) <= self.now

    @classmethod
    def for_product(cls, calendar: MarketCalendar, product: ProductKey) -> "InformationClock":
        return cls(calendar.forecast_time(product.ordinal, product.slot))


# ---------------------------------------------------------------------------
# decimal <-> tick conversion


_DECIMAL_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")


def _parse_ticks(values: pd.Series, scale: int, column: str, row_offset: int = 2) -> np.ndarray:
    """Exact decimal-string → integer ticks; raises DataError naming the row."""
    digits = len(str(scale)) - 1
    s = values.astype(str).str.strip()
    ok = s.str.match(_DECIMAL_RE)
    if not ok.all():
        bad = int(np.flatnonzero(~ok.to_numpy())[0])
        raise DataError(f"row {bad + row_offset}: malformed {column} {values.iloc[bad]!r}")
    neg = s.str.startswith("-").to_numpy()
    s = s.str.lstrip("+-")
    parts = s.str.split(".", n=1, expand=True)
    ints = parts[0]
    fracs = parts[1].fillna("") if parts.shape[1] > 1 else pd.Series([""] * len(s), index=s.index)
    too_fine = fracs.str.rstrip("0").str.len() > digits
    if too_fine.any():
        bad = int(np.flatnonzero(too_fine.to_numpy())[0])
        raise DataError(f"row {bad + row_offset}: {column} {values.iloc[bad]!r} finer than 1/{scale}")
    fracs = fracs.str.slice(0, digits).str.ljust(digits, "0")
    out = ints.astype(np.int64).to_numpy() * scale + fracs.astype(np.int64).to_numpy()
    return np.where(neg, -out, out)


def format_ticks(ticks: int, scale: int) -> str:
    digits = len(str(scale)) - 1
    t = int(ticks)
    sign = "-" if t < 0 else ""
    q, r = divmod(abs(t), scale)
    return f"{sign}{q}.{r:0{digits}d}"


def _format_ticks_array(ticks: np.ndarray, scale: int) -> list[str]:
    return [format_ticks(t, scale) for t in ticks.tolist()]


def _parse_int_column(values: pd.Series, column: str) -> np.ndarray:
    s = values.astype(str).str.strip()
    ok = s.str.match(r"^\d+$")
    if not ok.all():
        bad = int(np.flatnonzero(~ok.to_numpy())[0])
        raise DataError(f"row {bad + 2}: malformed {column} {values.iloc[bad]!r}")
    return s.astype(np.int64).to_numpy()


def _parse_days(values: pd.Series, column: str) -> np.ndarray:
    try:
        parsed = pd.to_datetime(values, format="%Y-%m-%d", errors="raise")
    except (ValueError, TypeError) as exc:
        bad = pd.to_datetime(values, format="%Y-%m-%d", errors="coerce").isna().to_numpy()
        row = int(np.flatnonzero(bad)[0]) + 2 if bad.any() else "?"
        raise DataError(f"row {row}: malformed {column}") from exc
    return (parsed.to_numpy().astype("datetime64[D]").astype(np.int64) + EPOCH_ORDINAL)


def _read_csv(path: Path, header: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if list(df.columns) != header:
        raise DataError(f"{path.name}: header {list(df.columns)} != {header}")
    return df


def format_timestamp(ms: int) -> str:
    dt = datetime(1970, 1, 1) + timedelta(milliseconds=int(ms))
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{int(ms) % 1000:03d}Z"


# ---------------------------------------------------------------------------
# trades


TRADES_HEADER = ["delivery_day", "delivery_slot_min", "kind", "exec_time_utc",
                 "price_eur_mwh", "volume_mwh"]
AUCTIONS_HEADER = ["day", "slot_min", "market", "price_eur_mwh"]
BALANCING_HEADER = ["day", "slot_min", "imbalance_mwh"]


@dataclass(frozen=True)
class Trade:
    product: ProductKey
    timestamp: int
    price: float
    volume: float
    excluded: bool = False


@dataclass(frozen=True, eq=False)
class TradeArrays:
    """Column arrays for one product kind, sorted by (day, slot, timestamp)."""

    day: np.ndarray
    slot: np.ndarray
    ts: np.ndarray
    price: np.ndarray
    volume: np.ndarray
    excluded: np.ndarray
    keys: np.ndarray = field(repr=False)     # unique product keys, sorted
    starts: np.ndarray = field(repr=False)   # offsets into the arrays, len(keys)+1

    @classmethod
    def build(cls, day, slot, ts, price, volume, excluded) -> "TradeArrays":
        day = np.asarray(day, dtype=np.int64)
        slot = np.asarray(slot, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.int64)
        order = np.lexsort((ts, slot, day))
        day, slot, ts = day[order], slot[order], ts[order]
        price = np.asarray(price, dtype=np.int64)[order]
        volume = np.asarray(volume, dtype=np.int64)[order]
        excluded = np.asarray(excluded, dtype=bool)[order]
        code = day * 1440 + slot
        keys, first = np.unique(code, return_index=True)
        starts = np.append(first, len(code)).astype(np.int64)
        for arr in (day, slot, ts, price, volume, excluded, keys, starts):
            arr.setflags(write=False)
        return cls(day, slot, ts, price, volume, excluded, keys, starts)

    @classmethod
    def empty(cls) -> "TradeArrays":
        z = np.zeros(0, dtype=np.int64)
        return cls.build(z, z, z, z, z, np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.ts)

    def span(self, day_ord: int, slot: int) -> tuple[int, int]:
        code = day_ord * 1440 + slot
        i = np.searchsorted(self.keys, code)
        if i < len(self.keys) and self.keys[i] == code:
            return int(self.starts[i]), int(self.starts[i + 1])
        return 0, 0

    def take(self, mask: np.ndarray) -> "TradeArrays":
        return TradeArrays.build(self.day[mask], self.slot[mask], self.ts[mask],
                                 self.price[mask], self.volume[mask], self.excluded[mask])


class TradeStore:
    """Immutable intraday-continuous trade store indexed by product."""

    def __init__(self, arrays: dict[Kind, TradeArrays], calendar: MarketCalendar,
                 day_range: tuple[int, int] | None = None):
        self.calendar = calendar
        self._arrays = {k: arrays.get(k, TradeArrays.empty()) for k in Kind}
        if day_range is None:
            days = np.concatenate([a.day for a in self._arrays.values()])
            day_range = (int(days.min()), int(days.max())) if len(days) else (0, -1)
        self.day_range = day_range

    def arrays(self, kind: Kind) -> TradeArrays:
        return self._arrays[kind]

    def __len__(self) -> int:
        return sum(len(a) for a in self._arrays.values())

    def trades(self, product: ProductKey) -> list[Trade]:
        a = self._arrays[product.kind]
        lo, hi = a.span(product.ordinal, product.slot)
        return [Trade(product, int(a.ts[i]), a.price[i] / PRICE_TICKS,
                      a.volume[i] / VOLUME_TICKS, bool(a.excluded[i])) for i in range(lo, hi)]

    def product_arrays(self, product: ProductKey, include_excluded: bool = False):
        """(ts, price_ticks, volume_ticks) for a product, sorted by time."""
        a = self._arrays[product.kind]
        lo, hi = a.span(product.ordinal, product.slot)
        sl = slice(lo, hi)
        if include_excluded:
            return a.ts[sl], a.price[sl], a.volume[sl]
        keep = ~a.excluded[sl]
        return a.ts[sl][keep], a.price[sl][keep], a.volume[sl][keep]

    def count(self, product: ProductKey) -> int:
        lo, hi = self._arrays[product.kind].span(product.ordinal, product.slot)
        return hi - lo

    def days(self) -> range:
        return range(self.day_range[0], self.day_range[1] + 1)

    def digest(self) -> str:
        h = hashlib.sha256()
        for kind in Kind:
            a = self._arrays[kind]
            for arr in (a.day, a.slot, a.ts, a.price, a.volume, a.excluded.astype(np.int8)):
                h.update(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    def to_csv(self, path: Path) -> None:
        rows = []
        for kind in Kind:
            a = self._arrays[kind]
            if not len(a):
                continue
            days = (a.day - EPOCH_ORDINAL).astype("datetime64[D]").astype(str)
            rows.append(pd.DataFrame({
                "delivery_day": days,
                "delivery_slot_min": a.slot,
                "kind": kind.value,
                "exec_time_utc": [format_timestamp(t) for t in a.ts.tolist()],
                "price_eur_mwh": _format_ticks_array(a.price, PRICE_TICKS),
                "volume_mwh": _format_ticks_array(a.volume, VOLUME_TICKS),
            }))
        df = pd.concat(rows) if rows else pd.DataFrame(columns=TRADES_HEADER)
        df.to_csv(path, index=False, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)


def ingest_trades(path: Path | str, calendar: MarketCalendar) -> TradeStore:
    """Read ``trades.csv``; validates schema, volume and the trading window.

    Trades in the control-zone-only window [b - gate closure, b) are kept but
    flagged and never enter index computations.
    """
    df = _read_csv(Path(path), TRADES_HEADER)
    n = len(df)
    if n == 0:
        return TradeStore({}, calendar)
    days = _parse_days(df["delivery_day"], "delivery_day")
    slots = _parse_int_column(df["delivery_slot_min"], "delivery_slot_min")
    try:
        kinds = df["kind"].map(lambda s: Kind.parse(s).value)
    except ValueError as exc:
        bad = next(i for i, s in enumerate(df["kind"]) if not _is_kind(s))
        raise DataError(f"row {bad + 2}: {exc}") from exc
    stamps = pd.to_datetime(df["exec_time_utc"].str.rstrip("Z"), format="ISO8601", errors="coerce")
    if stamps.isna().any():
        bad = int(np.flatnonzero(stamps.isna().to_numpy())[0])
        raise DataError(f"row {bad + 2}: malformed exec_time_utc {df['exec_time_utc'].iloc[bad]!r}")
    if getattr(stamps.dt, "tz", None) is not None:
        stamps = stamps.dt.tz_convert(None)
    ts = stamps.to_numpy().astype("datetime64[ms]").astype(np.int64)
    price = _parse_ticks(df["price_eur_mwh"], PRICE_TICKS, "price_eur_mwh")
    volume = _parse_ticks(df["volume_mwh"], VOLUME_TICKS, "volume_mwh")

    nonpos = volume <= 0
    if nonpos.any():
        bad = int(np.flatnonzero(nonpos)[0])
        raise DataError(f"row {bad + 2}: nonpositive volume {df['volume_mwh'].iloc[bad]!r}")

    kinds = kinds.to_numpy()
    arrays = {}
    for kind in Kind:
        sel = kinds == kind.value
        if not sel.any():
            continue
        idx = np.flatnonzero(sel)
        step = kind.step_min
        bad_slot = (slots[idx] % step != 0) | (slots[idx] >= 1440)
        if bad_slot.any():
            raise DataError(f"row {idx[np.argmax(bad_slot)] + 2}: slot invalid for {kind.value}")
        open_rel = (calendar.trading_open_hourly_min if kind is Kind.HOURLY
                    else calendar.trading_open_quarter_hourly_min) - 1440
        start = (days[idx] - EPOCH_ORDINAL) * MS_PER_DAY
        opening = start + open_rel * MS_PER_MIN
        delivery = start + slots[idx] * MS_PER_MIN
        outside = (ts[idx] < opening) | (ts[idx] >= delivery)
        if outside.any():
            row = idx[np.argmax(outside)] + 2
            raise DataError(f"row {row}: trade outside [trading open, delivery start)")
        excluded = ts[idx] >= delivery - calendar.gate_closure_min * MS_PER_MIN
        arrays[kind] = TradeArrays.build(days[idx], slots[idx], ts[idx], price[idx],
                                         volume[idx], excluded)
    store = TradeStore(arrays, calendar)
    logger.info("ingested %d trades from %s", len(store), path)
    return store


def _is_kind(text: str) -> bool:
    try:
        Kind.parse(text)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# slot series (auctions, balancing)


@dataclass(frozen=True, eq=False)
class SlotSeries:
    """Dense (day, slot) grid of tick values with a presence mask."""

    day0: int
    step_min: int
    ticks: np.ndarray      # int64 [ndays, n_slots]
    present: np.ndarray    # bool  [ndays, n_slots]
    scale: int

    @property
    def n_days(self) -> int:
        return self.ticks.shape[0]

    @property
    def last_day(self) -> int:
        return self.day0 + self.n_days - 1

    def values(self) -> np.ndarray:
        out = self.ticks / self.scale
        out[~self.present] = np.nan
        return out

    def value(self, day_ord: int, slot_min: int) -> float | None:
        i = day_ord - self.day0
        j, r = divmod(slot_min, self.step_min)
        if r or not (0 <= i < self.n_days) or not (0 <= j < self.ticks.shape[1]):
            return None
        if not self.present[i, j]:
            return None
        return self.ticks[i, j] / self.scale

    def masked(self, keep: np.ndarray) -> "SlotSeries":
        return replace(self, present=self.present & keep)

    def is_complete(self) -> bool:
        return bool(self.present.all())

    def rows(self) -> Iterator[tuple[int, int, int]]:
        for i, j in zip(*np.nonzero(self.present)):
            yield self.day0 + int(i), int(j) * self.step_min, int(self.ticks[i, j])

    @classmethod
    def from_entries(cls, days, slots, ticks, step_min: int, scale: int,
                     day_range: tuple[int, int] | None = None,
                     dst_fix: bool = False, what: str = "series") -> "SlotSeries":
        days = np.asarray(days, dtype=np.int64)
        slots = np.asarray(slots, dtype=np.int64)
        ticks = np.asarray(ticks, dtype=np.int64)
        n_slots = 1440 // step_min
        if day_range is None:
            day_range = (int(days.min()), int(days.max())) if len(days) else (0, -1)
        day0, day1 = day_range
        nd = day1 - day0 + 1
        grid = np.zeros((max(nd, 0), n_slots), dtype=np.int64)
        present = np.zeros_like(grid, dtype=bool)
        if len(days):
            if (slots % step_min).any() or (slots >= 1440).any() or (slots < 0).any():
                bad = int(np.flatnonzero((slots % step_min != 0) | (slots >= 1440))[0])
                raise DataError(f"{what}: invalid slot {slots[bad]} (row {bad + 2})")
            i = days - day0
            j = slots // step_min
            inside = (i >= 0) & (i < nd)
            flat = i[inside] * n_slots + j[inside]
            uniq, first, counts = np.unique(flat, return_index=True, return_counts=True)
            if (counts > 1).any() and not dst_fix:
                raise DataError(f"{what}: duplicate (day, slot) entries")
            # dst_fix: keep the first of a duplicated slot (drop the extra hour)
            src = np.flatnonzero(inside)[first]
            grid.ravel()[uniq] = ticks[src]
            present.ravel()[uniq] = True
        if dst_fix and nd > 0 and present.any() and not present.all():
            _impute_linear(grid, present)
        grid.setflags(write=False)
        present.setflags(write=False)
        return cls(day0, step_min, grid, present, scale)


def _impute_linear(grid: np.ndarray, present: np.ndarray) -> None:
    """Linear interpolation of missing slots along the flattened time axis."""
    flat_g = grid.ravel()
    flat_p = present.ravel()
    idx = np.arange(flat_g.size)
    filled = np.interp(idx, idx[flat_p], flat_g[flat_p].astype(float))
    flat_g[~flat_p] = np.rint(filled[~flat_p]).astype(np.int64)
    flat_p[:] = True


@dataclass(frozen=True, eq=False)
class AuctionSeries:
    da: SlotSeries
    ia: SlotSeries
    calendar: MarketCalendar

    def value(self, market: str, day_ord: int, slot_min: int) -> float | None:
        series = self.da if market == "DA" else self.ia
        return series.value(day_ord, slot_min)

    def fallback(self, product: ProductKey) -> float | None:
        """IA for quarter-hourly products, DA for hourly ones."""
        market = "DA" if product.kind is Kind.HOURLY else "IA"
        return self.value(market, product.ordinal, product.slot)

    def publication_grid(self, market: str) -> np.ndarray:
        series = self.da if market == "DA" else self.ia
        pub = np.array([self.calendar.auction_publication(market, series.day0 + i)
                        for i in range(series.n_days)], dtype=np.int64)
        return np.broadcast_to(pub[:, None], series.ticks.shape)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AUCTIONS_HEADER)
            for market, series in (("DA", self.da), ("IA", self.ia)):
                for d, slot, t in series.rows():
                    w.writerow([date.fromordinal(d).isoformat(), slot, market,
                                format_ticks(t, PRICE_TICKS)])


@dataclass(frozen=True, eq=False)
class BalancingSeries:
    bv: SlotSeries
    calendar: MarketCalendar

    def value(self, day_ord: int, slot_min: int) -> float | None:
        return self.bv.value(day_ord, slot_min)

    def publication_grid(self) -> np.ndarray:
        s = self.bv
        days = np.arange(s.n_days)[:, None] + s.day0
        slots = np.arange(s.ticks.shape[1])[None, :] * s.step_min
        return ((days - EPOCH_ORDINAL) * MS_PER_DAY + slots * MS_PER_MIN
                + (15 + self.calendar.bv_publication_lag_min) * MS_PER_MIN)

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BALANCING_HEADER)
            for d, slot, t in self.bv.rows():
                w.writerow([date.fromordinal(d).isoformat(), slot, format_ticks(t, VOLUME_TICKS)])


def ingest_auctions(path: Path | str, calendar: MarketCalendar,
                    day_range: tuple[int, int] | None = None) -> AuctionSeries:
    df = _read_csv(Path(path), AUCTIONS_HEADER)
    days = _parse_days(df["day"], "day") if len(df) else np.zeros(0, np.int64)
    slots = _parse_int_column(df["slot_min"], "slot_min") if len(df) else days
    prices = _parse_ticks(df["price_eur_mwh"], PRICE_TICKS, "price_eur_mwh") if len(df) else days
    market = df["market"].str.strip().to_numpy()
    bad = ~np.isin(market, ["DA", "IA"])
    if bad.any():
        raise DataError(f"row {int(np.flatnonzero(bad)[0]) + 2}: market must be DA or IA")
    if day_range is None and len(days):
        day_range = (int(days.min()), int(days.max()))
    out = {}
    for m, step in (("DA", 60), ("IA", 15)):
        sel = market == m
        out[m] = SlotSeries.from_entries(days[sel], slots[sel], prices[sel], step, PRICE_TICKS,
                                         day_range, calendar.dst_fix, what=f"auctions {m}")
        if not out[m].is_complete():
            raise DataError(f"auctions {m}: gaps in the configured date range")
    return AuctionSeries(out["DA"], out["IA"], calendar)


def ingest_balancing(path: Path | str, calendar: MarketCalendar,
                     day_range: tuple[int, int] | None = None) -> BalancingSeries:
    df = _read_csv(Path(path), BALANCING_HEADER)
    days = _parse_days(df["day"], "day") if len(df) else np.zeros(0, np.int64)
    slots = _parse_int_column(df["slot_min"], "slot_min") if len(df) else days
    vals = _parse_ticks(df["imbalance_mwh"], VOLUME_TICKS, "imbalance_mwh") if len(df) else days
    series = SlotSeries.from_entries(days, slots, vals, 15, VOLUME_TICKS, day_range,
                                     calendar.dst_fix, what="balancing")
    if not series.is_complete():
        raise DataError("balancing: gaps in the configured date range")
    return BalancingSeries(series, calendar)


# ---------------------------------------------------------------------------
# visibility


def visible_slice(series, clock: InformationClock):
    """Restrict any dataset to what is published at or before ``clock.now``.

    Trades are visible iff executed strictly before tau; auction results iff
    their publication time on day d-1 is <= tau; balancing volumes iff
    delivery end + publication lag <= tau.
    """
    if isinstance(series, TradeStore):
        arrays = {k: series.arrays(k).take(series.arrays(k).ts < clock.now) for k in Kind}
        return TradeStore(arrays, series.calendar, series.day_range)
    if isinstance(series, AuctionSeries):
        da = series.da.masked(series.publication_grid("DA") <= clock.now)
        ia = series.ia.masked(series.publication_grid("IA") <= clock.now)
        return AuctionSeries(da, ia, series.calendar)
    if isinstance(series, BalancingSeries):
        return BalancingSeries(series.bv.masked(series.publication_grid() <= clock.now),
                               series.calendar)
    raise TypeError(f"cannot slice {type(series).__name__}")


# ---------------------------------------------------------------------------
# descriptive statistics


def descriptive_stats(store: TradeStore) -> pd.DataFrame:
    """Min/quartiles/median/mean/max of trade counts and volumes per product.

    Products with no trades at all count as zeros (the day range and the
    product calendar define the population).  Control-zone trades are included,
    as they are real transactions.
    """
    if len(store) == 0:
        raise DataError("empty trade store")
    rows = []
    d0, d1 = store.day_range
    nd = d1 - d0 + 1
    for kind in Kind:
        a = store.arrays(kind)
        if not len(a):
            continue
        flat = (a.day - d0) * kind.n_slots + a.slot // kind.step_min
        counts = np.bincount(flat, minlength=nd * kind.n_slots)
        volumes = np.bincount(flat, weights=a.volume / VOLUME_TICKS, minlength=nd * kind.n_slots)
        for measure, values in (("count", counts), ("volume_mwh", volumes)):
            q = np.percentile(values, [0, 25, 50, 75, 100])
            rows.append({"kind": kind.value, "measure": measure, "min": q[0], "q1": q[1],
                         "median": q[2], "mean": float(np.mean(values)), "q3": q[3], "max": q[4],
                         "n_products": int(values.size)})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# synthetic market


@dataclass
class SynthConfig:
    """Synthetic market generator settings (JSON-serializable).

    The intraday price of each product follows a latent path that starts at
    the product's auction-level price when trading opens and evolves as an
    AR(1) in 15-minute steps (``intraday_phi``; 1.0 gives a martingale, which is
    the weak-form-efficient mode where the transformed ID3 is the most recent
    tile plus noise).  Trade prices are the latent level plus jitter.
    """

    start: str = "2016-01-01"
    n_days: int = 120
    seed: int = 0
    window_days: int = 0
    oos_days: int = 0
    # mean trades per product and delivery day
    hourly_mean_count: float = 472.19
    qh_mean_count: float = 129.72
    hourly_dispersion: float = 3.9
    qh_dispersion: float = 3.1
    hourly_id3_mass: float = 0.75
    qh_id3_mass: float = 0.85
    control_zone_fraction: float = 0.03
    hourly_mean_volume: float = 8.0
    qh_mean_volume: float = 1.0
    # seasonal base (EUR/MWh)
    level: float = 35.0
    daily_amplitude: float = 12.0
    weekend_drop: float = 8.0
    qh_jigsaw: float = 4.0
    # day-level noise
    ar_phi: float = 0.7
    ar_sd: float = 4.0
    common_sd: float = 3.0
    auction_sd: float = 1.5
    # intraday path
    intraday_phi: float = 1.0
    walk_sd: float = 1.2          # per sqrt(hour)
    trade_jitter_sd: float = 0.6
    spike_prob: float = 0.01
    spike_scale: float = 25.0
    balancing_sd: float = 400.0
    balancing_phi: float = 0.8

    def validate(self) -> None:
        if self.n_days <= 0:
            raise ConfigError("n_days must be positive")
        if self.window_days + self.oos_days > self.n_days:
            raise ConfigError("calibration window plus out-of-sample days exceed the date range")
        for name in ("hourly_id3_mass", "qh_id3_mass"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1)")
        if not 0.0 <= self.control_zone_fraction < 1.0:
            raise ConfigError("control_zone_fraction must be in [0, 1)")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ConfigError("spike_prob must be in [0, 1]")

    @property
    def start_ordinal(self) -> int:
        return date.fromisoformat(self.start).toordinal()

    @property
    def day_range(self) -> tuple[int, int]:
        return self.start_ordinal, self.start_ordinal + self.n_days - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth config fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: Path | str) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def seasonal_base(cfg: SynthConfig, kind: Kind, day_ords: np.ndarray) -> np.ndarray:
    """Deterministic day/week seasonal price per (day, slot)."""
    day_ords = np.asarray(day_ords)
    hours = np.arange(kind.n_slots) * kind.step_min / 60.0
    profile = (0.6 * np.exp(-0.5 * ((hours - 8.5) / 1.8) ** 2)
               + 1.0 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
               - 0.5 * np.exp(-0.5 * ((hours - 3.5) / 2.0) ** 2))
    weekday = (day_ords - 1) % 7          # ordinal 1 (0001-01-01) is a Monday
    week = np.where(weekday == 5, -0.6, np.where(weekday == 6, -1.0, 0.0)) * cfg.weekend_drop
    base = cfg.level + cfg.daily_amplitude * profile[None, :] + week[:, None]
    if kind is Kind.QUARTER_HOURLY:
        jig = np.tile(np.array([1.0, 1 / 3, -1 / 3, -1.0]), 24) * cfg.qh_jigsaw
        base = base + jig[None, :]
    return base


def _solve_decay(mass: float, length_h: float, lo: float = 0.5, hi: float = 3.0) -> float:
    """Rate k of a truncated exponential on [0.5, L] putting ``mass`` into [lo, hi)."""
    def share(k):
        if abs(k) < 1e-12:
            return (hi - lo) / (length_h - lo)
        return np.expm1(-k * (hi - lo)) / np.expm1(-k * (length_h - lo))
    uniform = (hi - lo) / (length_h - lo)
    if mass <= uniform:
        return 0.0
    return brentq(lambda k: share(k) - mass, 1e-9, 50.0)


def _time_to_delivery(rng, n: int, rate: float, length_h: float, cz_frac: float,
                      gate_h: float) -> np.ndarray:
    """Sample hours-before-delivery; control-zone trades uniform on (0, gate)."""
    u = rng.random(n)
    in_cz = rng.random(n) < cz_frac
    span = length_h - gate_h
    if rate == 0.0:
        h = gate_h + u * span
    else:
        h = gate_h - np.log1p(-u * (-np.expm1(-rate * span))) / rate
    cz = rng.random(n) * gate_h
    h = np.where(in_cz, cz, h)
    return np.clip(h, 1e-6, length_h)


def generate_synthetic_market(config: SynthConfig, seed: int | None = None,
                              calendar: MarketCalendar | None = None):
    """Deterministic synthetic (TradeStore, AuctionSeries, BalancingSeries)."""
    config.validate()
    calendar = calendar or MarketCalendar()
    seed = config.seed if seed is None else seed
    root = np.random.SeedSequence(seed)
    s_day, s_h, s_qh, s_bv = root.spawn(4)
    d0, d1 = config.day_range
    n_days = config.n_days
    day_ords = np.arange(d0, d1 + 1)

    # day-level fundamentals: hourly AR(1) per product + common daily shock
    rng = np.random.default_rng(s_day)
    common = np.zeros(n_days)
    ar_h = np.zeros((n_days, 24))
    c_prev, a_prev = 0.0, np.zeros(24)
    for i in range(n_days):
        c_prev = config.ar_phi * c_prev + config.common_sd * rng.standard_normal()
        a_prev = config.ar_phi * a_prev + config.ar_sd * rng.standard_normal(24)
        common[i], ar_h[i] = c_prev, a_prev
    fund_h = seasonal_base(config, Kind.HOURLY, day_ords) + ar_h + common[:, None]
    qh_extra = config.ar_sd * 0.3 * rng.standard_normal((n_days, 96))
    fund_qh = (seasonal_base(config, Kind.QUARTER_HOURLY, day_ords) + np.repeat(ar_h, 4, axis=1)
               + common[:, None] + qh_extra)
    da = fund_h + config.auction_sd * rng.standard_normal((n_days, 24))
    ia = fund_qh + config.auction_sd * rng.standard_normal((n_days, 96))
    da_ticks = np.rint(da * PRICE_TICKS).astype(np.int64)
    ia_ticks = np.rint(ia * PRICE_TICKS).astype(np.int64)
    present = np.ones_like(da_ticks, dtype=bool)
    auctions = AuctionSeries(
        SlotSeries(d0, 60, da_ticks, present, PRICE_TICKS),
        SlotSeries(d0, 15, ia_ticks, np.ones_like(ia_ticks, dtype=bool), PRICE_TICKS),
        calendar)

    arrays = {}
    for kind, seq, start_ticks in ((Kind.HOURLY, s_h, da_ticks), (Kind.QUARTER_HOURLY, s_qh, ia_ticks)):
        arrays[kind] = _generate_trades(config, calendar, kind, np.random.default_rng(seq),
                                        day_ords, start_ticks / PRICE_TICKS)

    rng = np.random.default_rng(s_bv)
    eps = rng.standard_normal(n_days * 96) * config.balancing_sd * np.sqrt(1 - config.balancing_phi ** 2)
    bv = lfilter([1.0], [1.0, -config.balancing_phi], eps)
    bv_ticks = np.rint(bv.reshape(n_days, 96) * VOLUME_TICKS).astype(np.int64)
    balancing = BalancingSeries(SlotSeries(d0, 15, bv_ticks, np.ones_like(bv_ticks, dtype=bool),
                                           VOLUME_TICKS), calendar)
    store = TradeStore(arrays, calendar, (d0, d1))
    return store, auctions, balancing


def _generate_trades(cfg: SynthConfig, cal: MarketCalendar, kind: Kind, rng,
                     day_ords: np.ndarray, start_level: np.ndarray) -> TradeArrays:
    S = kind.n_slots
    step = kind.step_min
    hourly = kind is Kind.HOURLY
    mean = cfg.hourly_mean_count if hourly else cfg.qh_mean_count
    disp = cfg.hourly_dispersion if hourly else cfg.qh_dispersion
    mass = cfg.hourly_id3_mass if hourly else cfg.qh_id3_mass
    vol_mean = cfg.hourly_mean_volume if hourly else cfg.qh_mean_volume
    open_min = (cal.trading_open_hourly_min if hourly else cal.trading_open_quarter_hourly_min) - 1440
    gate_h = cal.gate_closure_min / 60.0
    lengths = (np.arange(S) * step - open_min) / 60.0          # session length in hours
    # the mass target applies to trades outside the control zone
    target = min(mass / (1.0 - cfg.control_zone_fraction), 0.999)
    rates = np.array([_solve_decay(target, L) for L in lengths])

    out = {k: [] for k in ("day", "slot", "ts", "price", "volume")}
    tile_ms = 15 * MS_PER_MIN
    for i, d in enumerate(day_ords):
        counts = rng.negative_binomial(disp, disp / (disp + mean), size=S)
        for s in range(S):
            n = int(counts[s])
            if n == 0:
                continue
            L = lengths[s]
            h = _time_to_delivery(rng, n, rates[s], L, cfg.control_zone_fraction, gate_h)
            b = day_ms(d) + s * step * MS_PER_MIN
            ts = np.sort(b - np.rint(h * 3_600_000).astype(np.int64))
            opening = b - int(round(L * 3_600_000))
            ts = np.clip(ts, opening, b - 1)
            # latent AR(1) path on the 15-minute tile grid of the session
            n_tiles = int(np.ceil((b - opening) / tile_ms)) + 1
            shocks = rng.standard_normal(n_tiles) * cfg.walk_sd * 0.5
            if cfg.spike_prob > 0 and rng.random() < cfg.spike_prob:
                at = rng.integers(0, n_tiles)
                shocks[at] += rng.laplace(0.0, cfg.spike_scale)
            dev = lfilter([1.0], [1.0, -cfg.intraday_phi], shocks)
            tile = (ts - opening) // tile_ms
            price = start_level[i, s] + dev[tile] + cfg.trade_jitter_sd * rng.standard_normal(n)
            vol = np.maximum(np.rint(rng.gamma(1.5, vol_mean / 1.5, size=n) * 10), 1) * 100
            out["day"].append(np.full(n, d))
            out["slot"].append(np.full(n, s * step))
            out["ts"].append(ts)
            out["price"].append(np.rint(price * PRICE_TICKS).astype(np.int64))
            out["volume"].append(vol.astype(np.int64))
    if not out["ts"]:
        return TradeArrays.empty()
    cat = {k: np.concatenate(v) for k, v in out.items()}
    slot_ms = cat["slot"] * MS_PER_MIN + (cat["day"] - EPOCH_ORDINAL) * MS_PER_DAY
    excluded = cat["ts"] >= slot_ms - cal.gate_closure_min * MS_PER_MIN
    return TradeArrays.build(cat["day"], cat["slot"], cat["ts"], cat["price"], cat["volume"], excluded)


def write_market(out_dir: Path | str, store: TradeStore, auctions: AuctionSeries,
                 balancing: BalancingSeries) -> dict[str, str]:
    """Write the three CSVs; returns file → sha256 map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"trades.csv": out_dir / "trades.csv", "auctions.csv": out_dir / "auctions.csv",
             "balancing.csv": out_dir / "balancing.csv"}
    store.to_csv(paths["trades.csv"])
    auctions.to_csv(paths["auctions.csv"])
    balancing.to_csv(paths["balancing.csv"])
    return {name: hashlib.sha256(p.read_bytes()).hexdigest() for name, p in paths.items()}


def load_market(data_dir: Path | str, calendar: MarketCalendar):
    """Ingest trades/auctions/balancing CSVs from one directory."""
    data_dir = Path(data_dir)
    store = ingest_trades(data_dir / "trades.csv", calendar)
    auctions = ingest_auctions(data_dir / "auctions.csv", calendar)
    day_range = (auctions.da.day0, auctions.da.last_day)
    balancing = ingest_balancing(data_dir / "balancing.csv", calendar, day_range)
    store = TradeStore({k: store.arrays(k) for k in Kind}, calendar, day_range)
    return store, auctions, balancing
