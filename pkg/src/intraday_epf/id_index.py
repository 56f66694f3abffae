"""Volume-weighted xIDy indices, EPEX ID3/ID1 and 15-minute index grids.

Window arithmetic is done in integer minutes (milliseconds internally) and
prices/volumes are accumulated as integer ticks, so sums over any disjoint
split of a window are exact and the weighted-additivity identity holds up to
the final floating-point division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from enum import Enum

import numpy as np
import pandas as pd

from .market_data import EPOCH_ORDINAL as _EPOCH
from .market_data import (MS_PER_MIN, PRICE_TICKS, VOLUME_TICKS, AuctionSeries, DataError,
                          InformationClock, Kind, MarketCalendar, ProductKey, TradeStore)

TILE_MIN = 15


class Provenance(str, Enum):
    TRADED = "Traded"
    FALLBACK_LAST_TRADE = "FallbackLastTrade"
    FALLBACK_AUCTION = "FallbackAuction"


PROV_CODES = {Provenance.TRADED: 0, Provenance.FALLBACK_LAST_TRADE: 1,
              Provenance.FALLBACK_AUCTION: 2}
PROV_FROM_CODE = {v: k for k, v in PROV_CODES.items()}


@dataclass(frozen=True)
class IdWindow:
    """[b - x - y, b - x) with x, y held in integer minutes."""

    x_min: int
    y_min: int

    def __post_init__(self):
        if self.x_min < 0 or self.y_min <= 0:
            raise ValueError(f"invalid window x={self.x_min}min y={self.y_min}min")

    @classmethod
    def from_hours(cls, x: float, y: float) -> "IdWindow":
        xm, ym = x * 60, y * 60
        if abs(xm - round(xm)) > 1e-9 or abs(ym - round(ym)) > 1e-9:
            raise ValueError("window bounds must be whole minutes")
        return cls(int(round(xm)), int(round(ym)))

    @property
    def x(self) -> float:
        return self.x_min / 60

    @property
    def y(self) -> float:
        return self.y_min / 60

    def bounds(self, delivery_ms: int) -> tuple[int, int]:
        end = delivery_ms - self.x_min * MS_PER_MIN
        return end - self.y_min * MS_PER_MIN, end

    def label(self) -> str:
        return f"{self.x:g}ID{self.y:g}"


ID3_WINDOW = IdWindow(30, 150)
ID1_WINDOW = IdWindow(30, 30)
MR1_WINDOW = IdWindow(195, 15)
MR2_WINDOW = IdWindow(195, 150)


@dataclass(frozen=True)
class IdValue:
    value: float
    volume: float
    provenance: Provenance

    def __post_init__(self):
        traded = self.provenance is Provenance.TRADED
        if traded and not self.volume > 0:
            raise ValueError("traded index value needs positive volume")
        if not traded and self.volume != 0:
            raise ValueError("fallback index value must carry zero volume")


def _auction_fallback(auctions: AuctionSeries, product: ProductKey) -> IdValue:
    value = auctions.fallback(product)
    if value is None:
        market = "DA" if product.kind is Kind.HOURLY else "IA"
        raise DataError(f"no {market} value for {product} at final fallback")
    return IdValue(value, 0.0, Provenance.FALLBACK_AUCTION)


def _vwap(price_ticks: np.ndarray, volume_ticks: np.ndarray) -> IdValue:
    pv = sum(int(p) * int(v) for p, v in zip(price_ticks.tolist(), volume_ticks.tolist()))
    vol = int(volume_ticks.sum())
    return IdValue(pv / vol / PRICE_TICKS, vol / VOLUME_TICKS, Provenance.TRADED)


def compute_xidy(store: TradeStore, auctions: AuctionSeries, product: ProductKey,
                 window: IdWindow) -> IdValue:
    """VWAP over the window, else last prior trade, else the auction value."""
    cal = store.calendar
    b = cal.delivery_start(product.ordinal, product.slot)
    opening = cal.trading_open(product.kind, product.ordinal)
    start, end = window.bounds(b)
    start = max(start, opening)
    ts, price, vol = store.product_arrays(product)
    lo, hi = np.searchsorted(ts, [start, end], side="left")
    if hi > lo:
        return _vwap(price[lo:hi], vol[lo:hi])
    # searchsorted(...)[0] counts trades strictly before the window start
    if lo > 0:
        return IdValue(price[lo - 1] / PRICE_TICKS, 0.0, Provenance.FALLBACK_LAST_TRADE)
    return _auction_fallback(auctions, product)


def compute_epex_id3(store: TradeStore, auctions: AuctionSeries, product: ProductKey) -> IdValue:
    """Exchange definition: [b-3h, b-30min), else whole session, else auction."""
    cal = store.calendar
    b = cal.delivery_start(product.ordinal, product.slot)
    ts, price, vol = store.product_arrays(product)
    start, end = ID3_WINDOW.bounds(b)
    lo, hi = np.searchsorted(ts, [start, end], side="left")
    if hi > lo:
        return _vwap(price[lo:hi], vol[lo:hi])
    if len(ts):
        # control-zone trades are already removed, so this is [open, b - 30min)
        return _vwap(price, vol)
    return _auction_fallback(auctions, product)


def compute_id1(store: TradeStore, auctions: AuctionSeries, product: ProductKey) -> IdValue:
    return compute_xidy(store, auctions, product, ID1_WINDOW)


def combine_weighted(parts: list[IdValue]) -> IdValue:
    """Volume-weighted combination of traded sub-window values."""
    used = [p for p in parts if p.volume > 0]
    if not used:
        raise ValueError("all parts have zero volume")
    for p in used:
        if p.provenance is not Provenance.TRADED:
            raise ValueError("only traded parts can be combined")
    vol = math.fsum(p.volume for p in used)
    value = math.fsum(p.value * p.volume for p in used) / vol
    return IdValue(value, vol, Provenance.TRADED)


@dataclass(frozen=True)
class IdGrid:
    product: ProductKey
    entries: tuple[tuple[IdWindow, IdValue], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def values(self) -> np.ndarray:
        return np.array([v.value for _, v in self.entries])


def grid_tile_count(calendar: MarketCalendar, product: ProductKey, cutoff_ms: int) -> int:
    opening = calendar.trading_open(product.kind, product.ordinal)
    limit = min(cutoff_ms, calendar.gate_closure(product.ordinal, product.slot))
    return max(0, (limit - opening) // (TILE_MIN * MS_PER_MIN))


def build_id_grid(store: TradeStore, auctions: AuctionSeries, product: ProductKey,
                  cutoff: InformationClock) -> IdGrid:
    """15-minute tiles from trading open up to min(cutoff, gate closure)."""
    cal = store.calendar
    opening = cal.trading_open(product.kind, product.ordinal)
    if cutoff.now < opening:
        raise ValueError("cutoff precedes trading open")
    b = cal.delivery_start(product.ordinal, product.slot)
    n = grid_tile_count(cal, product, cutoff.now)
    entries = []
    for t in range(n):
        tile_end = opening + (t + 1) * TILE_MIN * MS_PER_MIN
        window = IdWindow((b - tile_end) // MS_PER_MIN, TILE_MIN)
        entries.append((window, compute_xidy(store, auctions, product, window)))
    return IdGrid(product, tuple(entries))


# ---------------------------------------------------------------------------
# vectorized tile panel


class KindPanel:
    """Per-tile aggregates for every (delivery day, slot) of one product kind.

    Tile t of delivery day d covers [open(d) + 15t, open(d) + 15(t+1)) minutes.
    Any 15-minute-aligned xIDy is a sum over consecutive tiles, so every index
    the models consume is derived here by weighted additivity.
    """

    def __init__(self, store: TradeStore, auctions: AuctionSeries, kind: Kind,
                 day_range: tuple[int, int]):
        cal = store.calendar
        self.kind = kind
        self.calendar = cal
        self.day0, day1 = day_range
        self.n_days = day1 - self.day0 + 1
        S = kind.n_slots
        self.n_slots = S
        open_min = (cal.trading_open_hourly_min if kind is Kind.HOURLY
                    else cal.trading_open_quarter_hourly_min)
        # minutes from trading open to delivery start, per slot
        self.lead_min = np.arange(S) * kind.step_min + 1440 - open_min
        self.n_tiles_slot = (self.lead_min - cal.gate_closure_min) // TILE_MIN
        T = int(self.n_tiles_slot.max())
        self.n_tiles = T

        a = store.arrays(kind)
        keep = (~a.excluded) & (a.day >= self.day0) & (a.day <= day1)
        day, slot, ts = a.day[keep], a.slot[keep], a.ts[keep]
        price, vol = a.price[keep], a.volume[keep]
        opening = (day - 1 - _EPOCH) * 86_400_000 + open_min * MS_PER_MIN
        tile = (ts - opening) // (TILE_MIN * MS_PER_MIN)
        flat = ((day - self.day0) * S + slot // kind.step_min) * T + tile
        size = self.n_days * S * T
        self.volume = np.bincount(flat, weights=vol, minlength=size).astype(np.int64).reshape(self.n_days, S, T)
        self.pv = np.bincount(flat, weights=price * vol, minlength=size).astype(np.int64).reshape(self.n_days, S, T)
        last = np.full(size, np.iinfo(np.int64).min, dtype=np.int64)
        if len(flat):
            ends = np.append(np.flatnonzero(np.diff(flat) != 0), len(flat) - 1)
            last[flat[ends]] = price[ends]
        self._last = last.reshape(self.n_days, S, T)
        # last trade price at or before tile t (forward fill along tiles)
        has = self._last != np.iinfo(np.int64).min
        idx = np.where(has, np.arange(T)[None, None, :], -1)
        np.maximum.accumulate(idx, axis=2, out=idx)
        self._upto_idx = idx
        self._has_upto = idx >= 0
        self._upto = np.take_along_axis(self._last, np.maximum(idx, 0), axis=2)

        series = auctions.da if kind is Kind.HOURLY else auctions.ia
        auc = np.full((self.n_days, S), np.nan)
        i0 = series.day0 - self.day0
        vals = series.values()
        lo, hi = max(0, i0), min(self.n_days, i0 + series.n_days)
        if hi > lo:
            auc[lo:hi] = vals[lo - i0:hi - i0]
        self.auction = auc
        self._cum_v = np.concatenate([np.zeros((self.n_days, S, 1), np.int64),
                                      np.cumsum(self.volume, axis=2)], axis=2)
        self._cum_pv = np.concatenate([np.zeros((self.n_days, S, 1), np.int64),
                                       np.cumsum(self.pv, axis=2)], axis=2)
        self._tile_values = None

    def day_index(self, day_ord) -> np.ndarray:
        return np.asarray(day_ord) - self.day0

    def tile_index(self, slot_idx, x_min) -> np.ndarray:
        """Index of the tile ending x minutes before delivery of the slot."""
        return (self.lead_min[slot_idx] - np.asarray(x_min)) // TILE_MIN - 1

    def window(self, x_min: int, y_min: int):
        """(value, volume_mwh, provenance_code) arrays [n_days, S] for xIDy."""
        if x_min % TILE_MIN or y_min % TILE_MIN:
            raise ValueError("panel windows must be 15-minute aligned")
        t1 = (self.lead_min - x_min) // TILE_MIN                 # exclusive tile end
        t0 = np.maximum(t1 - y_min // TILE_MIN, 0)
        t1 = np.clip(t1, 0, self.n_tiles)
        t0 = np.minimum(t0, t1)
        S = self.n_slots
        rows = np.arange(S)
        v = self._cum_v[:, rows, t1] - self._cum_v[:, rows, t0]
        pv = self._cum_pv[:, rows, t1] - self._cum_pv[:, rows, t0]
        return self._resolve(v, pv, t0)

    def _resolve(self, v, pv, t0):
        S = self.n_slots
        rows = np.arange(S)
        prev_t = np.maximum(t0 - 1, 0)
        has_prev = (t0 >= 1) & self._has_upto[:, rows, prev_t]
        prev_price = self._upto[:, rows, prev_t] / PRICE_TICKS
        with np.errstate(invalid="ignore", divide="ignore"):
            traded = pv / np.where(v > 0, v, 1) / PRICE_TICKS
        value = np.where(v > 0, traded, np.where(has_prev, prev_price, self.auction))
        prov = np.where(v > 0, 0, np.where(has_prev, 1, 2)).astype(np.int8)
        return value, v / VOLUME_TICKS, prov

    def epex_id3(self):
        value, vol, prov = self.window(ID3_WINDOW.x_min, ID3_WINDOW.y_min)
        whole = self.window(self.calendar.gate_closure_min, int(self.lead_min.max()))
        use_whole = (prov != 0) & (whole[2] == 0)
        value = np.where(use_whole, whole[0], value)
        vol = np.where(use_whole, whole[1], vol)
        prov = np.where(use_whole, 0, np.where(prov == 0, 0, 2)).astype(np.int8)
        value = np.where(prov == 2, self.auction, value)
        return value, vol, prov

    def tile_values(self):
        """(value, provenance) cubes [n_days, S, T] with the per-tile fallback chain;
        tiles past gate closure are NaN / code -1."""
        if self._tile_values is None:
            T = self.n_tiles
            has_prev = np.zeros_like(self._has_upto)
            has_prev[:, :, 1:] = self._has_upto[:, :, :-1]
            prev = np.zeros(self._upto.shape)
            prev[:, :, 1:] = self._upto[:, :, :-1] / PRICE_TICKS
            with np.errstate(invalid="ignore", divide="ignore"):
                traded = self.pv / np.where(self.volume > 0, self.volume, 1) / PRICE_TICKS
            auc = np.broadcast_to(self.auction[:, :, None], traded.shape)
            value = np.where(self.volume > 0, traded, np.where(has_prev, prev, auc))
            prov = np.where(self.volume > 0, 0, np.where(has_prev, 1, 2)).astype(np.int8)
            valid = np.arange(T)[None, :] < self.n_tiles_slot[:, None]
            value = np.where(valid[None], value, np.nan)
            prov = np.where(valid[None], prov, -1).astype(np.int8)
            value.setflags(write=False)
            prov.setflags(write=False)
            self._tile_values = (value, prov)
        return self._tile_values


class IndexPanel:
    """Memoized index cubes for both product kinds over a day range.

    Built once before a backtest and shared read-only by every fit; holds
    realized ID3, MR1/MR2 and the 15-minute tile grids.
    """

    def __init__(self, store: TradeStore, auctions: AuctionSeries, balancing=None,
                 day_range: tuple[int, int] | None = None):
        if day_range is None:
            day_range = (auctions.da.day0, auctions.da.last_day)
        self.calendar = store.calendar
        self.day_range = day_range
        self.day0 = day_range[0]
        self.n_days = day_range[1] - day_range[0] + 1
        self.kinds = {k: KindPanel(store, auctions, k, day_range) for k in Kind}
        self._windows: dict = {}
        self.auctions = auctions
        self.balancing = balancing
        self.da = _align(auctions.da.values(), auctions.da.day0, self.day0, self.n_days)
        self.ia = _align(auctions.ia.values(), auctions.ia.day0, self.day0, self.n_days)
        if balancing is not None:
            self.bv = _align(balancing.bv.values(), balancing.bv.day0, self.day0, self.n_days)
        else:
            self.bv = np.full((self.n_days, 96), np.nan)

    def window(self, kind: Kind, window: IdWindow):
        key = (kind, window.x_min, window.y_min)
        if key not in self._windows:
            out = self.kinds[kind].window(window.x_min, window.y_min)
            for arr in out:
                arr.setflags(write=False)
            self._windows[key] = out
        return self._windows[key]

    def id3(self, kind: Kind) -> np.ndarray:
        return self.window(kind, ID3_WINDOW)[0]

    def mr1(self, kind: Kind) -> np.ndarray:
        return self.window(kind, MR1_WINDOW)[0]

    def mr2(self, kind: Kind) -> np.ndarray:
        return self.window(kind, MR2_WINDOW)[0]

    def has_day(self, day_ord: int) -> bool:
        return 0 <= day_ord - self.day0 < self.n_days


def _align(values: np.ndarray, src_day0: int, day0: int, n_days: int) -> np.ndarray:
    out = np.full((n_days, values.shape[1]), np.nan)
    i0 = src_day0 - day0
    lo, hi = max(0, i0), min(n_days, i0 + values.shape[0])
    if hi > lo:
        out[lo:hi] = values[lo - i0:hi - i0]
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# export

INDEX_EXPORT_HEADER = ["day", "slot_min", "kind", "x_hours", "y_hours", "value", "volume",
                       "provenance"]


def index_export_frame(panel: IndexPanel, kind: Kind, windows) -> pd.DataFrame:
    """Long table of xIDy values for every (day, slot) of the panel and window."""
    S = kind.n_slots
    days = np.repeat(np.arange(panel.n_days) + panel.day0, S)
    slots = np.tile(np.arange(S) * kind.step_min, panel.n_days)
    day_txt = np.array([date.fromordinal(d).isoformat()
                        for d in range(panel.day0, panel.day0 + panel.n_days)])
    frames = []
    for w in windows:
        value, vol, prov = panel.window(kind, w)
        frames.append(pd.DataFrame({
            "day": day_txt[days - panel.day0], "slot_min": slots, "kind": kind.value,
            "x_hours": w.x, "y_hours": w.y, "value": value.ravel(), "volume": vol.ravel(),
            "provenance": [PROV_FROM_CODE[int(c)].value for c in prov.ravel()],
        }))
    return pd.concat(frames, ignore_index=True)[INDEX_EXPORT_HEADER]


def write_index_csv(path, panel: IndexPanel, kind: Kind, windows) -> None:
    index_export_frame(panel, kind, windows).to_csv(path, index=False, float_format="%.10g")
