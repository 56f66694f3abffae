from datetime import date

import numpy as np
import pytest

from intraday_epf.id_index import IndexPanel
from intraday_epf.market_data import (
    EPOCH_ORDINAL, MS_PER_MIN, PRICE_TICKS, VOLUME_TICKS, AuctionSeries, BalancingSeries, Kind,
    MarketCalendar, SlotSeries, SynthConfig, TradeArrays, TradeStore, day_ms,
    generate_synthetic_market,
)

DAY = date(2017, 3, 15)
D = DAY.toordinal()


def make_market(trades, kind=Kind.HOURLY, da=41.2, ia=39.0, calendar=None, day=D, n_days=1):
    """Store and flat auctions from (slot_min, minutes_before_delivery, price, volume)
    tuples; a leading day offset selects a later delivery day."""
    cal = calendar or MarketCalendar()
    days, slots, ts, price, vol, excl = [], [], [], [], [], []
    for row in trades:
        off, (slot, before, p, v) = (0, row) if len(row) == 4 else (row[0], row[1:])
        b = day_ms(day + off) + slot * MS_PER_MIN
        t = b - int(round(before * MS_PER_MIN))
        days.append(day + off)
        slots.append(slot)
        ts.append(t)
        price.append(int(round(p * PRICE_TICKS)))
        vol.append(int(round(v * VOLUME_TICKS)))
        excl.append(t >= b - cal.gate_closure_min * MS_PER_MIN)
    arrays = {kind: TradeArrays.build(days, slots, ts, price, vol, excl)}
    store = TradeStore(arrays, cal, (day, day + n_days - 1))
    ones_h = np.ones((n_days, 24), dtype=bool)
    ones_q = np.ones((n_days, 96), dtype=bool)
    auctions = AuctionSeries(
        SlotSeries(day, 60, np.full((n_days, 24), int(round(da * PRICE_TICKS))), ones_h, PRICE_TICKS),
        SlotSeries(day, 15, np.full((n_days, 96), int(round(ia * PRICE_TICKS))), ones_q, PRICE_TICKS),
        cal)
    balancing = BalancingSeries(SlotSeries(day, 15, np.zeros((n_days, 96), dtype=np.int64),
                                           ones_q, VOLUME_TICKS), cal)
    return store, auctions, balancing


@pytest.fixture(scope="session")
def small_market():
    cfg = SynthConfig(n_days=45, seed=11, hourly_mean_count=120.0, qh_mean_count=40.0)
    return generate_synthetic_market(cfg)


@pytest.fixture(scope="session")
def small_panel(small_market):
    store, auctions, balancing = small_market
    return IndexPanel(store, auctions, balancing)


def ordinal_to_iso(d):
    return date.fromordinal(d).isoformat()


__all__ = ["DAY", "D", "EPOCH_ORDINAL", "make_market", "ordinal_to_iso"]


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(f"{results[n]} criterion {n}")
