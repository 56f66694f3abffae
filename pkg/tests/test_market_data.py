from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import D, make_market
from intraday_epf.market_data import (
    MS_PER_MIN, ConfigError, DataError, InformationClock, Kind, MarketCalendar, ProductKey,
    SynthConfig, TradeArrays, TradeStore, day_ms, descriptive_stats, format_ticks,
    generate_synthetic_market, ingest_auctions, ingest_trades, load_market,
    seasonal_base, visible_slice, write_market,
)

HEADER = "delivery_day,delivery_slot_min,kind,exec_time_utc,price_eur_mwh,volume_mwh\n"


def write_trades(path, rows):
    path.write_text(HEADER + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


# -- calendar -----------------------------------------------------------------

def test_product_key_slot_validation():
    ProductKey(date(2017, 1, 1), 1380, Kind.HOURLY)
    ProductKey(date(2017, 1, 1), 1425, Kind.QUARTER_HOURLY)
    with pytest.raises(ValueError):
        ProductKey(date(2017, 1, 1), 30, Kind.HOURLY)
    with pytest.raises(ValueError):
        ProductKey(date(2017, 1, 1), 1440, Kind.QUARTER_HOURLY)


def test_calendar_defaults():
    cal = MarketCalendar()
    d = D
    assert cal.trading_open(Kind.HOURLY, d) == day_ms(d - 1) + 15 * 60 * MS_PER_MIN
    assert cal.trading_open(Kind.QUARTER_HOURLY, d) == day_ms(d - 1) + 16 * 60 * MS_PER_MIN
    assert cal.gate_closure(d, 600) == cal.delivery_start(d, 600) - 30 * MS_PER_MIN
    assert cal.forecast_time(d, 1200) == day_ms(d) + (16 * 60 + 45) * MS_PER_MIN
    assert cal.auction_publication("DA", d) == day_ms(d - 1) + 13 * 60 * MS_PER_MIN
    assert cal.auction_publication("IA", d) == day_ms(d - 1) + (15 * 60 + 10) * MS_PER_MIN
    # slot 16:15-16:30 is known at 16:45
    assert cal.bv_publication(d, 16 * 60 + 15) == day_ms(d) + (16 * 60 + 45) * MS_PER_MIN


def test_calendar_rejects_open_after_gate_closure():
    with pytest.raises(ConfigError):
        MarketCalendar.from_dict({"trading_open_hourly_min": 1420})
    with pytest.raises(ConfigError):
        MarketCalendar.from_dict({"no_such_field": 1})


# -- ingestion ----------------------------------------------------------------

def test_ingest_three_rows_sorted(tmp_path):
    p = write_trades(tmp_path / "t.csv", [
        "2017-03-15,600,H,2017-03-15T08:00:00.000Z,40.00,1.000",
        "2017-03-15,600,H,2017-03-15T07:00:00.000Z,41.50,2.500",
        "2017-03-15,600,H,2017-03-15T07:30:00.000Z,-3.25,0.100",
    ])
    store = ingest_trades(p, MarketCalendar())
    prod = ProductKey(date(2017, 3, 15), 600, Kind.HOURLY)
    trades = store.trades(prod)
    assert store.count(prod) == 3
    assert [t.price for t in trades] == [41.5, -3.25, 40.0]
    assert all(np.diff([t.timestamp for t in trades]) > 0)


def test_ingest_zero_volume_names_row(tmp_path):
    p = write_trades(tmp_path / "t.csv", [
        "2017-03-15,600,H,2017-03-15T07:00:00.000Z,41.50,2.500",
        "2017-03-15,600,H,2017-03-15T07:30:00.000Z,40.00,0.000",
    ])
    with pytest.raises(DataError, match="row 3"):
        ingest_trades(p, MarketCalendar())


@pytest.mark.parametrize("row", [
    "2017-03-15,600,H,2017-03-14T14:59:59.999Z,40.00,1.000",   # before trading open
    "2017-03-15,600,H,2017-03-15T10:00:00.000Z,40.00,1.000",   # at delivery start
])
def test_ingest_rejects_trades_outside_session(tmp_path, row):
    with pytest.raises(DataError, match="row 2"):
        ingest_trades(write_trades(tmp_path / "t.csv", [row]), MarketCalendar())


@pytest.mark.parametrize("row", [
    "2017-03-15,600,H,not-a-time,40.00,1.000",
    "2017-03-15,600,H,2017-03-15T07:00:00.000Z,4O.00,1.000",
    "2017-03-15,600,H,2017-03-15T07:00:00.000Z,40.001,1.000",
    "2017-03-15,610,H,2017-03-15T07:00:00.000Z,40.00,1.000",
    "2017-03-15,600,X,2017-03-15T07:00:00.000Z,40.00,1.000",
])
def test_ingest_malformed_rows(tmp_path, row):
    with pytest.raises(DataError, match="row 2"):
        ingest_trades(write_trades(tmp_path / "t.csv", [row]), MarketCalendar())


def test_ingest_bad_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(DataError, match="header"):
        ingest_trades(p, MarketCalendar())


def test_control_zone_trades_flagged(tmp_path):
    p = write_trades(tmp_path / "t.csv", [
        "2017-03-15,600,H,2017-03-15T09:29:59.999Z,40.00,1.000",
        "2017-03-15,600,H,2017-03-15T09:30:00.000Z,50.00,1.000",
    ])
    store = ingest_trades(p, MarketCalendar())
    prod = ProductKey(date(2017, 3, 15), 600, Kind.HOURLY)
    assert [t.excluded for t in store.trades(prod)] == [False, True]
    ts, price, vol = store.product_arrays(prod)
    assert list(price) == [4000]


def test_auction_gap_is_error(tmp_path):
    p = tmp_path / "a.csv"
    rows = ["day,slot_min,market,price_eur_mwh"]
    rows += [f"2017-03-15,{60 * h},DA,40.00" for h in range(23)]
    rows += [f"2017-03-15,{15 * q},IA,40.00" for q in range(96)]
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(DataError, match="gaps"):
        ingest_auctions(p, MarketCalendar())


def test_auction_duplicates_and_dst_fix(tmp_path):
    p = tmp_path / "a.csv"
    rows = ["day,slot_min,market,price_eur_mwh"]
    rows += [f"2017-03-15,{60 * h},DA,{40 + h}.00" for h in range(24) if h != 2]
    rows += ["2017-03-15,180,DA,99.00"]            # duplicated hour
    rows += [f"2017-03-15,{15 * q},IA,40.00" for q in range(96)]
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(DataError):
        ingest_auctions(p, MarketCalendar())
    a = ingest_auctions(p, MarketCalendar(dst_fix=True))
    # missing 02:00 linearly imputed between 01:00 and 03:00, extra 03:00 dropped
    assert a.value("DA", D, 120) == pytest.approx(42.0)
    assert a.value("DA", D, 180) == 43.0


def test_round_trip_bit_identical(tmp_path, small_market):
    store, auctions, balancing = small_market
    h1 = write_market(tmp_path / "a", store, auctions, balancing)
    s2, a2, b2 = load_market(tmp_path / "a", store.calendar)
    h2 = write_market(tmp_path / "b", s2, a2, b2)
    assert h1 == h2
    assert s2.digest() == store.digest()
    for name in h1:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@given(st.integers(-10**9, 10**9))
def test_tick_formatting_round_trip(ticks):
    import pandas as pd
    from intraday_epf.market_data import _parse_ticks
    for scale in (100, 1000):
        s = format_ticks(ticks, scale)
        assert _parse_ticks(pd.Series([s]), scale, "x")[0] == ticks


# -- descriptive statistics ---------------------------------------------------

def test_descriptive_stats_single_product():
    store, _, _ = make_market([(600, 60 + i, 40.0, 1.0) for i in range(6)])
    df = descriptive_stats(store)
    row = df[(df.kind == "H") & (df.measure == "count")].iloc[0]
    # 23 empty products on the same day count as zero
    assert row["max"] == 6 and row["min"] == 0


def test_descriptive_stats_counts_one_to_five():
    trades = [(60 * s, 60 + i, 40.0, 1.0) for s, n in zip(range(5), (1, 2, 3, 4, 5)) for i in range(n)]
    store, _, _ = make_market(trades)
    df = descriptive_stats(store)
    row = df[(df.kind == "H") & (df.measure == "count")].iloc[0]
    counts = np.array([1, 2, 3, 4, 5] + [0] * 19)
    assert row["median"] == np.median(counts)
    assert row["mean"] == pytest.approx(counts.mean())
    assert row["max"] == 5


def test_descriptive_stats_empty():
    with pytest.raises(DataError):
        descriptive_stats(TradeStore({}, MarketCalendar()))


# -- synthetic generator ------------------------------------------------------

def test_synth_deterministic():
    cfg = SynthConfig(n_days=4, seed=5)
    a = generate_synthetic_market(cfg)
    b = generate_synthetic_market(cfg)
    assert a[0].digest() == b[0].digest()
    assert np.array_equal(a[1].da.ticks, b[1].da.ticks)
    assert np.array_equal(a[2].bv.ticks, b[2].bv.ticks)
    c = generate_synthetic_market(SynthConfig(n_days=4, seed=6))
    assert c[0].digest() != a[0].digest()


def test_synth_rejects_inconsistent_range():
    with pytest.raises(ConfigError):
        SynthConfig(n_days=30, window_days=30, oos_days=5).validate()
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"n_days": 10, "bogus": 1})


@pytest.fixture(scope="module")
def calibrated():
    return generate_synthetic_market(SynthConfig(n_days=30, seed=2))


def test_synth_trade_counts_match_calibration(calibrated):
    df = descriptive_stats(calibrated[0])
    h = df[(df.kind == "H") & (df.measure == "count")].iloc[0]
    qh = df[(df.kind == "QH") & (df.measure == "count")].iloc[0]
    assert abs(h["mean"] / 472.19 - 1) < 0.10
    assert abs(qh["mean"] / 129.72 - 1) < 0.10


def test_synth_majority_of_hourly_trades_in_id3_window(calibrated):
    store = calibrated[0]
    a = store.arrays(Kind.HOURLY)
    b = (a.day - 719163) * 86_400_000 + a.slot * MS_PER_MIN
    lead = b - a.ts
    inside = (lead > 30 * MS_PER_MIN) & (lead <= 180 * MS_PER_MIN)
    assert inside.mean() >= 0.70


def test_synth_trades_inside_session(calibrated):
    store = calibrated[0]
    cal = store.calendar
    for kind in Kind:
        a = store.arrays(kind)
        b = (a.day - 719163) * 86_400_000 + a.slot * MS_PER_MIN
        op = np.array([cal.trading_open(kind, int(d)) for d in np.unique(a.day)])
        opening = op[np.searchsorted(np.unique(a.day), a.day)]
        assert np.all(a.ts >= opening) and np.all(a.ts < b)
        # every trade that reaches index math is before gate closure
        kept = ~a.excluded
        assert np.all(a.ts[kept] < b[kept] - 30 * MS_PER_MIN)


def test_synth_no_spikes_bounded_noise():
    cfg = SynthConfig(n_days=8, seed=4, spike_prob=0.0)
    store, auctions, _ = generate_synthetic_market(cfg)
    a = store.arrays(Kind.HOURLY)
    base = seasonal_base(cfg, Kind.HOURLY, np.arange(cfg.day_range[0], cfg.day_range[1] + 1))
    dev = a.price / 100 - base[a.day - cfg.day_range[0], a.slot // 60]
    # day AR + common shock + auction noise + session walk + jitter, all Gaussian
    sd = np.sqrt(cfg.ar_sd ** 2 / (1 - cfg.ar_phi ** 2) + cfg.common_sd ** 2 / (1 - cfg.ar_phi ** 2)
                 + cfg.auction_sd ** 2 + cfg.walk_sd ** 2 * 0.25 * 4 * 20 + cfg.trade_jitter_sd ** 2)
    assert np.max(np.abs(dev)) < 6 * sd


def test_synth_qh_jigsaw():
    cfg = SynthConfig(n_days=3)
    qh = seasonal_base(cfg, Kind.QUARTER_HOURLY, np.array([cfg.start_ordinal]))[0].reshape(24, 4)
    flat = SynthConfig(n_days=3, qh_jigsaw=0.0)
    smooth = seasonal_base(flat, Kind.QUARTER_HOURLY, np.array([flat.start_ordinal]))[0].reshape(24, 4)
    # within every hour the quarter-hours fall from above to below the smooth profile
    offset = qh - smooth
    assert np.all(np.diff(offset, axis=1) < 0)
    assert np.allclose(offset.mean(axis=1), 0.0)


# -- visibility ---------------------------------------------------------------

def test_visible_slice_bv_latest_slot(small_market):
    _, _, balancing = small_market
    d = balancing.bv.day0 + 5
    clock = InformationClock(day_ms(d) + (16 * 60 + 45) * MS_PER_MIN)
    vis = visible_slice(balancing, clock)
    row = vis.bv.present[d - vis.bv.day0]
    last = int(np.flatnonzero(row)[-1]) * 15
    assert last == 16 * 60 + 15
    assert last <= 16 * 60 + 45 - 30


def test_visible_slice_next_day_auctions(small_market):
    _, auctions, _ = small_market
    d = auctions.da.day0 + 5
    early = visible_slice(auctions, InformationClock(day_ms(d) + 11 * 60 * MS_PER_MIN))
    assert early.value("DA", d + 1, 0) is None and early.value("DA", d, 0) is not None
    late = visible_slice(auctions, InformationClock(day_ms(d) + 16 * 60 * MS_PER_MIN))
    assert late.value("DA", d + 1, 0) is not None and late.value("IA", d + 1, 0) is not None


def test_visible_slice_next_day_trades(small_market):
    store, _, _ = small_market
    d = store.day_range[0] + 5
    vis = visible_slice(store, InformationClock(day_ms(d) + (16 * 60 + 45) * MS_PER_MIN))
    assert vis.arrays(Kind.HOURLY).day.max() == d + 1
    assert vis.arrays(Kind.QUARTER_HOURLY).day.max() == d + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3 * 1440), st.integers(0, 3 * 1440))
def test_visible_slice_monotone(small_market, t1, t2):
    store, auctions, balancing = small_market
    lo, hi = sorted((t1, t2))
    base = day_ms(store.day_range[0] + 3)
    c1, c2 = InformationClock(base + lo * MS_PER_MIN), InformationClock(base + hi * MS_PER_MIN)
    a1, a2 = visible_slice(auctions, c1), visible_slice(auctions, c2)
    assert np.all(a2.da.present[a1.da.present])
    assert np.all(a2.ia.present[a1.ia.present])
    b1, b2 = visible_slice(balancing, c1), visible_slice(balancing, c2)
    assert np.all(b2.bv.present[b1.bv.present])
    s1, s2 = visible_slice(store, c1), visible_slice(store, c2)
    assert len(s1) <= len(s2)


def test_visible_slice_unknown_type():
    with pytest.raises(TypeError):
        visible_slice([1, 2], InformationClock(0))


def test_trade_arrays_sorted_by_product_then_time():
    arr = TradeArrays.build([D, D, D], [60, 0, 60], [5, 9, 1], [1, 2, 3], [1, 1, 1],
                            [False] * 3)
    assert list(arr.slot) == [0, 60, 60] and list(arr.ts) == [9, 1, 5]
