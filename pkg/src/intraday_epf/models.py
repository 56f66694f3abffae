"""Model specifications, feature catalogs and the fit-and-forecast pipeline.

A catalog lists regressors relative to the target's delivery day d: entry
(component, lag j, slot k, tile t) refers to the product of day d - j. With an
idealized calendar the visibility of every entry relative to tau depends only
on the target slot, so a catalog is built once per (model, kind, slot) and
evaluated on every calibration day.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .id_index import TILE_MIN, IndexPanel
from .market_data import (
    MS_PER_MIN, DataError, Kind, MarketCalendar, ProductKey, day_ms, fmt_hhmm,
)
from .solver import FitResult, LambdaGrid, PenaltyConfig, fit_ols, fit_regularized
from .transforms import (
    ResidualStore, ScaleMode, fit_robust_scale, fit_robust_scale_columns,
    forward, inverse_expected, inverse_naive,
)

# catalog components
GRID_H, ID3_H, GRID_QH, ID3_QH, DA, IA, DOW, BV = range(1, 9)
COMPONENT_NAMES = {
    GRID_H: "hourly 15-min grid", ID3_H: "hourly ID3 lags", GRID_QH: "quarter-hourly 15-min grid",
    ID3_QH: "quarter-hourly ID3 lags", DA: "day-ahead auction", IA: "intraday auction",
    DOW: "day-of-week dummies", BV: "balancing volume",
}
_KIND_OF = {GRID_H: Kind.HOURLY, ID3_H: Kind.HOURLY, GRID_QH: Kind.QUARTER_HOURLY,
            ID3_QH: Kind.QUARTER_HOURLY, DA: Kind.HOURLY, IA: Kind.QUARTER_HOURLY,
            BV: Kind.QUARTER_HOURLY, DOW: None}
_ALWAYS = -(10 ** 9)   # visibility of calendar dummies
DOW_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
MR_LEAD_MIN = 195      # tau = delivery start - 3h15m

PUBLISHED_FI_COUNTS = {(Kind.HOURLY, 0): 16580, (Kind.QUARTER_HOURLY, 1425): 26259}


# ---------------------------------------------------------------------------
# model specifications

FAMILIES = ("NaiveDA", "NaiveMR1", "NaiveMR2", "ARX", "LassoAR", "FullInfo")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    method: str = "none"
    penalty_mode: str = "penal"
    transform: str = "none"

    def __post_init__(self):
        ok = {
            "NaiveDA": self.method == "none" and self.transform == "none",
            "NaiveMR1": self.method == "none" and self.transform == "none",
            "NaiveMR2": self.method == "none" and self.transform == "none",
            "ARX": self.method == "ols" and self.transform in ("none", "asinhIC", "asinhC"),
            "LassoAR": self.method == "lasso" and self.transform == "asinhIC",
            "FullInfo": (self.method in ("lasso", "elnet")
                         and self.penalty_mode in ("notpen", "penal", "fixed")
                         and self.transform in ("asinhIC", "asinhC")),
        }.get(self.family, False)
        if not ok:
            raise ValueError(f"invalid model specification {self}")

    @property
    def name(self) -> str:
        if self.family.startswith("Naive"):
            return "Naive." + self.family[5:]
        if self.family == "ARX":
            return "ARX." + ("non" if self.transform == "none" else self.transform)
        if self.family == "LassoAR":
            return "Lasso.AR"
        tail = "IC" if self.transform == "asinhIC" else "C"
        return f"FI.{self.method}.{self.penalty_mode}.{tail}"

    def __str__(self) -> str:
        return self.name

    @property
    def is_naive(self) -> bool:
        return self.family.startswith("Naive")

    @property
    def alpha(self) -> float:
        return 0.5 if self.method == "elnet" else 1.0

    @classmethod
    def parse(cls, name: str) -> "ModelSpec":
        parts = name.strip().split(".")
        try:
            if parts[0] == "Naive" and len(parts) == 2 and parts[1] in ("DA", "MR1", "MR2"):
                return cls("Naive" + parts[1])
            if parts[0] == "ARX" and len(parts) == 2:
                tr = {"non": "none", "asinhIC": "asinhIC", "asinhC": "asinhC"}[parts[1]]
                return cls("ARX", "ols", "penal", tr)
            if parts == ["Lasso", "AR"]:
                return cls("LassoAR", "lasso", "penal", "asinhIC")
            if parts[0] == "FI" and len(parts) == 4:
                tr = {"IC": "asinhIC", "C": "asinhC"}[parts[3]]
                return cls("FullInfo", parts[1], parts[2], tr)
        except (KeyError, ValueError):
            pass
        raise ValueError(f"unknown model {name!r}; valid names: {', '.join(MODEL_NAMES)}")


MODEL_NAMES = (
    ["Naive.DA", "Naive.MR1", "Naive.MR2", "ARX.non", "ARX.asinhIC", "ARX.asinhC", "Lasso.AR"]
    + [f"FI.{m}.{p}.{t}" for m in ("lasso", "elnet") for p in ("notpen", "penal", "fixed")
       for t in ("IC", "C")]
)


# ---------------------------------------------------------------------------
# feature catalogs


def _day_label(lag: int) -> str:
    if lag == 0:
        return "d"
    return f"d+{-lag}" if lag < 0 else f"d-{lag}"


def _hours(minutes: int) -> str:
    return f"{minutes / 60:g}"


@dataclass(frozen=True, eq=False)
class FeatureCatalog:
    """Ordered regressor descriptors for one target (kind, slot).

    vis_rel holds each entry's visibility time in minutes relative to 00:00 of
    the target day; tau_rel is the forecast time on the same scale.
    """

    model: str
    kind: Kind
    slot_min: int
    tau_rel: int
    component: np.ndarray
    lag: np.ndarray
    slot_idx: np.ndarray
    tile: np.ndarray
    vis_rel: np.ndarray
    calendar: MarketCalendar
    omitted: tuple[str, ...] = ()

    def __len__(self) -> int:
        return int(self.component.size)

    def _x_min(self, i: int) -> int:
        c = int(self.component[i])
        kind = _KIND_OF[c]
        b_rel = -int(self.lag[i]) * 1440 + int(self.slot_idx[i]) * kind.step_min
        return b_rel - int(self.vis_rel[i])

    def name(self, i: int) -> str:
        c, j, k = int(self.component[i]), int(self.lag[i]), int(self.slot_idx[i])
        kind = _KIND_OF[c]
        if c == DOW:
            return f"DoW {DOW_NAMES[k]}"
        slot = fmt_hhmm(k * kind.step_min)
        where = f"{_day_label(j)},{slot}"
        if c in (GRID_H, GRID_QH):
            return f"{kind.value} {_hours(self._x_min(i))}ID0.25 {where}"
        if c in (ID3_H, ID3_QH):
            return f"{kind.value} ID3 {where}"
        return f"{'DA' if c == DA else 'IA' if c == IA else 'BV'} {where}"

    def names(self) -> list[str]:
        return [self.name(i) for i in range(len(self))]

    def index_of(self, component: int, lag: int, slot_idx: int, tile: int = -1) -> int:
        hit = np.flatnonzero((self.component == component) & (self.lag == lag)
                             & (self.slot_idx == slot_idx) & (self.tile == tile))
        if hit.size != 1:
            raise KeyError("catalog entry not found")
        return int(hit[0])

    def most_recent_index(self) -> int:
        """Column of the target's own 3.25ID0.25 tile."""
        kind = self.kind
        comp = GRID_H if kind is Kind.HOURLY else GRID_QH
        open_rel = -1440 + _open_min(self.calendar, kind)
        tile = (self.slot_min - MR_LEAD_MIN - open_rel) // TILE_MIN - 1
        return self.index_of(comp, 0, self.slot_min // kind.step_min, tile)

    def breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in np.unique(self.component):
            sel = self.component == c
            for j in np.unique(self.lag[sel]):
                key = f"({c}) {COMPONENT_NAMES[int(c)]} {_day_label(int(j))}"
                out[key] = int(np.count_nonzero(sel & (self.lag == j)))
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.component, self.lag, self.slot_idx, self.tile, self.vis_rel):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        h.update(f"{self.model}|{self.kind.value}|{self.slot_min}|{self.tau_rel}".encode())
        return h.hexdigest()

    # -- evaluation -------------------------------------------------------

    def evaluate(self, panel: IndexPanel, day_ords) -> np.ndarray:
        """Design rows [len(day_ords), len(self)] for targets on the given days."""
        days = np.atleast_1d(np.asarray(day_ords, dtype=np.int64))
        di = days - panel.day0
        X = np.empty((days.size, len(self)))
        for c in np.unique(self.component):
            sel = np.flatnonzero(self.component == c)
            rows = di[:, None] - self.lag[sel][None, :]
            if c == DOW:
                X[:, sel] = (((days[:, None] - 1) % 7) == self.slot_idx[sel][None, :])
                continue
            if rows.min() < 0 or rows.max() >= panel.n_days:
                raise DataError(f"history for component {c} ({COMPONENT_NAMES[int(c)]}) "
                                "lies outside the loaded data range")
            k = self.slot_idx[sel][None, :]
            kind = _KIND_OF[int(c)]
            if c in (GRID_H, GRID_QH):
                cube = panel.kinds[kind].tile_values()[0]
                X[:, sel] = cube[rows, k, self.tile[sel][None, :]]
            elif c in (ID3_H, ID3_QH):
                X[:, sel] = panel.id3(kind)[rows, k]
            elif c == DA:
                X[:, sel] = panel.da[rows, k]
            elif c == IA:
                X[:, sel] = panel.ia[rows, k]
            else:
                X[:, sel] = panel.bv[rows, k]
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            r, j = bad[0]
            raise DataError(f"unresolvable catalog entry {self.name(int(j))} "
                            f"for target day {int(days[r])}")
        return X

    # -- information hygiene ---------------------------------------------

    def visibility_offsets(self) -> np.ndarray:
        """Visibility of each entry in ms relative to the forecast time, via the
        calendar's own publication rules (independent of vis_rel)."""
        return _calendar_offsets(self)

    def audit(self, day_ord: int | None = None) -> np.ndarray:
        """Indices of entries visible only after tau; empty when the build is clean."""
        return np.flatnonzero(self.visibility_offsets() > 0)


_OFFSET_CACHE: dict[str, np.ndarray] = {}


def _calendar_offsets(cat: FeatureCatalog) -> np.ndarray:
    key = cat.digest() + repr(cat.calendar)
    hit = _OFFSET_CACHE.get(key)
    if hit is not None:
        return hit
    cal = cat.calendar
    d = 2 * 366 + 1   # any reference day; offsets are day-invariant on this calendar
    # the stricter of the calendar's forecast time and the one the catalog was built for
    tau = min(cal.forecast_time(d, cat.slot_min), day_ms(d) + cat.tau_rel * MS_PER_MIN)
    out = np.empty(len(cat), dtype=np.int64)
    memo: dict = {}
    for i in range(len(cat)):
        c, j, k, t = int(cat.component[i]), int(cat.lag[i]), int(cat.slot_idx[i]), int(cat.tile[i])
        key_i = (c, j, k, t)
        if key_i in memo:
            out[i] = memo[key_i]
            continue
        kind = _KIND_OF[c]
        if c == DOW:
            pub = day_ms(d - 7)
        else:
            slot = k * kind.step_min
            if c in (GRID_H, GRID_QH):
                end = cal.trading_open(kind, d - j) + (t + 1) * TILE_MIN * MS_PER_MIN
                # tiles past gate closure are not part of any index
                pub = end if end <= cal.gate_closure(d - j, slot) else np.iinfo(np.int64).max // 2
            elif c in (ID3_H, ID3_QH):
                pub = cal.gate_closure(d - j, slot)
            elif c == DA:
                pub = cal.auction_publication("DA", d - j)
            elif c == IA:
                pub = cal.auction_publication("IA", d - j)
            else:
                pub = cal.bv_publication(d - j, slot)
        memo[key_i] = out[i] = pub - tau
    out.setflags(write=False)
    _OFFSET_CACHE[key] = out
    return out


def _open_min(cal: MarketCalendar, kind: Kind) -> int:
    return cal.trading_open_hourly_min if kind is Kind.HOURLY else cal.trading_open_quarter_hourly_min


class _Builder:
    def __init__(self):
        self.parts: list[tuple] = []

    def add(self, comp, lag, slot_idx, tile, vis):
        n = np.broadcast(np.asarray(lag), np.asarray(slot_idx), np.asarray(tile), np.asarray(vis)).size
        self.parts.append(tuple(np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
                                for a in (np.full(n, comp), lag, slot_idx, tile, vis)))

    def build(self, model, kind, slot_min, tau_rel, cal, omitted=()):
        if self.parts:
            cols = [np.concatenate([p[i] for p in self.parts]) for i in range(5)]
        else:
            cols = [np.zeros(0, dtype=np.int64)] * 5
        comp, lag, slot, tile, vis = (np.ascontiguousarray(c) for c in cols)
        for a in (comp, lag, slot, tile, vis):
            a.setflags(write=False)
        return FeatureCatalog(model, kind, slot_min, tau_rel, comp, lag, slot, tile, vis, cal,
                              tuple(omitted))


def _grid_entries(bld: _Builder, cal: MarketCalendar, kind: Kind, comp: int, lags, tau: int):
    open_min = _open_min(cal, kind)
    S, step = kind.n_slots, kind.step_min
    for j in lags:
        open_rel = (-j - 1) * 1440 + open_min
        for k in range(S):
            b_rel = -j * 1440 + k * step
            n_tiles = (b_rel - cal.gate_closure_min - open_rel) // TILE_MIN
            ends = open_rel + TILE_MIN * (np.arange(n_tiles) + 1)
            t = np.flatnonzero(ends <= tau)
            if t.size:
                bld.add(comp, j, k, t, ends[t])


def _id3_vis(cal: MarketCalendar, kind: Kind, lag: int, k: int) -> int:
    return -lag * 1440 + k * kind.step_min - cal.gate_closure_min


def _auction_vis(cal: MarketCalendar, market: str, lag: int) -> int:
    pub = cal.da_publication_min if market == "DA" else cal.ia_publication_min
    return (-lag - 1) * 1440 + pub


def _bv_vis(cal: MarketCalendar, lag: int, k: int) -> int:
    return -lag * 1440 + k * 15 + 15 + cal.bv_publication_lag_min


@lru_cache(maxsize=512)
def fi_catalog(cal: MarketCalendar, kind: Kind, slot_min: int, tau_rel: int | None = None,
               reduced: bool = False) -> FeatureCatalog:
    """All eight full-information components visible at tau.

    With ``reduced`` only the current and previous delivery day enter the
    day-indexed components (grids, auctions, balancing) and the ID3 lag
    blocks (lags 2..14) are left out; the calendar dummies stay.
    """
    tau = slot_min - MR_LEAD_MIN if tau_rel is None else int(tau_rel)
    grid_lags = (0, 1) if reduced else (-1, 0, 1)
    id3_lags = () if reduced else tuple(range(2, 15))
    auc_lags = (0, 1) if reduced else tuple(range(-1, 15))
    bv_lags = (0, 1) if reduced else tuple(range(0, 15))
    bld = _Builder()
    omitted = []
    for grid_c, id3_c, k_kind in ((GRID_H, ID3_H, Kind.HOURLY), (GRID_QH, ID3_QH, Kind.QUARTER_HOURLY)):
        _grid_entries(bld, cal, k_kind, grid_c, grid_lags, tau)
        for j in id3_lags:
            ks = np.arange(k_kind.n_slots)
            vis = np.array([_id3_vis(cal, k_kind, j, int(k)) for k in ks])
            ok = vis <= tau
            bld.add(id3_c, j, ks[ok], -1, vis[ok])
    for comp, market, S in ((DA, "DA", 24), (IA, "IA", 96)):
        for j in auc_lags:
            vis = _auction_vis(cal, market, j)
            if vis <= tau:
                bld.add(comp, j, np.arange(S), -1, vis)
            else:
                omitted.append(f"{market} {_day_label(j)} (not yet published)")
    bld.add(DOW, 0, np.arange(7), -1, _ALWAYS)
    for j in bv_lags:
        ks = np.arange(96)
        vis = np.array([_bv_vis(cal, j, int(k)) for k in ks])
        ok = vis <= tau
        if ok.any():
            bld.add(BV, j, ks[ok], -1, vis[ok])
    name = "FI.reduced" if reduced else "FI"
    return bld.build(name, kind, slot_min, tau, cal, omitted)


def _recent_id3(kind: Kind, slot_min: int) -> tuple[int, int]:
    """(lag, slot index) of the product delivering exactly 3 hours before the target."""
    m = slot_min - 180
    lag = 0 if m >= 0 else 1
    return lag, (m % 1440) // kind.step_min


@lru_cache(maxsize=256)
def arx_catalog(cal: MarketCalendar, kind: Kind, slot_min: int) -> FeatureCatalog:
    tau = slot_min - MR_LEAD_MIN
    s = slot_min // kind.step_min
    id3_c, grid_c = (ID3_H, GRID_H) if kind is Kind.HOURLY else (ID3_QH, GRID_QH)
    bld = _Builder()
    lag, k = _recent_id3(kind, slot_min)
    bld.add(id3_c, lag, k, -1, _id3_vis(cal, kind, lag, k))
    for j in (1, 2, 7):
        bld.add(id3_c, j, s, -1, _id3_vis(cal, kind, j, s))
    open_rel = -1440 + _open_min(cal, kind)
    tile = (slot_min - MR_LEAD_MIN - open_rel) // TILE_MIN - 1
    bld.add(grid_c, 0, s, tile, open_rel + TILE_MIN * (tile + 1))
    market, comp = ("DA", DA) if kind is Kind.HOURLY else ("IA", IA)
    bld.add(comp, 0, s, -1, _auction_vis(cal, market, 0))
    bld.add(DOW, 0, np.arange(7), -1, _ALWAYS)
    return bld.build("ARX", kind, slot_min, tau, cal)


@lru_cache(maxsize=256)
def lassoar_catalog(cal: MarketCalendar, kind: Kind, slot_min: int) -> FeatureCatalog:
    """Hourly and quarter-hourly ID3 from the target's delivery time a week
    earlier through the last fully observed value, auctions through the next
    day when announced, and calendar dummies."""
    tau = slot_min - MR_LEAD_MIN
    start = -7 * 1440 + slot_min
    bld = _Builder()
    omitted = []

    def id3_block(comp, k_kind):
        for j in range(7, -1, -1):
            ks = np.arange(k_kind.n_slots)
            b_rel = -j * 1440 + ks * k_kind.step_min
            vis = b_rel - cal.gate_closure_min
            ok = (b_rel >= start) & (vis <= tau)
            if ok.any():
                bld.add(comp, j, ks[ok], -1, vis[ok])

    def auction_block(comp, market, S):
        step = 1440 // S
        for j in range(7, -2, -1):
            vis = _auction_vis(cal, market, j)
            if vis > tau:
                omitted.append(f"{market} {_day_label(j)} (not yet published)")
                continue
            ks = np.arange(S)
            ok = -j * 1440 + ks * step >= start
            if ok.any():
                bld.add(comp, j, ks[ok], -1, vis)

    id3_block(ID3_H, Kind.HOURLY)
    auction_block(DA, "DA", 24)
    bld.add(DOW, 0, np.arange(7), -1, _ALWAYS)
    id3_block(ID3_QH, Kind.QUARTER_HOURLY)
    auction_block(IA, "IA", 96)
    return bld.build("Lasso.AR", kind, slot_min, tau, cal, omitted)


@lru_cache(maxsize=256)
def naive_catalog(cal: MarketCalendar, kind: Kind, slot_min: int, family: str) -> FeatureCatalog:
    """Single-input catalogs of the naive models (used for the hygiene audit)."""
    tau = slot_min - MR_LEAD_MIN
    s = slot_min // kind.step_min
    bld = _Builder()
    if family == "NaiveDA":
        market, comp = ("DA", DA) if kind is Kind.HOURLY else ("IA", IA)
        bld.add(comp, 0, s, -1, _auction_vis(cal, market, 0))
    else:
        grid_c = GRID_H if kind is Kind.HOURLY else GRID_QH
        open_rel = -1440 + _open_min(cal, kind)
        last = (slot_min - MR_LEAD_MIN - open_rel) // TILE_MIN - 1
        n = 1 if family == "NaiveMR1" else 10
        tiles = np.arange(max(last - n + 1, 0), last + 1)
        bld.add(grid_c, 0, s, tiles, open_rel + TILE_MIN * (tiles + 1))
    return bld.build(family, kind, slot_min, tau, cal)


def catalog_for(spec: ModelSpec, cal: MarketCalendar, kind: Kind, slot_min: int,
                reduced: bool = False, tau_rel: int | None = None) -> FeatureCatalog:
    if spec.is_naive:
        return naive_catalog(cal, kind, slot_min, spec.family)
    if spec.family == "ARX":
        return arx_catalog(cal, kind, slot_min)
    if spec.family == "LassoAR":
        return lassoar_catalog(cal, kind, slot_min)
    return fi_catalog(cal, kind, slot_min, tau_rel, reduced)


def catalog_size_report(cal: MarketCalendar | None = None, reduced: bool = False) -> list[dict]:
    """Full-information column counts for the smallest and largest catalogs,
    against the published figures."""
    cal = cal or MarketCalendar()
    out = []
    for (kind, slot), ref in PUBLISHED_FI_COUNTS.items():
        cat = fi_catalog(cal, kind, slot, None, reduced)
        n = len(cat)
        out.append({"kind": kind.value, "slot": fmt_hhmm(slot), "columns": n,
                    "reference": ref, "delta": n - ref,
                    "relative_delta": (n - ref) / ref, "breakdown": cat.breakdown(),
                    "omitted": list(cat.omitted)})
    return out


# ---------------------------------------------------------------------------
# forecasting


@dataclass
class Forecast:
    model: str
    product: ProductKey
    value: float
    realized: float
    tau_ms: int
    selected_lambda: float | None = None
    nonzero: int | None = None
    n_features: int = 0
    audit_violations: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass(eq=False)
class ModelOutput:
    forecast: Forecast
    fit: FitResult | None
    residuals: ResidualStore | None
    catalog: FeatureCatalog


def predict_naive_da(auctions, product: ProductKey) -> float:
    v = auctions.fallback(product)
    if v is None:
        market = "DA" if product.kind is Kind.HOURLY else "IA"
        raise DataError(f"missing {market} price for {product}")
    return float(v)


def predict_naive_mr(store, auctions, product: ProductKey, variant: str = "MR1") -> float:
    from .id_index import MR1_WINDOW, MR2_WINDOW, compute_xidy
    window = {"MR1": MR1_WINDOW, "MR2": MR2_WINDOW}[variant]
    return compute_xidy(store, auctions, product, window).value


def missing_dow_column(catalog: FeatureCatalog) -> int:
    """Index of the Sunday dummy, left out of OLS designs that carry an intercept."""
    return catalog.index_of(DOW, 0, 6)


def _transform_design(X, x0, y):
    params = fit_robust_scale(y, ScaleMode.TARGET)
    med, mad = fit_robust_scale_columns(X, ScaleMode.REGRESSOR)
    ok = mad > 0
    scale = np.where(ok, mad, 1.0)
    Xt = np.where(ok, np.arcsinh((X - med) / scale), 0.0)
    x0t = np.where(ok, np.arcsinh((x0 - med) / scale), 0.0)
    return Xt, x0t, forward(y, params), params


def fit_predict(spec: ModelSpec, panel: IndexPanel, product: ProductKey, window_days: int,
                reduced: bool = False, tau_rel: int | None = None,
                grid: LambdaGrid | None = None, solver_opts: dict | None = None) -> ModelOutput:
    """Build the design for one target, fit on the trailing window, forecast the ID3."""
    cal = panel.calendar
    kind, s, d = product.kind, product.slot_index, product.ordinal
    if not panel.has_day(d):
        raise DataError(f"{product} outside the loaded data range")
    realized = float(panel.id3(kind)[d - panel.day0, s])
    tau_ms = cal.forecast_time(d, product.slot)
    catalog = catalog_for(spec, cal, kind, product.slot, reduced, tau_rel)
    violations = catalog.audit(d).size
    warn: list[str] = []
    fit = None
    store = None
    x0 = catalog.evaluate(panel, [d])[0]

    if spec.family == "NaiveDA":
        value = float(x0[0])
    elif spec.family == "NaiveMR1":
        value = float(x0[0])
    elif spec.family == "NaiveMR2":
        value = float(panel.mr2(kind)[d - panel.day0, s])
    else:
        days = np.arange(d - window_days, d)
        X = catalog.evaluate(panel, days)
        y = panel.id3(kind)[days - panel.day0, s].astype(float)
        if not np.all(np.isfinite(y)):
            raise DataError(f"calibration target incomplete for {product}")
        if spec.family == "ARX":
            drop = missing_dow_column(catalog)
            cols = np.delete(np.arange(len(catalog)), drop)
            if spec.transform == "none":
                fit = fit_ols(X[:, cols], y)
                value = float(fit.predict(x0[cols])[0])
            else:
                Xt, x0t, yt, params = _transform_design(X, x0, y)
                fit = fit_ols(Xt[:, cols], yt)
                yhat = fit.predict(x0t[cols])[0]
                value = _back(spec, yhat, fit.residuals, params)
            store = ResidualStore(np.array(fit.residuals))
        else:
            Xt, x0t, yt, params = _transform_design(X, x0, y)
            p = len(catalog)
            pf = np.ones(p)
            fixed = None
            if spec.family == "FullInfo":
                mr = catalog.most_recent_index()
                if spec.penalty_mode == "notpen":
                    pf[mr] = 0.0
                elif spec.penalty_mode == "fixed":
                    fixed = mr
                    # pinned on the target's transformed scale
                    Xt[:, mr] = forward(X[:, mr], params)
                    x0t[mr] = float(forward(x0[mr], params))
                g = grid or LambdaGrid.exponential()
            else:
                g = grid or LambdaGrid.lasso_ar()
            fit = fit_regularized(Xt, yt, g, PenaltyConfig(spec.alpha, pf, fixed),
                                  **(solver_opts or {}))
            yhat = fit.predict(x0t)[0]
            value = _back(spec, yhat, fit.residuals, params)
            store = ResidualStore(np.array(fit.residuals))
        warn.extend(fit.warnings)

    if not np.isfinite(value):
        raise DataError(f"non-finite forecast for {spec.name} {product}")
    fc = Forecast(
        model=spec.name, product=product, value=float(value), realized=realized, tau_ms=tau_ms,
        selected_lambda=(fit.selected_lambda if fit is not None and fit.method != "ols" else None),
        nonzero=(fit.nonzero if fit is not None else None), n_features=len(catalog),
        audit_violations=int(violations), warnings=warn,
    )
    return ModelOutput(fc, fit, store, catalog)


def _back(spec: ModelSpec, yhat: float, residuals: np.ndarray, params) -> float:
    if spec.transform == "asinhC":
        return float(inverse_expected(yhat, residuals, params))
    return float(inverse_naive(yhat, params))
