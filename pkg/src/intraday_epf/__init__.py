"""Forecasting the ID3 index of intraday electricity products from order-book trade data."""

from .market_data import (
    ConfigError, DataError, Kind, MarketCalendar, ProductKey, SynthConfig,
    generate_synthetic_market, load_market, write_market,
)
from .id_index import IdWindow, IndexPanel, compute_epex_id3, compute_xidy
from .models import MODEL_NAMES, ModelSpec, fit_predict
from .solver import LambdaGrid, PenaltyConfig, fit_ols, fit_path, fit_regularized

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "IdWindow", "IndexPanel", "Kind", "LambdaGrid", "MODEL_NAMES",
    "MarketCalendar", "ModelSpec", "PenaltyConfig", "ProductKey", "SynthConfig",
    "compute_epex_id3", "compute_xidy", "fit_ols", "fit_path", "fit_predict", "fit_regularized",
    "generate_synthetic_market", "load_market", "write_market",
]
