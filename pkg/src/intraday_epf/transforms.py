"""Median/MAD normalization, asinh variance stabilization and standardization."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

Z75 = 0.674489750196082   # 75% quantile of the standard normal


class ScaleMode(str, Enum):
    TARGET = "Target"
    REGRESSOR = "Regressor"


class DegenerateSeriesError(ValueError):
    """MAD of the series is zero, so it cannot be normalized."""


@dataclass(frozen=True)
class RobustScaleParams:
    median: float
    mad_adj: float
    z75: float = Z75

    def to_dict(self) -> dict:
        return asdict(self)


def _mad(values: np.ndarray, center: float, exclude_center: bool) -> float:
    dev = np.abs(values - center)
    if exclude_center:
        dev = dev[values != center]
    if dev.size == 0:
        return 0.0
    return float(np.median(dev))


def fit_robust_scale(series, mode: ScaleMode | str = ScaleMode.TARGET) -> RobustScaleParams:
    """Sample median and MAD/z75 of a calibration series.

    In Regressor mode the MAD ignores observations equal to the median, which
    keeps dummy-like columns two-valued after scaling.
    """
    mode = ScaleMode(mode)
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two observations")
    med = float(np.median(x))
    mad = _mad(x, med, exclude_center=mode is ScaleMode.REGRESSOR)
    if mad == 0.0:
        raise DegenerateSeriesError("MAD is zero (constant series)")
    return RobustScaleParams(med, mad / Z75)


def fit_robust_scale_columns(X: np.ndarray, mode: ScaleMode | str = ScaleMode.REGRESSOR):
    """Column-wise medians and adjusted MADs; degenerate columns get mad_adj = 0."""
    mode = ScaleMode(mode)
    X = np.asarray(X, dtype=float)
    med = np.median(X, axis=0)
    dev = np.abs(X - med)
    if mode is ScaleMode.REGRESSOR:
        # median over the entries that differ from the column median; NaN sorts last
        dev = np.sort(np.where(X == med, np.nan, dev), axis=0)
        m = np.count_nonzero(~np.isnan(dev), axis=0)
        lo = np.maximum((m - 1) // 2, 0)
        hi = np.maximum(m // 2, 0)
        cols = np.arange(X.shape[1])
        mad = np.where(m > 0, 0.5 * (dev[lo, cols] + dev[hi, cols]), 0.0)
    else:
        mad = np.median(dev, axis=0)
    return med, mad / Z75


def forward(value, params: RobustScaleParams):
    """asinh((P - median) / mad_adj)."""
    return np.arcsinh((np.asarray(value, dtype=float) - params.median) / params.mad_adj)


def inverse_naive(y_hat, params: RobustScaleParams):
    return np.sinh(np.asarray(y_hat, dtype=float)) * params.mad_adj + params.median


def inverse_expected(y_hat, residuals, params: RobustScaleParams):
    """Mean of sinh(y_hat + e) over the in-sample residuals, rescaled to price."""
    res = np.asarray(residuals, dtype=float)
    if res.size == 0:
        raise ValueError("empty residual store")
    y = np.asarray(y_hat, dtype=float)
    vals = np.sinh(y[..., None] + res)
    return vals.mean(axis=-1) * params.mad_adj + params.median


@dataclass(frozen=True, eq=False)
class ResidualStore:
    residuals: np.ndarray

    def __post_init__(self):
        self.residuals.setflags(write=False)

    def __len__(self) -> int:
        return len(self.residuals)


@dataclass(frozen=True, eq=False)
class Standardization:
    """Column means / population sds of retained columns and the dropped ones."""

    mean: np.ndarray
    scale: np.ndarray
    kept: np.ndarray
    dropped: tuple[int, ...]
    n_columns: int
    dropped_values: tuple[float, ...] = ()

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X[:, self.kept] - self.mean) / self.scale

    def invert(self, Xs: np.ndarray) -> np.ndarray:
        """Back to the original columns; dropped columns are restored from their constant."""
        Xs = np.atleast_2d(Xs)
        out = np.empty((Xs.shape[0], self.n_columns))
        out[:, self.kept] = Xs * self.scale + self.mean
        for j, c in zip(self.dropped, self.dropped_values):
            out[:, j] = c
        return out

    def coefficients(self, beta_std: np.ndarray, y_mean: float):
        """Rescale standardized coefficients: (beta on original columns, intercept)."""
        beta = np.zeros(self.n_columns)
        beta[self.kept] = beta_std / self.scale
        intercept = y_mean - float(np.dot(beta_std / self.scale, self.mean))
        return beta, intercept


def standardize(columns: np.ndarray, tol: float = 0.0):
    """Center and scale to population sd 1; zero-variance columns are dropped."""
    X = np.asarray(columns, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a matrix with at least two rows")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = sd > tol * np.maximum(1.0, np.abs(mean))
    # exact constants can still yield a tiny sd from rounding
    keep &= np.ptp(X, axis=0) > 0
    kept = np.flatnonzero(keep)
    dropped = tuple(int(j) for j in np.flatnonzero(~keep))
    std = Standardization(mean[kept], sd[kept], kept, dropped, X.shape[1],
                          tuple(float(X[0, j]) for j in dropped))
    return std.apply(X), std
