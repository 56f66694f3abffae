"""OLS, lasso and elastic net estimation with BIC-based penalty selection.

Penalized objective, on the unnormalized residual sum of squares:

    F(beta) = sum_i (y_i - x_i'beta)^2
              + lambda * sum_j pf_j * (alpha * |beta_j| + (1 - alpha) / 2 * beta_j^2)

The coordinate update for column j minimizes F exactly in beta_j:

    beta_j = S(2 x_j'r_(j), alpha lambda pf_j) / (2 ||x_j||^2 + (1 - alpha) lambda pf_j)

where r_(j) is the residual with column j removed and S the soft threshold.
KKT residuals are reported both raw and divided by 2n (the per-observation form).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .transforms import standardize

DEFAULT_TOL = 1e-7
SATURATION_DEV_RATIO = 0.999
MAX_DF_RATIO = 0.5


@dataclass(frozen=True)
class PenaltyConfig:
    alpha: float = 1.0
    penalty_factor: np.ndarray | None = None
    fixed_offset_index: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.penalty_factor is not None:
            pf = np.asarray(self.penalty_factor, dtype=float)
            if pf.ndim != 1 or np.any(pf < 0):
                raise ValueError("penalty factors must be a nonnegative vector")
            object.__setattr__(self, "penalty_factor", pf)

    def factors(self, p: int) -> np.ndarray:
        if self.penalty_factor is None:
            return np.ones(p)
        if self.penalty_factor.size != p:
            raise ValueError(f"penalty_factor has {self.penalty_factor.size} entries, design has {p}")
        return self.penalty_factor


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    values: np.ndarray
    allow_zero: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("grid must be a nonempty vector")
        if np.any(np.diff(v) >= 0):
            raise ValueError("grid must be strictly decreasing")
        floor_ok = np.all(v >= 0) if self.allow_zero else np.all(v > 0)
        if not floor_ok:
            raise ValueError("grid values must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def exponential(cls, lo: float = -10.0, hi: float = 4.0, n: int = 100) -> "LambdaGrid":
        """{2^i} for i equidistant on [lo, hi], largest first."""
        return cls(2.0 ** np.linspace(hi, lo, n))

    @classmethod
    def lasso_ar(cls) -> "LambdaGrid":
        i = np.arange(10, 0, -1)
        return cls(10.0 ** (-(19 - i) / 6.0))

    def with_zero(self) -> "LambdaGrid":
        return LambdaGrid(np.append(self.values, 0.0), allow_zero=True)


@dataclass(eq=False)
class FitResult:
    method: str
    lambdas: np.ndarray
    bic: np.ndarray
    df: np.ndarray
    rss: np.ndarray
    selected_index: int
    beta_std: np.ndarray
    beta_transformed: np.ndarray
    intercept: float
    residuals: np.ndarray
    dropped_columns: tuple[int, ...] = ()
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    path: np.ndarray | None = None
    n_fitted: int = 0
    alpha: float = 1.0
    warnings: list[str] = field(default_factory=list)
    objective_trace: np.ndarray | None = None
    df_rule: str = "nonzero coefficients, unpenalized and fixed columns always counted"

    @property
    def selected_lambda(self) -> float:
        return float(self.lambdas[self.selected_index])

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.beta_transformed))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Prediction from the original (pre-standardization) columns."""
        return np.atleast_2d(X) @ self.beta_transformed + self.intercept

    def diagnostics(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "grid": self.lambdas.tolist(),
            "bic": [None if not np.isfinite(b) else float(b) for b in self.bic],
            "nonzero": self.df.tolist(),
            "iterations": self.iterations.tolist(),
            "converged": self.converged.tolist(),
            "n_fitted": self.n_fitted,
            "selected_index": self.selected_index,
            "selected_lambda": self.selected_lambda,
            "intercept": self.intercept,
            "dropped_columns": list(self.dropped_columns),
            "df_rule": self.df_rule,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.diagnostics(), sort_keys=True)


def bic(rss: float, n: int, df: int) -> float:
    if n <= 0:
        raise ValueError("n must be positive")
    if rss < 0:
        raise ValueError("rss must be nonnegative")
    return n * np.log(max(rss, 1e-12) / n) + df * np.log(n)


def select_lambda(bic_values) -> int:
    """Index of the minimal BIC; the first (largest lambda) wins ties.

    Non-finite entries (lambdas never fitted) are not admissible.
    """
    b = np.asarray(bic_values, dtype=float)
    ok = np.isfinite(b)
    if not ok.any():
        raise ValueError("no admissible lambda")
    return int(np.argmin(np.where(ok, b, np.inf)))


# ---------------------------------------------------------------------------
# numba kernel


@njit(cache=True)
def _objective(r, beta, lam, alpha, pf):
    pen = 0.0
    for j in range(beta.size):
        b = beta[j]
        if b != 0.0:
            pen += pf[j] * (alpha * abs(b) + 0.5 * (1.0 - alpha) * b * b)
    return np.dot(r, r) + lam * pen


@njit(cache=True)
def _sweep(X, xsq, r, beta, idx, m, lam, alpha, pf):
    n = X.shape[0]
    max_delta = 0.0
    for t in range(m):
        j = idx[t]
        if xsq[j] == 0.0:
            continue
        bj = beta[j]
        rho = 0.0
        for i in range(n):
            rho += X[i, j] * r[i]
        z = 2.0 * (rho + xsq[j] * bj)
        thr = alpha * lam * pf[j]
        if z > thr:
            num = z - thr
        elif z < -thr:
            num = z + thr
        else:
            num = 0.0
        new = num / (2.0 * xsq[j] + (1.0 - alpha) * lam * pf[j])
        d = new - bj
        if d != 0.0:
            for i in range(n):
                r[i] -= d * X[i, j]
            beta[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@njit(cache=True)
def _count_nonzero(beta, idx, m):
    c = 0
    for t in range(m):
        if beta[idx[t]] != 0.0:
            c += 1
    return c


@njit(cache=True)
def _gradient(X, r, g, mask, want):
    n, p = X.shape
    for j in range(p):
        if mask[j] == want:
            s = 0.0
            for i in range(n):
                s += X[i, j] * r[i]
            g[j] = s


@njit(cache=True)
def _cd_path(X, y, lambdas, alpha, pf, tol, max_sweeps, sat_ratio, df_cap, lam_start, trace_cap):
    n, p = X.shape
    n_lam = lambdas.size
    betas = np.zeros((n_lam, p))
    iters = np.zeros(n_lam, dtype=np.int64)
    conv = np.zeros(n_lam, dtype=np.bool_)
    trace = np.full(trace_cap, np.nan)
    n_trace = 0

    xsq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        xsq[j] = s
    beta = np.zeros(p)
    r = y.copy()
    null_dev = np.dot(y, y)
    g = np.zeros(p)
    in_set = np.zeros(p, dtype=np.bool_)
    every = np.ones(p, dtype=np.bool_)
    _gradient(X, r, g, every, True)
    idx = np.empty(p, dtype=np.int64)
    act = np.empty(p, dtype=np.int64)
    n_fit = n_lam

    for k in range(n_lam):
        lam = lambdas[k]
        lam_prev = lambdas[k - 1] if k > 0 else lam_start
        for j in range(p):
            if beta[j] != 0.0 or pf[j] == 0.0:
                in_set[j] = True
            elif 2.0 * abs(g[j]) >= alpha * pf[j] * (2.0 * lam - lam_prev):
                in_set[j] = True
        sweeps = 0
        ok = False
        over_cap = False
        while True:
            m = 0
            for j in range(p):
                if in_set[j]:
                    idx[m] = j
                    m += 1
            # cycle on the candidate set, with inner passes over its nonzeros
            while sweeps < max_sweeps:
                d = _sweep(X, xsq, r, beta, idx, m, lam, alpha, pf)
                sweeps += 1
                if n_trace < trace_cap:
                    trace[n_trace] = _objective(r, beta, lam, alpha, pf)
                    n_trace += 1
                if d <= tol:
                    ok = True
                    break
                if k > 0 and _count_nonzero(beta, idx, m) > df_cap:
                    over_cap = True
                    break
                while sweeps < max_sweeps:
                    na = 0
                    for t in range(m):
                        if beta[idx[t]] != 0.0:
                            act[na] = idx[t]
                            na += 1
                    d = _sweep(X, xsq, r, beta, act, na, lam, alpha, pf)
                    sweeps += 1
                    if n_trace < trace_cap:
                        trace[n_trace] = _objective(r, beta, lam, alpha, pf)
                        n_trace += 1
                    if d <= tol:
                        break
            if not ok or over_cap:
                break
            # KKT check on every column left out of the candidate set
            _gradient(X, r, g, in_set, False)
            added = 0
            for j in range(p):
                if not in_set[j] and 2.0 * abs(g[j]) > alpha * lam * pf[j]:
                    in_set[j] = True
                    added += 1
            if added == 0:
                break
            ok = False
        if over_cap:
            n_fit = k
            break
        _gradient(X, r, g, in_set, True)
        betas[k] = beta
        iters[k] = sweeps
        conv[k] = ok
        df = 0
        for j in range(p):
            if beta[j] != 0.0:
                df += 1
        rss = np.dot(r, r)
        if k > 0 and df > df_cap:
            n_fit = k
            break
        if df >= n - 1 or (sat_ratio > 0.0 and null_dev > 0.0 and 1.0 - rss / null_dev >= sat_ratio):
            n_fit = k + 1
            break
    return betas, iters, conv, n_fit, trace[:n_trace]


# ---------------------------------------------------------------------------
# public fitting entry points


def lambda_max(X: np.ndarray, y: np.ndarray, cfg: PenaltyConfig) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    pf = cfg.factors(X.shape[1])
    r = y.copy()
    free = pf == 0
    if free.any():
        coef, *_ = np.linalg.lstsq(X[:, free], y, rcond=None)
        r = y - X[:, free] @ coef
    if cfg.alpha == 0.0:
        return np.inf
    g = np.abs(X.T @ r)[~free]
    w = (cfg.alpha * pf[~free])
    return float(np.max(2.0 * g / w)) if g.size else 0.0


def kkt_residuals(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float,
                  cfg: PenaltyConfig, per_observation: bool = True) -> np.ndarray:
    """Per-coefficient violation of the stationarity / subgradient conditions.

    Raw form: gradient of F. With per_observation the residuals are divided by 2n,
    the gradient scale of F / (2n).
    """
    X = np.asarray(X, dtype=float)
    pf = cfg.factors(X.shape[1])
    r = y - X @ beta
    smooth = -2.0 * (X.T @ r) + (1.0 - cfg.alpha) * lam * pf * beta
    thr = cfg.alpha * lam * pf
    nz = beta != 0
    out = np.where(nz, np.abs(smooth + thr * np.sign(beta)), np.maximum(np.abs(smooth) - thr, 0.0))
    if per_observation:
        out = out / (2.0 * X.shape[0])
    return out


def _path_arrays(Xs, y, grid, cfg, tol, max_sweeps_factor, saturation, df_cap, trace_cap=0):
    p = Xs.shape[1]
    pf = cfg.factors(p)
    lam0 = lambda_max(Xs, y, cfg) if p else 0.0
    if not np.isfinite(lam0):
        lam0 = grid.values[0]
    lam_start = max(lam0, grid.values[0])
    Xf = np.asfortranarray(Xs, dtype=float)
    return _cd_path(Xf, np.ascontiguousarray(y, dtype=float), grid.values, float(cfg.alpha),
                    np.ascontiguousarray(pf), float(tol), int(max(10 * p, 10) * max_sweeps_factor),
                    float(saturation or 0.0), int(df_cap), float(lam_start), int(trace_cap))


def fit_path(X: np.ndarray, y: np.ndarray, grid: LambdaGrid, cfg: PenaltyConfig,
             tol: float = DEFAULT_TOL, saturation: float | None = SATURATION_DEV_RATIO,
             max_df_ratio: float | None = MAX_DF_RATIO,
             keep_path: bool = True, max_sweeps_factor: float = 1.0,
             trace: bool = False) -> FitResult:
    """Regularization path on a standardized design, largest lambda first.

    y is centred internally and the intercept is its mean. A fixed_offset_index
    pins that column's coefficient to exactly 1 on the scale of X: the column is
    subtracted from y and left out of the penalized fit.

    The path stops early once the fit saturates (df >= n - 1 or explained
    deviance >= `saturation`) or, past the first lambda, once the fit needs
    more than max_df_ratio * n nonzero coefficients: there n ln(rss / n) falls
    without bound as the fit interpolates and the BIC no longer measures fit.
    Lambdas beyond the stop get an infinite BIC and are never selected.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("y must match the number of rows of X")
    pf_full = cfg.factors(p)
    fixed = cfg.fixed_offset_index
    cols = np.arange(p)
    y_work = y
    if fixed is not None:
        if not 0 <= fixed < p:
            raise ValueError("fixed_offset_index out of range")
        y_work = y - X[:, fixed]
        cols = cols[cols != fixed]
    sub_cfg = PenaltyConfig(cfg.alpha, pf_full[cols])
    y_mean = float(y_work.mean())
    yc = y_work - y_mean

    df_cap = p + n if max_df_ratio is None else int(np.floor(max_df_ratio * n))
    betas, iters, conv, n_fit, obj = _path_arrays(X if fixed is None else X[:, cols], yc, grid, sub_cfg, tol,
                                                  max_sweeps_factor, saturation, df_cap,
                                                  trace_cap=100_000 if trace else 0)
    n_lam = len(grid)
    full = np.zeros((n_lam, p))
    full[:, cols] = betas
    if fixed is not None:
        full[:n_fit, fixed] = 1.0
    pinned = (pf_full == 0).copy()
    if fixed is not None:
        pinned[fixed] = True
    rss = np.full(n_lam, np.nan)
    df = np.zeros(n_lam, dtype=np.int64)
    bics = np.full(n_lam, np.inf)
    Xc = X if fixed is None else X[:, cols]
    fitted = Xc @ betas[:n_fit].T
    nz = full[:n_fit] != 0
    df[:n_fit] = nz.sum(axis=1) + (pinned[None, :] & ~nz).sum(axis=1)
    for k in range(n_fit):
        res = yc - fitted[:, k]
        rss[k] = float(res @ res)
        bics[k] = bic(rss[k], n, int(df[k]))
    sel = select_lambda(bics)
    beta = full[sel].copy()
    resid = yc - fitted[:, sel]
    msgs = []
    if not conv[:n_fit].all():
        bad = np.flatnonzero(~conv[:n_fit])
        msgs.append(f"coordinate descent hit the sweep cap at {bad.size} lambda value(s)")
    if n_fit < n_lam:
        msgs.append(f"path stopped after {n_fit} of {n_lam} lambdas (saturation or df cap)")
    if n_fit >= 1 and df[0] > df_cap:
        msgs.append(f"largest lambda already exceeds the df cap ({df[0]} > {df_cap}); sparsest fit used")
    result = FitResult(
        method="elnet" if cfg.alpha < 1 else "lasso",
        lambdas=grid.values, bic=bics, df=df, rss=rss, selected_index=sel,
        beta_std=beta, beta_transformed=beta.copy(), intercept=y_mean,
        residuals=resid, iterations=iters, converged=conv, n_fitted=int(n_fit),
        path=full if keep_path else None, alpha=cfg.alpha, warnings=msgs,
    )
    if trace:
        result.objective_trace = obj
    return result


def fit_regularized(X: np.ndarray, y: np.ndarray, grid: LambdaGrid, cfg: PenaltyConfig,
                    **opts) -> FitResult:
    """Standardize, fit the path and map coefficients back to the columns of X.

    With a fixed_offset_index the designated column of X enters with coefficient
    exactly 1; its standardized-scale coefficient equals the column's sd.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    pf = cfg.factors(p)
    fixed = cfg.fixed_offset_index
    others = np.arange(p) if fixed is None else np.delete(np.arange(p), fixed)
    offset = np.zeros(n) if fixed is None else X[:, fixed]
    Xs, std = standardize(X[:, others]) if others.size else (np.zeros((n, 0)), None)
    kept = others[std.kept] if std is not None else others
    sub_cfg = PenaltyConfig(cfg.alpha, pf[kept])
    res = fit_path(Xs, y - offset, grid, sub_cfg, **opts)

    beta_std = np.zeros(p)
    beta_std[kept] = res.beta_std
    if std is not None:
        b, icpt = std.coefficients(res.beta_std, res.intercept)
        beta = np.zeros(p)
        beta[others] = b
    else:
        beta, icpt = np.zeros(p), res.intercept
    if fixed is not None:
        beta[fixed] = 1.0
        beta_std[fixed] = float(offset.std())
        # the pinned column is always a fitted coefficient
        ok = np.isfinite(res.bic)
        res.df[ok] += 1
        res.bic[ok] += np.log(n)
    path = None
    if res.path is not None:
        path = np.zeros((len(grid), p))
        path[:, kept] = res.path
        if fixed is not None:
            path[:res.n_fitted, fixed] = beta_std[fixed]
    dropped = tuple(int(others[j]) for j in std.dropped) if std is not None else ()
    res.beta_std = beta_std
    res.beta_transformed = beta
    res.intercept = float(icpt)
    res.dropped_columns = dropped
    res.path = path
    return res


def fit_ols(X: np.ndarray, y: np.ndarray, intercept: bool = True) -> FitResult:
    """Least squares; rank deficiency falls back to the minimum-norm solution."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    A = np.column_stack([np.ones(n), X]) if intercept else X
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    msgs = []
    if rank < A.shape[1]:
        msgs.append(f"rank deficient design ({rank} < {A.shape[1]}), minimum-norm solution used")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    icpt = float(coef[0]) if intercept else 0.0
    beta = coef[1:] if intercept else coef
    resid = y - A @ coef
    rss = float(resid @ resid)
    df = int(rank)
    return FitResult(
        method="ols", lambdas=np.array([0.0]), bic=np.array([bic(rss, n, df)]),
        df=np.array([df]), rss=np.array([rss]), selected_index=0,
        beta_std=beta.copy(), beta_transformed=beta.copy(), intercept=icpt, residuals=resid,
        iterations=np.zeros(1, dtype=np.int64), converged=np.ones(1, dtype=bool),
        n_fitted=1, warnings=msgs,
    )
