"""Price ingestion, synthetic universes and the momentum feature set.

All panels are dense ``[date, ticker]`` float arrays where ``NaN`` marks a
missing cell. Arrays are made read-only on construction.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import optimize, stats

from .exceptions import ConfigError, DataValidationError, ParseError

TRADING_DAYS = 252
HORIZONS = (1, 5, 21, 63, 126, 252)
MACD_PAIRS = ((8, 24), (16, 48), (32, 96))
DEFAULT_SPAN = 60
DEFAULT_MIN_OBS = 21
SIGMA_FLOOR = 1e-4
MACD_STD_FLOOR = 1e-8
TARGET_CLIP = 20.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PricePanel:
    dates: pd.DatetimeIndex
    tickers: List[str]
    close: np.ndarray
    groups: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "close", _frozen(self.close))
        object.__setattr__(self, "tickers", list(self.tickers))
        validate_price_panel(self)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.close)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.close, index=self.dates, columns=self.tickers)

    def slice_dates(self, end) -> "PricePanel":
        """Panel restricted to dates strictly before ``end``."""
        keep = self.dates < pd.Timestamp(end)
        return PricePanel(self.dates[keep], self.tickers, self.close[keep], dict(self.groups))


def validate_price_panel(panel: PricePanel) -> None:
    if len(panel.dates) != panel.close.shape[0] or len(panel.tickers) != panel.close.shape[1]:
        raise DataValidationError("close matrix shape does not match dates x tickers")
    if not (panel.dates.is_monotonic_increasing and panel.dates.is_unique):
        raise DataValidationError("dates must be strictly increasing")
    present = panel.close[~np.isnan(panel.close)]
    if np.any(~np.isfinite(present)) or np.any(present <= 0):
        raise DataValidationError("all present prices must be finite and > 0")


@dataclass(frozen=True)
class ReturnPanel:
    dates: pd.DatetimeIndex
    tickers: List[str]
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", _frozen(self.r))


@dataclass(frozen=True)
class VolPanel:
    dates: pd.DatetimeIndex
    tickers: List[str]
    mu: np.ndarray
    sigma: np.ndarray
    vs_factor: np.ndarray
    span: int
    min_obs: int = DEFAULT_MIN_OBS
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        for name in ("mu", "sigma", "vs_factor"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class FeaturePanel:
    dates: pd.DatetimeIndex
    tickers: List[str]
    features: np.ndarray  # [date, ticker, channel]
    target: np.ndarray  # [date, ticker]
    feature_names: List[str]
    returns: ReturnPanel
    vol: VolPanel

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "target", _frozen(self.target))

    @property
    def feature_mask(self) -> np.ndarray:
        return np.all(np.isfinite(self.features), axis=-1)

    @property
    def target_mask(self) -> np.ndarray:
        return np.isfinite(self.target)

    @property
    def n_channels(self) -> int:
        return self.features.shape[-1]


# ---------------------------------------------------------------------------
# ingestion


def _parse_date(text: str, line: int) -> pd.Timestamp:
    try:
        return pd.Timestamp(date.fromisoformat(text.strip()))
    except ValueError:
        raise ParseError(f"unparsable ISO date {text!r}", line) from None


def load_price_panel(path, format: str = "csv", groups_path=None) -> PricePanel:
    """Read a long ``date,ticker,close`` CSV into an aligned panel.

    The calendar is the union of all dates; cells a ticker does not report
    are left missing.
    """
    if format != "csv":
        raise ConfigError(f"unsupported price format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records: Dict[Tuple[pd.Timestamp, str], float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "ticker", "close"]:
            raise ParseError("header must be 'date,ticker,close'", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
            d = _parse_date(row[0], lineno)
            ticker = row[1].strip()
            if not ticker:
                raise ParseError("empty ticker", lineno)
            try:
                px = float(row[2])
            except ValueError:
                raise ParseError(f"unparsable close {row[2]!r}", lineno) from None
            if not math.isfinite(px) or px <= 0:
                raise DataValidationError(f"line {lineno}: non-positive close {px} for ({d.date()}, {ticker})")
            key = (d, ticker)
            if key in records:
                raise DataValidationError(f"duplicate (date, ticker) key ({d.date()}, {ticker}) at line {lineno}")
            records[key] = px
    if not records:
        raise DataValidationError(f"{path} contains no price rows")
    dates = pd.DatetimeIndex(sorted({d for d, _ in records}))
    tickers = sorted({t for _, t in records})
    close = np.full((len(dates), len(tickers)), np.nan)
    d_idx = {d: i for i, d in enumerate(dates)}
    t_idx = {t: j for j, t in enumerate(tickers)}
    for (d, t), px in records.items():
        close[d_idx[d], t_idx[t]] = px
    groups = load_groups(groups_path) if groups_path is not None else {}
    return PricePanel(dates, tickers, close, groups)


def load_groups(path) -> Dict[str, str]:
    df = pd.read_csv(path, dtype=str)
    if list(df.columns) != ["ticker", "group"]:
        raise ParseError("header must be 'ticker,group'", 1)
    return dict(zip(df["ticker"].str.strip(), df["group"].str.strip()))


def write_price_csv(panel: PricePanel, path) -> None:
    df = panel.to_frame().stack().rename("close").reset_index()
    df.columns = ["date", "ticker", "close"]
    df["date"] = df["date"].dt.strftime("%Y-%m-%d")
    df.to_csv(path, index=False, float_format="%.10g")


# ---------------------------------------------------------------------------
# returns and volatility


def compute_returns(panel: PricePanel) -> ReturnPanel:
    p = panel.close
    r = np.full_like(p, np.nan)
    r[1:] = (p[1:] - p[:-1]) / p[:-1]
    return ReturnPanel(panel.dates, panel.tickers, r)


def ewma_lambda(span: int) -> float:
    return 2.0 / (span + 1.0)


def _ewma_series(r: np.ndarray, lam: float, min_obs: int) -> Tuple[np.ndarray, np.ndarray]:
    """EWMA mean/variance of one series; missing returns leave the state untouched."""
    mu_out = np.full_like(r, np.nan)
    var_out = np.full_like(r, np.nan)
    idx = np.flatnonzero(np.isfinite(r))
    if len(idx) < min_obs:
        return mu_out, var_out
    obs = r[idx]
    mu = obs[0]
    for j in range(1, min_obs):
        mu = lam * obs[j] + (1.0 - lam) * mu
    var = float(np.var(obs[:min_obs], ddof=1)) if min_obs > 1 else 0.0
    mu_out[idx[min_obs - 1]] = mu
    var_out[idx[min_obs - 1]] = var
    for j in range(min_obs, len(obs)):
        mu = lam * obs[j] + (1.0 - lam) * mu
        var = lam * (obs[j] - mu) ** 2 + (1.0 - lam) * var
        mu_out[idx[j]] = mu
        var_out[idx[j]] = var
    return mu_out, var_out


def ewma_mean_var(
    returns: ReturnPanel,
    span: int = DEFAULT_SPAN,
    min_obs: int = DEFAULT_MIN_OBS,
    sigma_floor: float = SIGMA_FLOOR,
) -> VolPanel:
    """Exponentially weighted mean and volatility per ticker.

    The mean starts at the first observed return; the variance starts at the
    sample variance of the first ``min_obs`` returns. Both are reported from
    the ``min_obs``-th observation onwards.
    """
    if span < 2:
        raise ConfigError(f"EWMA span must be >= 2, got {span}")
    if min_obs < 1:
        raise ConfigError("min_obs must be >= 1")
    if sigma_floor <= 0:
        raise ConfigError("sigma_floor must be positive")
    lam = ewma_lambda(span)
    mu = np.full_like(returns.r, np.nan)
    var = np.full_like(returns.r, np.nan)
    for k in range(returns.r.shape[1]):
        mu[:, k], var[:, k] = _ewma_series(returns.r[:, k], lam, min_obs)
    sigma = np.maximum(np.sqrt(var), sigma_floor)
    return VolPanel(returns.dates, returns.tickers, mu, sigma, 1.0 / sigma, span, min_obs, sigma_floor)


# ---------------------------------------------------------------------------
# features


def horizon_returns(returns: ReturnPanel, h: int) -> np.ndarray:
    """Compounded simple return over the trailing ``h`` days (missing if any day is)."""
    r = returns.r
    out = np.full_like(r, np.nan)
    if h > r.shape[0]:
        return out
    win = sliding_window_view(1.0 + r, h, axis=0)  # [T-h+1, K, h]
    out[h - 1:] = np.prod(win, axis=-1) - 1.0
    return out


def normalized_returns(returns: ReturnPanel, vol: VolPanel, horizons: Sequence[int] = HORIZONS) -> Dict[str, np.ndarray]:
    out = {}
    for h in horizons:
        if h < 1:
            raise ConfigError(f"horizon must be positive, got {h}")
        out[f"ret_norm_{h}"] = horizon_returns(returns, h) / (vol.sigma * math.sqrt(h))
    return out


def ewma_prices(close: np.ndarray, timescale: int) -> np.ndarray:
    """EWMA of prices with smoothing ``1/timescale``, started at the first price."""
    alpha = 1.0 / timescale
    out = np.full_like(close, np.nan)
    for k in range(close.shape[1]):
        state = np.nan
        for t in range(close.shape[0]):
            p = close[t, k]
            if np.isnan(p):
                continue
            state = p if np.isnan(state) else state + alpha * (p - state)  # exact on flat prices
            out[t, k] = state
    return out


def rolling_std(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing sample std over ``window`` rows; missing unless every row is present."""
    out = np.full_like(x, np.nan)
    if window > x.shape[0]:
        return out
    win = sliding_window_view(x, window, axis=0)
    out[window - 1:] = np.std(win, axis=-1, ddof=1)
    return out


def macd_features(prices: PricePanel, pairs: Sequence[Tuple[int, int]] = MACD_PAIRS,
                  price_window: int = 63, signal_window: int = 252) -> Dict[str, np.ndarray]:
    out = {}
    price_std = np.maximum(rolling_std(prices.close, price_window), MACD_STD_FLOOR)
    for short, long_ in pairs:
        if short >= long_:
            raise ConfigError(f"MACD pair needs short < long, got ({short}, {long_})")
        macd = ewma_prices(prices.close, short) - ewma_prices(prices.close, long_)
        q = macd / price_std
        q_std = np.maximum(rolling_std(q, signal_window), MACD_STD_FLOOR)
        out[f"macd_{short}_{long_}"] = q / q_std
    return out


def build_targets(returns: ReturnPanel, vol: VolPanel, clip: float = TARGET_CLIP) -> np.ndarray:
    """Next-day return scaled by today's volatility, clipped to ``[-clip, clip]``."""
    if clip <= 0:
        raise ConfigError("target clip must be positive")
    target = np.full_like(returns.r, np.nan)
    target[:-1] = returns.r[1:] / vol.sigma[:-1]
    return np.clip(target, -clip, clip)


def build_feature_panel(
    prices: PricePanel,
    span: int = DEFAULT_SPAN,
    min_obs: int = DEFAULT_MIN_OBS,
    sigma_floor: float = SIGMA_FLOOR,
    horizons: Sequence[int] = HORIZONS,
    macd_pairs: Sequence[Tuple[int, int]] = MACD_PAIRS,
    clip: float = TARGET_CLIP,
) -> FeaturePanel:
    returns = compute_returns(prices)
    vol = ewma_mean_var(returns, span, min_obs, sigma_floor)
    slices = {**normalized_returns(returns, vol, horizons), **macd_features(prices, macd_pairs)}
    names = list(slices)
    feats = np.stack([slices[n] for n in names], axis=-1)
    feats[~np.all(np.isfinite(feats), axis=-1)] = np.nan
    target = build_targets(returns, vol, clip)
    return FeaturePanel(prices.dates, prices.tickers, feats, target, names, returns, vol)


# ---------------------------------------------------------------------------
# synthetic universe


@dataclass
class SyntheticConfig:
    n_assets: int = 4
    n_days: int = 5000
    # (persistence, drift in sigma units per day, vol-of-vol)
    regimes: List[Tuple[float, float, float]] = field(
        default_factory=lambda: [(0.99, 0.0, 0.05), (0.97, 0.0, 0.10)]
    )
    signal_strength: float = 0.0
    rng_seed: int = 0
    signal_kind: str = "ar1"  # "ar1" | "threshold"
    ar_phi: float = 0.6
    vol_persistence: float = 0.98
    base_vol: Tuple[float, float] = (0.006, 0.02)
    innovation_df: Optional[float] = 5.0
    start: str = "2000-01-03"

    def validate(self) -> None:
        if self.n_assets < 1:
            raise ConfigError("n_assets must be >= 1")
        if self.n_days < 2 * TRADING_DAYS:
            raise ConfigError(f"n_days must be >= {2 * TRADING_DAYS}")
        if not 0 <= self.signal_strength < 1:
            raise ConfigError("signal_strength must lie in [0, 1)")
        if not self.regimes:
            raise ConfigError("at least one regime is required")
        for persistence, _, vov in self.regimes:
            if not 0 <= persistence <= 1 or vov < 0:
                raise ConfigError(f"bad regime {(persistence, vov)}")
        if self.signal_kind not in ("ar1", "threshold"):
            raise ConfigError(f"unknown signal_kind {self.signal_kind!r}")
        if not -1 < self.ar_phi < 1:
            raise ConfigError("ar_phi must lie in (-1, 1)")
        if self.innovation_df is not None and self.innovation_df <= 2:
            raise ConfigError("innovation_df must exceed 2")


def threshold_level() -> float:
    """Level c with E[X^2; |X| < c] = 1/2 for standard normal X.

    Continuing moves beyond c and reversing moves inside it leaves the lag-one
    autocorrelation at zero.
    """
    f = lambda c: 2 * (stats.norm.cdf(c) - 0.5) - 2 * c * stats.norm.pdf(c) - 0.5
    return optimize.brentq(f, 0.5, 3.0, xtol=1e-14)


def _innovations(rng: np.random.Generator, df: Optional[float], size) -> np.ndarray:
    if df is None:
        return rng.standard_normal(size)
    return rng.standard_t(df, size) * math.sqrt((df - 2.0) / df)


def _simulate(config: SyntheticConfig, n_days: int, rng: np.random.Generator):
    """Returns (r [n_days-1, K], true sigma [n_days-1, K], regime ids)."""
    K, T = config.n_assets, n_days - 1
    persistence = np.array([p for p, _, _ in config.regimes])
    drift = np.array([d for _, d, _ in config.regimes])
    vov = np.array([v for _, _, v in config.regimes])
    n_reg = len(config.regimes)
    base = rng.uniform(config.base_vol[0], config.base_vol[1], size=K)

    stay = rng.random((T, K))
    jump = rng.integers(0, max(n_reg - 1, 1), size=(T, K))
    regime = np.empty((T, K), dtype=np.int64)
    regime[0] = rng.integers(0, n_reg, size=K)
    for t in range(1, T):
        prev = regime[t - 1]
        move = stay[t] >= persistence[prev]
        other = jump[t] + (jump[t] >= prev)  # uniform over the other regimes
        regime[t] = np.where(move & (n_reg > 1), other, prev)

    beta = config.vol_persistence
    eta = rng.standard_normal((T, K))
    logv = np.empty((T, K))
    logv[0] = vov[regime[0]] / math.sqrt(1 - beta ** 2) * eta[0]
    for t in range(1, T):
        logv[t] = beta * logv[t - 1] + vov[regime[t]] * eta[t]
    sigma = base * np.exp(logv)

    e = _innovations(rng, config.innovation_df if config.signal_kind == "ar1" else None, (T, K))
    s = config.signal_strength
    if config.signal_kind == "ar1":
        nu = rng.standard_normal((T, K))
        phi = config.ar_phi
        x = np.empty((T, K))
        x[0] = nu[0]
        for t in range(1, T):
            x[t] = phi * x[t - 1] + math.sqrt(1 - phi ** 2) * nu[t]
        u = s * x + math.sqrt(1 - s ** 2) * e
    else:
        c = threshold_level()
        u = np.empty((T, K))
        u[0] = e[0]
        for t in range(1, T):
            prev = u[t - 1]
            u[t] = s * prev * np.sign(np.abs(prev) - c) + math.sqrt(1 - s ** 2) * e[t]
    r = sigma * (u + drift[regime])
    return np.maximum(r, -0.9), sigma, regime


def generate_synthetic_universe(config: SyntheticConfig) -> PricePanel:
    """Regime-switching stochastic-volatility universe with a planted signal."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    r, _, regime = _simulate(config, config.n_days, rng)
    close = np.empty((config.n_days, config.n_assets))
    close[0] = 100.0
    close[1:] = 100.0 * np.cumprod(1.0 + r, axis=0)
    dates = pd.bdate_range(config.start, periods=config.n_days)
    tickers = [f"SYN{k:02d}" for k in range(config.n_assets)]
    groups = {t: "synthetic" for t in tickers}
    return PricePanel(dates, tickers, close, groups)


def oracle_sharpe(config: SyntheticConfig, n_days: int = 200_000, seed: int = 12345) -> float:
    """Monte-Carlo Sharpe of the generator's own best-response positioning.

    ``ar1``: hold ``sign(phi * r_t)``. ``threshold``: hold the sign of the
    planted continuation/reversal rule. Positions are scaled by the true
    volatility and averaged across assets like the production portfolio.
    """
    sim_cfg = SyntheticConfig(**{**config.__dict__, "rng_seed": seed})
    rng = np.random.default_rng(seed)
    r, sigma, _ = _simulate(sim_cfg, n_days, rng)
    if config.signal_kind == "ar1":
        pos = np.sign(config.ar_phi * r[:-1])
    else:
        u = r[:-1] / sigma[:-1]
        pos = np.sign(u * np.sign(np.abs(u) - threshold_level()))
    strat = pos / sigma[:-1] * r[1:]
    port = strat.mean(axis=1)
    return float(port.mean() / port.std(ddof=1) * math.sqrt(TRADING_DAYS))


def calibrate_signal_strength(config: SyntheticConfig, target_sharpe: float,
                              n_days: int = 200_000, seed: int = 12345) -> float:
    """Signal strength whose Monte-Carlo oracle Sharpe equals ``target_sharpe``."""

    def gap(s):
        cfg = SyntheticConfig(**{**config.__dict__, "signal_strength": s})
        return oracle_sharpe(cfg, n_days, seed) - target_sharpe

    if gap(0.0) >= 0:
        return 0.0
    return optimize.brentq(gap, 0.0, 0.95, xtol=1e-4)
