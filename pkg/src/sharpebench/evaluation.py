"""Performance, significance, tail-risk and passive-relative metrics.

Series passed to the scalar metrics are 1-D arrays of daily portfolio
returns with missing and burn-in dates already removed. Undefined values
(zero dispersion, too few observations) are reported as ``NaN``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import TRADING_DAYS, ReturnPanel, VolPanel
from .portfolio import SIGMA_TGT, SignalPanel, StrategyReturns, WeightPanel, position_weights, strategy_returns, turnover

log = logging.getLogger(__name__)

SQRT_252 = math.sqrt(TRADING_DAYS)
DEFAULT_PERIODS = ("2010-2025", "2015-2025", "2010-2015", "2015-2020", "2020-2025")
WINDOW_3M = 63

# Report keys and the column headers they correspond to in the published tables.
PERFORMANCE_COLUMNS = {
    "cagr": "CAGR", "ann_return": "Ann. Ret.", "sharpe": "SR", "t_hac": "t (HAC)", "hit_rate": "Hit",
    "turnover_ann": "Turnover", "xgmv": "xGMV", "info_ratio": "Info. Ratio",
    "t_hac_vs_passive": "t (HAC) v Passive", "corr_vs_passive": "Corr. v Passive",
}
RISK_COLUMNS = {
    "max_dd": "Max DD", "calmar": "Calmar", "worst_3m_sharpe": "Worst 3m Sharpe",
    "min_annual_sharpe": "Min Ann. Sharpe", "cvar_5": "CVaR 5%",
}


def _clean(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    return x[np.isfinite(x)]


def _degenerate(std: float, x: np.ndarray) -> bool:
    # exact zero, or rounding-level dispersion of a constant series
    return std == 0 or std <= 1e-10 * np.max(np.abs(x))


def annualized_return(returns) -> float:
    x = _clean(returns)
    return float(x.mean() * TRADING_DAYS) if x.size else float("nan")


def cagr(returns) -> float:
    """``V_T^(252/n) - 1`` on the compounded wealth curve starting at 1."""
    x = _clean(returns)
    if not x.size:
        return float("nan")
    v = float(np.prod(1.0 + x))
    if v <= 0:
        warnings.warn("compounded value <= 0; CAGR floored at -1", RuntimeWarning, stacklevel=2)
        return -1.0
    return v ** (TRADING_DAYS / x.size) - 1.0


def sharpe_ratio(returns) -> float:
    """Annualized ``mean / std`` with the sample (n - 1) standard deviation."""
    x = _clean(returns)
    if x.size < 2:
        return float("nan")
    sd = x.std(ddof=1)
    if _degenerate(sd, x):
        return float("nan")
    return float(x.mean() / sd * SQRT_252)


def newey_west_lags(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def long_run_variance(x: np.ndarray, lags: int) -> float:
    """Bartlett-kernel estimate ``g0 + 2 sum_j (1 - j/(L+1)) g_j`` with 1/n autocovariances."""
    e = x - x.mean()
    n = e.size
    s = e @ e / n
    for j in range(1, lags + 1):
        s += 2.0 * (1.0 - j / (lags + 1.0)) * (e[j:] @ e[:-j]) / n
    return float(s)


def hac_tstat(series, lags="auto") -> float:
    """Newey-West t-statistic of the mean; ``lags=0`` gives ``mean / (sd_pop / sqrt(n))``."""
    x = _clean(series)
    n = x.size
    L = newey_west_lags(n) if lags == "auto" else int(lags)
    if n <= L + 1 or n < 2:
        return float("nan")
    s = long_run_variance(x, L)
    if not s > 0 or _degenerate(math.sqrt(s), x):
        return float("nan")
    return float(x.mean() / math.sqrt(s / n))


def plain_tstat(series) -> float:
    return hac_tstat(series, lags=0)


def hit_rate(weights, asset_returns, mask: Optional[np.ndarray] = None) -> float:
    """Pooled fraction of ``w_{t,k} r_{t+1,k} > 0`` over cells with both nonzero.

    ``mask`` selects decision dates ``t``.
    """
    w = np.asarray(getattr(weights, "w", weights), dtype=float)[:-1]
    r = np.asarray(getattr(asset_returns, "r", asset_returns), dtype=float)[1:]
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)[:-1]
        w, r = w[keep], r[keep]
    ok = np.isfinite(w) & np.isfinite(r) & (w != 0) & (r != 0)
    if not ok.any():
        return float("nan")
    return float(np.mean((w[ok] * r[ok]) > 0))


def info_ratio_and_corr(strategy, passive) -> Tuple[float, float, float]:
    """``(IR, t_hac of the difference, Pearson corr)``; inputs must be aligned."""
    s = np.asarray(strategy, dtype=float).reshape(-1)
    p = np.asarray(passive, dtype=float).reshape(-1)
    if s.shape != p.shape:
        raise ValueError("strategy and passive series must be aligned")
    ok = np.isfinite(s) & np.isfinite(p)
    s, p = s[ok], p[ok]
    if s.size < 2:
        return float("nan"), float("nan"), float("nan")
    d = s - p
    sd = d.std(ddof=1)
    if _degenerate(sd, np.concatenate([s, p])):
        if d.size and np.any(d != 0):
            warnings.warn("strategy minus passive has zero variance; IR undefined", RuntimeWarning, stacklevel=2)
        ir, t_rel = float("nan"), float("nan")
    else:
        ir, t_rel = float(d.mean() / sd * SQRT_252), hac_tstat(d)
    ss, sp = s.std(), p.std()
    corr = float(np.corrcoef(s, p)[0, 1]) if ss > 0 and sp > 0 else float("nan")
    return ir, t_rel, corr


def wealth_curve(returns) -> np.ndarray:
    """Compounded value with ``V_0 = 1`` prepended."""
    return np.concatenate([[1.0], np.cumprod(1.0 + _clean(returns))])


def max_drawdown(returns) -> float:
    v = wealth_curve(returns)
    return float(np.min(v / np.maximum.accumulate(v) - 1.0))


def calmar(returns) -> float:
    dd = max_drawdown(returns)
    if dd == 0:
        return float("nan")
    return cagr(returns) / abs(dd)


def cvar(returns, level: float = 0.05) -> float:
    """Mean of the worst ``floor(level n)`` returns, as a positive loss."""
    x = _clean(returns)
    k = int(math.floor(level * x.size + 1e-9))
    if k < 1:
        return float("nan")
    return float(-np.sort(x)[:k].mean())


def rolling_sharpes(returns, window: int = WINDOW_3M) -> np.ndarray:
    x = _clean(returns)
    if x.size < window:
        return np.array([])
    win = sliding_window_view(x, window)
    mean, sd = win.mean(axis=1), win.std(axis=1, ddof=1)
    scale = np.max(np.abs(win), axis=1)
    out = np.full(len(win), np.nan)
    ok = (sd > 0) & (sd > 1e-10 * scale)
    out[ok] = mean[ok] / sd[ok] * SQRT_252
    return out


def parse_period(label: str) -> Tuple[pd.Timestamp, pd.Timestamp]:
    """``"2010-2015"`` -> ``[2010-01-01, 2015-01-01)``."""
    a, b = label.split("-")
    return pd.Timestamp(int(a), 1, 1), pd.Timestamp(int(b), 1, 1)


def rolling_and_period_sharpes(returns, dates, periods: Sequence[str] = DEFAULT_PERIODS,
                               min_year_obs: int = 21):
    """``(worst_3m, min_annual, per_period, per_year)`` for a dated series."""
    x = np.asarray(returns, dtype=float).reshape(-1)
    dates = pd.DatetimeIndex(dates)
    ok = np.isfinite(x)
    x, dates = x[ok], dates[ok]
    rs = rolling_sharpes(x)
    worst = float(np.nanmin(rs)) if rs.size and np.isfinite(rs).any() else float("nan")
    per_year: Dict[str, float] = {}
    year_ok = []
    for year in sorted(set(dates.year)):
        sel = dates.year == year
        per_year[str(year)] = sharpe_ratio(x[sel])
        if sel.sum() >= min_year_obs and np.isfinite(per_year[str(year)]):
            year_ok.append(per_year[str(year)])
    min_annual = float(min(year_ok)) if year_ok else float("nan")
    per_period: Dict[str, float] = {}
    for label in periods:
        lo, hi = parse_period(label)
        per_period[label] = sharpe_ratio(x[(dates >= lo) & (dates < hi)])
    return worst, min_annual, per_period, per_year


@dataclass
class PassiveBenchmark:
    returns: np.ndarray  # portfolio series on realization dates
    weights: WeightPanel
    gross: StrategyReturns


def passive_benchmark(vol: VolPanel, returns: ReturnPanel, sigma_tgt: float = SIGMA_TGT) -> PassiveBenchmark:
    """Constant full-long signal through the same volatility-targeting pipeline."""
    signals = SignalPanel.constant(returns.dates, returns.tickers, 1.0)
    signals = SignalPanel(signals.dates, signals.tickers,
                          np.where(np.isfinite(np.asarray(vol.sigma)), signals.yhat, np.nan))
    w = position_weights(signals, vol, sigma_tgt)
    gross = strategy_returns(w, returns)
    return PassiveBenchmark(gross.portfolio, w, gross)


@dataclass
class MetricsReport:
    cagr: float
    ann_return: float
    sharpe: float
    t_hac: float
    hit_rate: float
    turnover_ann: float
    xgmv: float
    info_ratio: float
    t_hac_vs_passive: float
    corr_vs_passive: float
    max_dd: float
    calmar: float
    worst_3m_sharpe: float
    min_annual_sharpe: float
    cvar_5: float
    per_period: Dict[str, float] = field(default_factory=dict)
    per_year: Dict[str, float] = field(default_factory=dict)
    n_obs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> Dict[str, float]:
        d = {k: v for k, v in self.to_dict().items() if not isinstance(v, dict)}
        d.update({f"sharpe_{k}": v for k, v in self.per_period.items()})
        d.update({f"sharpe_{k}": v for k, v in self.per_year.items()})
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def evaluation_mask(portfolio: np.ndarray, excluded_decision: Optional[np.ndarray] = None) -> np.ndarray:
    """Realization dates that enter metrics: defined and not following an excluded decision date."""
    mask = np.isfinite(portfolio)
    if excluded_decision is not None:
        ex = np.asarray(excluded_decision, dtype=bool)
        mask[1:] &= ~ex[:-1]
        mask[0] = False
    return mask


def evaluate(series: np.ndarray, dates, weights: Optional[np.ndarray] = None,
             asset_returns: Optional[np.ndarray] = None, passive: Optional[np.ndarray] = None,
             mask: Optional[np.ndarray] = None, periods: Sequence[str] = DEFAULT_PERIODS) -> MetricsReport:
    """Full metric bundle for a realization-dated portfolio series.

    ``mask`` selects realization dates; weights are evaluated on the matching
    decision dates (one day earlier).
    """
    series = np.asarray(series, dtype=float)
    if mask is None:
        mask = np.isfinite(series)
    mask = np.asarray(mask, dtype=bool) & np.isfinite(series)
    x = series[mask]
    dates = pd.DatetimeIndex(dates)
    worst, min_ann, per_period, per_year = rolling_and_period_sharpes(x, dates[mask], periods)
    decision = np.zeros_like(mask)
    decision[:-1] = mask[1:]
    if weights is not None:
        to = turnover(weights, decision)
        tv, xg = to.annualized, to.xgmv
        hr = hit_rate(weights, asset_returns, decision) if asset_returns is not None else float("nan")
    else:
        tv = xg = hr = float("nan")
    if passive is not None:
        p = np.asarray(passive, dtype=float)
        both = mask & np.isfinite(p)
        ir, t_rel, corr = info_ratio_and_corr(series[both], p[both])
    else:
        ir = t_rel = corr = float("nan")
    return MetricsReport(
        cagr=cagr(x), ann_return=annualized_return(x), sharpe=sharpe_ratio(x), t_hac=hac_tstat(x),
        hit_rate=hr, turnover_ann=tv, xgmv=xg, info_ratio=ir, t_hac_vs_passive=t_rel, corr_vs_passive=corr,
        max_dd=max_drawdown(x), calmar=calmar(x), worst_3m_sharpe=worst, min_annual_sharpe=min_ann,
        cvar_5=cvar(x), per_period=per_period, per_year=per_year, n_obs=int(x.size),
    )
