"""Volatility-targeted positions, gross/net returns, turnover and breakeven costs.

Conventions: weights live on the decision date ``t``; the strategy return
``w_t * r_{t+1}`` is stored on the realization date ``t + 1``. Missing
weights count as flat (0) for turnover, so entering and leaving the book is
charged, and the book starts flat (``w_{-1} = 0``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DataValidationError
from .market_data import TRADING_DAYS, ReturnPanel, VolPanel

SIGMA_TGT = 0.10


@dataclass(frozen=True)
class SignalPanel:
    """Model outputs in ``[-1, 1]``; ``excluded`` flags burn-in dates."""

    dates: pd.DatetimeIndex
    tickers: List[str]
    yhat: np.ndarray
    burn_in: int = 0
    excluded: Optional[np.ndarray] = None

    def __post_init__(self):
        yhat = np.array(self.yhat, dtype=float)
        if np.any(np.abs(yhat[np.isfinite(yhat)]) > 1.0):
            raise DataValidationError("signals must lie in [-1, 1]")
        yhat.setflags(write=False)
        object.__setattr__(self, "yhat", yhat)
        excluded = self.excluded
        if excluded is None:
            excluded = np.zeros(len(self.dates), dtype=bool)
            excluded[: self.burn_in] = True
        excluded = np.array(excluded, dtype=bool)
        excluded.setflags(write=False)
        object.__setattr__(self, "excluded", excluded)

    @classmethod
    def constant(cls, dates, tickers, value: float = 1.0) -> "SignalPanel":
        return cls(dates, list(tickers), np.full((len(dates), len(tickers)), float(value)))


@dataclass(frozen=True)
class WeightPanel:
    dates: pd.DatetimeIndex
    tickers: List[str]
    w: np.ndarray
    sigma_tgt: float = SIGMA_TGT


@dataclass(frozen=True)
class StrategyReturns:
    dates: pd.DatetimeIndex
    tickers: List[str]
    per_asset: np.ndarray  # [date, ticker], realization-date aligned
    portfolio: np.ndarray  # [date]
    active: np.ndarray  # K per realization date
    net: Optional[np.ndarray] = None
    per_asset_net: Optional[np.ndarray] = None
    costs: Optional[np.ndarray] = None


def _values(x, attr):
    return np.asarray(getattr(x, attr, x), dtype=float)


def position_weights(signals: Union[SignalPanel, np.ndarray], vol: Union[VolPanel, np.ndarray],
                     sigma_tgt: float = SIGMA_TGT) -> WeightPanel:
    """``w = yhat * sigma_tgt / (sigma_daily * sqrt(252))``; missing where either input is."""
    if not sigma_tgt > 0:
        raise ConfigError("sigma_tgt must be > 0")
    yhat = _values(signals, "yhat")
    sigma = _values(vol, "sigma")
    if yhat.shape != sigma.shape:
        raise DataValidationError(f"signal shape {yhat.shape} does not match vol shape {sigma.shape}")
    w = yhat * (sigma_tgt / (sigma * math.sqrt(TRADING_DAYS)))
    dates = getattr(signals, "dates", getattr(vol, "dates", None))
    tickers = getattr(signals, "tickers", getattr(vol, "tickers", None))
    return WeightPanel(dates, tickers, w, sigma_tgt)


def strategy_returns(weights: Union[WeightPanel, np.ndarray], returns: Union[ReturnPanel, np.ndarray]) -> StrategyReturns:
    """Per-asset ``R_{t+1} = w_t r_{t+1}`` and their equal-weight average over active assets."""
    w = _values(weights, "w")
    r = _values(returns, "r")
    if w.shape != r.shape:
        raise DataValidationError(f"weight shape {w.shape} does not match return shape {r.shape}")
    per_asset = np.full_like(r, np.nan)
    per_asset[1:] = w[:-1] * r[1:]
    defined = np.isfinite(per_asset)
    active = defined.sum(axis=1)
    total = np.where(defined, per_asset, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        portfolio = np.where(active > 0, total / np.maximum(active, 1), np.nan)
    return StrategyReturns(getattr(returns, "dates", None), getattr(returns, "tickers", None),
                           per_asset, portfolio, active)


def weight_changes(w: np.ndarray) -> np.ndarray:
    """``|w_t - w_{t-1}|`` per cell with missing treated as flat and ``w_{-1} = 0``."""
    w0 = np.nan_to_num(np.asarray(w, dtype=float), nan=0.0)
    prev = np.vstack([np.zeros((1, w0.shape[1])), w0[:-1]])
    return np.abs(w0 - prev)


def _cost_vector(costs, n: int) -> np.ndarray:
    c = np.broadcast_to(np.asarray(costs, dtype=float), (n,)).astype(float)
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ConfigError("transaction costs must be finite and >= 0")
    return c


def realized_costs(weights, costs) -> np.ndarray:
    """Per-asset cost ``c_k |dw_{t,k}|`` moved to the realization date ``t + 1``."""
    dw = weight_changes(_values(weights, "w"))
    c = _cost_vector(costs, dw.shape[1])
    out = np.zeros_like(dw)
    out[1:] = dw[:-1] * c
    return out


def net_returns(gross: StrategyReturns, weights, costs) -> StrategyReturns:
    """``R_net = R_port - (1/K) sum_k c_k |w_{t,k} - w_{t-1,k}|``.

    Also fills ``per_asset_net = R_k - c_k |dw_k|`` (flat cells with a cost
    count as a zero gross return).
    """
    cost = realized_costs(weights, costs)
    k = np.maximum(gross.active, 1)
    net = gross.portfolio - cost.sum(axis=1) / k
    charged = cost > 0
    pa = np.where(np.isfinite(gross.per_asset), gross.per_asset, np.where(charged, 0.0, np.nan))
    per_asset_net = pa - cost
    return StrategyReturns(gross.dates, gross.tickers, gross.per_asset, gross.portfolio, gross.active,
                           net, per_asset_net, _cost_vector(costs, cost.shape[1]))


@dataclass(frozen=True)
class Turnover:
    daily: np.ndarray
    annualized: float
    xgmv: float


def turnover(weights, mask: Optional[np.ndarray] = None) -> Turnover:
    """Daily ``sum_k |dw|``, its annualized mean, and annualized turnover over mean gross exposure.

    ``mask`` selects the decision dates that enter the averages (default:
    dates where any weight is defined).
    """
    w = _values(weights, "w")
    daily = weight_changes(w).sum(axis=1)
    if mask is None:
        mask = np.isfinite(w).any(axis=1)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Turnover(daily, float("nan"), float("nan"))
    gross = np.nan_to_num(np.abs(w), nan=0.0).sum(axis=1)[mask].mean()
    annual = float(daily[mask].mean() * TRADING_DAYS)
    xgmv = annual / float(gross) if gross > 0 else float("nan")
    return Turnover(daily, annual, xgmv)


@dataclass(frozen=True)
class Breakeven:
    per_asset: Dict[str, float]
    portfolio: float


def breakeven_cost(gross: StrategyReturns, weights, mask: Optional[np.ndarray] = None) -> Breakeven:
    """Constant cost per unit turnover at which cumulative gross PnL nets to zero.

    Per asset: ``c*_k = sum_t R_{t,k} / sum_t |dw_{t-1,k}|``. Portfolio: the
    uniform ``c`` zeroing the summed portfolio net return. ``mask`` selects
    realization dates. Zero turnover gives NaN.
    """
    unit = realized_costs(weights, 1.0)
    if mask is None:
        mask = np.ones(unit.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    R = np.nan_to_num(gross.per_asset, nan=0.0)[mask]
    tau = unit[mask]
    tickers = gross.tickers or [str(i) for i in range(R.shape[1])]
    per_asset = {}
    for i, name in enumerate(tickers):
        den = tau[:, i].sum()
        per_asset[name] = float(R[:, i].sum() / den) if den > 0 else float("nan")
    k = np.maximum(gross.active[mask], 1)
    port = gross.portfolio[mask]
    ok = np.isfinite(port)
    den = (tau.sum(axis=1) / k)[ok].sum()
    port_c = float(port[ok].sum() / den) if den > 0 else float("nan")
    return Breakeven(per_asset, port_c)


def load_costs(path, tickers: Sequence[str], default_bps: float = 0.0) -> np.ndarray:
    """Read ``ticker,cost_bps`` and return decimal costs aligned to ``tickers``."""
    table: Dict[str, float] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"ticker", "cost_bps"} - set(reader.fieldnames):
            raise DataValidationError("costs file needs header 'ticker,cost_bps'")
        for row in reader:
            bps = float(row["cost_bps"])
            if bps < 0:
                raise ConfigError(f"negative cost for {row['ticker']}")
            table[row["ticker"].strip()] = bps
    return np.array([table.get(t, default_bps) for t in tickers]) / 1e4


def costs_from_mapping(mapping: Mapping[str, float], tickers: Sequence[str], default_bps: float = 0.0) -> np.ndarray:
    return np.array([float(mapping.get(t, default_bps)) for t in tickers]) / 1e4
