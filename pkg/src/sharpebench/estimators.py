"""scikit-learn style wrappers around the feature pipeline and a single-fold signal model."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataValidationError
from .market_data import (
    DEFAULT_MIN_OBS, DEFAULT_SPAN, HORIZONS, MACD_PAIRS, SIGMA_FLOOR, TARGET_CLIP,
    FeaturePanel, PricePanel, build_feature_panel,
)
from .models.spec import ModelSpec
from .portfolio import SIGMA_TGT, SignalPanel, position_weights, strategy_returns
from .evaluation import sharpe_ratio
from .training import TrainConfig, WindowData, fit_seed, predict_block, select_top


def check_price_panel(X) -> PricePanel:
    """Accept a :class:`PricePanel` or a wide ``date x ticker`` DataFrame of closes."""
    if isinstance(X, PricePanel):
        return X
    if isinstance(X, pd.DataFrame):
        if not isinstance(X.index, pd.DatetimeIndex):
            try:
                X = X.set_axis(pd.DatetimeIndex(X.index), axis=0)
            except (TypeError, ValueError) as exc:
                raise DataValidationError("price frame index must be dates") from exc
        return PricePanel(X.index, [str(c) for c in X.columns], X.to_numpy(dtype=float))
    raise DataValidationError(f"expected PricePanel or DataFrame, got {type(X).__name__}")


def check_feature_panel(X) -> FeaturePanel:
    if not isinstance(X, FeaturePanel):
        raise DataValidationError(f"expected FeaturePanel, got {type(X).__name__}")
    return X


def _date_index(dates: pd.DatetimeIndex, when, default: int) -> int:
    return default if when is None else int(dates.searchsorted(pd.Timestamp(when)))


class FeatureBuilder(BaseEstimator, TransformerMixin):
    """Prices -> :class:`FeaturePanel` (normalized returns, MACD signals, vol, targets).

    Stateless: every statistic is a trailing recursion, so ``fit`` only
    validates parameters.
    """

    def __init__(self, span: int = DEFAULT_SPAN, min_obs: int = DEFAULT_MIN_OBS,
                 sigma_floor: float = SIGMA_FLOOR, horizons: Sequence[int] = HORIZONS,
                 macd_pairs: Sequence[Tuple[int, int]] = MACD_PAIRS, clip: float = TARGET_CLIP):
        self.span = span
        self.min_obs = min_obs
        self.sigma_floor = sigma_floor
        self.horizons = horizons
        self.macd_pairs = macd_pairs
        self.clip = clip

    def fit(self, X, y=None):
        check_price_panel(X)
        if self.span < 2:
            raise ConfigError("span must be >= 2")
        self.feature_names_ = [f"ret_{h}" for h in self.horizons] + [f"macd_{s}_{l}" for s, l in self.macd_pairs]
        return self

    def transform(self, X) -> FeaturePanel:
        check_is_fitted(self, "feature_names_")
        return build_feature_panel(check_price_panel(X), self.span, self.min_obs, self.sigma_floor,
                                   self.horizons, self.macd_pairs, self.clip)


class SharpeSignalModel(BaseEstimator):
    """One architecture trained on a single chronological split, with a top-S seed ensemble.

    ``fit(panel, end=...)`` trains on dates before ``end`` (last
    ``val_fraction`` held out for early stopping); ``predict(panel, start,
    stop)`` returns ensemble signals for decision dates in ``[start, stop)``.
    """

    def __init__(self, arch: str = "LSTM", hidden_dim: int = 16, seq_len: int = 63, layers: int = 1,
                 dropout: float = 0.0, embed_dim: int = 4, patch_len: int = 8, stride: Optional[int] = None,
                 heads: int = 2, ssm_state: int = 8, lr: float = 1e-3, batch_size: int = 64,
                 max_epochs: int = 300, patience: int = 20, clip_norm: float = 1.0, n_seeds: int = 1,
                 top_S: int = 1, window_stride: Optional[int] = None, val_fraction: float = 0.10,
                 sigma_tgt: float = SIGMA_TGT):
        self.arch = arch
        self.hidden_dim = hidden_dim
        self.seq_len = seq_len
        self.layers = layers
        self.dropout = dropout
        self.embed_dim = embed_dim
        self.patch_len = patch_len
        self.stride = stride
        self.heads = heads
        self.ssm_state = ssm_state
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.clip_norm = clip_norm
        self.n_seeds = n_seeds
        self.top_S = top_S
        self.window_stride = window_stride
        self.val_fraction = val_fraction
        self.sigma_tgt = sigma_tgt

    def _spec(self) -> ModelSpec:
        return ModelSpec(self.arch, hidden_dim=self.hidden_dim, layers=self.layers, seq_len=self.seq_len,
                         dropout=self.dropout, embed_dim=self.embed_dim, patch_len=self.patch_len,
                         stride=self.stride, heads=self.heads, ssm_state=self.ssm_state)

    def _config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, clip_norm=self.clip_norm, seeds=tuple(range(self.n_seeds)),
                           top_S=self.top_S, sigma_tgt=self.sigma_tgt, window_stride=self.window_stride,
                           val_fraction=self.val_fraction)

    def fit(self, X, y=None, end=None):
        panel = check_feature_panel(X)
        spec, config = self._spec(), self._config()
        config.validate()
        data = WindowData(panel, self.sigma_tgt)
        stop = _date_index(panel.dates, end, data.n_dates)
        models, records = [], []
        for seed in config.seeds:
            model, rec = fit_seed(spec, data, 0, stop, config, seed, self.val_fraction)
            models.append(model)
            records.append(rec)
        top = select_top(records, self.top_S)
        keep = {r.seed for r in top}
        self.models_ = [m for m, r in zip(models, records) if r.seed in keep]
        self.records_ = records
        self.spec_ = spec
        self.n_tickers_ = len(panel.tickers)
        return self

    def predict(self, X, start=None, stop=None) -> SignalPanel:
        check_is_fitted(self, "models_")
        panel = check_feature_panel(X)
        if len(panel.tickers) != self.n_tickers_ or panel.n_channels != self.models_[0].n_features:
            raise DataValidationError("panel shape differs from the one used in fit")
        data = WindowData(panel, self.sigma_tgt)
        lo = _date_index(panel.dates, start, 0)
        hi = _date_index(panel.dates, stop, data.n_dates)
        sig = np.mean([predict_block(m, data, lo, hi) for m in self.models_], axis=0)
        yhat = np.full((data.n_dates, data.n_assets), np.nan)
        yhat[lo:hi] = sig
        return SignalPanel(panel.dates, panel.tickers, yhat)

    def score(self, X, y=None, start=None, stop=None) -> float:
        """Annualized Sharpe of the volatility-targeted portfolio over ``[start, stop)``."""
        panel = check_feature_panel(X)
        sig = self.predict(panel, start, stop)
        gross = strategy_returns(position_weights(sig, panel.vol, self.sigma_tgt), panel.returns)
        value = sharpe_ratio(gross.portfolio)
        return value if math.isfinite(value) else float("nan")
