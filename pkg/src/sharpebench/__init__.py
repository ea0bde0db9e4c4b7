"""Sharpe-ratio-trained sequence models for volatility-targeted futures portfolios."""

__version__ = "0.1.0"
