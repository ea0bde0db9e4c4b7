"""Linear baselines emitting one feature vector per timestep."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layers import uniform_fan_in_


def trailing_windows(x: torch.Tensor, window: int, pad: str = "replicate") -> torch.Tensor:
    """``[B, L, C] -> [B, L, C, window]`` where the last entry is time ``t``.

    Times before the window start are filled with the first observation
    (``replicate``) or zeros.
    """
    xt = x.transpose(1, 2)
    if pad == "replicate":
        xt = torch.cat([xt[..., :1].expand(-1, -1, window - 1), xt], dim=-1)
    else:
        xt = F.pad(xt, (window - 1, 0))
    return xt.unfold(-1, window, 1).transpose(1, 2)


def ar1_least_squares(x: np.ndarray) -> float:
    """OLS slope of ``x_t`` on ``x_{t-1}`` (no intercept)."""
    x = np.asarray(x, dtype=float)
    prev, nxt = x[:-1], x[1:]
    return float(prev @ nxt / (prev @ prev))


class AR1X(nn.Module):
    """Per-feature autoregression: ``h_{t,i} = sum_j phi_{j,i} x_{t-j,i}``.

    The output at ``t`` is the one-step-ahead forecast built from data up to ``t``.
    """

    def __init__(self, n_in: int, p: int = 1):
        super().__init__()
        self.p = p
        self.phi = nn.Parameter(uniform_fan_in_(torch.empty(p, n_in), p))

    @property
    def out_dim(self) -> int:
        return self.phi.shape[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        win = trailing_windows(x, self.p, pad="zeros")  # [B, L, C, p], last = lag 0
        return (win.flip(-1) * self.phi.T).sum(-1)


class NLinear(nn.Module):
    """Subtract the latest observation, apply a shared temporal linear map, add it back."""

    def __init__(self, n_in: int, window: int = 21):
        super().__init__()
        self.n_in, self.window = n_in, window
        self.weight = nn.Parameter(uniform_fan_in_(torch.empty(window)))
        self.bias = nn.Parameter(torch.zeros(()))

    @property
    def out_dim(self) -> int:
        return self.n_in

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        win = trailing_windows(x, self.window)
        last = x.unsqueeze(-1)
        return (win - last) @ self.weight + self.bias + x


def moving_average(x: torch.Tensor, kernel: int) -> torch.Tensor:
    """Causal moving average over time with replicate padding."""
    return trailing_windows(x, kernel).mean(-1)


class DLinear(nn.Module):
    """Moving-average trend plus residual, each with its own temporal linear map."""

    def __init__(self, n_in: int, window: int = 21, kernel: int = 25):
        super().__init__()
        self.n_in, self.window, self.kernel = n_in, window, kernel
        self.w_trend = nn.Parameter(uniform_fan_in_(torch.empty(window)))
        self.w_season = nn.Parameter(uniform_fan_in_(torch.empty(window)))
        self.bias = nn.Parameter(torch.zeros(()))

    @property
    def out_dim(self) -> int:
        return self.n_in

    def decompose(self, x: torch.Tensor):
        trend = moving_average(x, self.kernel)
        return trend, x - trend

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        trend, season = self.decompose(x)
        return (trailing_windows(trend, self.window) @ self.w_trend
                + trailing_windows(season, self.window) @ self.w_season + self.bias)
