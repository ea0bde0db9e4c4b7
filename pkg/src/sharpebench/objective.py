"""Negative annualized Sharpe ratio over pooled batch returns."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

SQRT_252 = math.sqrt(252.0)
EPSILON = 1e-9

Array = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class PooledReturns:
    values: Array
    epsilon: float = EPSILON

    def __len__(self) -> int:
        return int(self.values.shape[0])


def pool_batch(series: Sequence[Array], epsilon: float = EPSILON) -> PooledReturns:
    """Concatenate per-sequence portfolio returns into one flat sample."""
    series = list(series)
    if not series:
        raise ValueError("empty batch")
    if any(len(s) == 0 for s in series):
        raise ValueError("every sequence must be nonempty after burn-in trimming")
    if isinstance(series[0], torch.Tensor):
        values = torch.cat([s.reshape(-1) for s in series])
    else:
        values = np.concatenate([np.asarray(s, dtype=float).reshape(-1) for s in series])
    return PooledReturns(values, epsilon)


def sharpe_loss(pooled: Union[PooledReturns, Array], epsilon: float = EPSILON):
    """``-mean / sqrt(popvar + eps) * sqrt(252)``; differentiable for torch inputs."""
    if isinstance(pooled, PooledReturns):
        values, epsilon = pooled.values, pooled.epsilon
    else:
        values = pooled
    if isinstance(values, torch.Tensor):
        mean = values.mean()
        var = ((values - mean) ** 2).mean()
        return -mean / torch.sqrt(var + epsilon) * SQRT_252
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    var = ((values - mean) ** 2).mean()
    return float(-mean / math.sqrt(var + epsilon) * SQRT_252)
