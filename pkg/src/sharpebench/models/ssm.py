"""Static-HiPPO state-space block in the Mamba2 layout."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from scipy.linalg import expm, solve
from torch import nn

from .layers import linear, uniform_fan_in_


def hippo_legs_matrix(n_state: int) -> np.ndarray:
    """HiPPO-LegS transition: ``-sqrt(2n+1) sqrt(2k+1)`` below the diagonal, ``-(n+1)`` on it."""
    if n_state < 1:
        raise ValueError("n_state must be >= 1")
    idx = np.arange(n_state)
    scale = np.sqrt(2 * idx + 1)
    A = -np.tril(np.outer(scale, scale), k=-1)
    A[idx, idx] = -(idx + 1.0)
    return A


def discretize_zoh(A: np.ndarray, dt: float):
    """Zero-order hold: ``A_bar = exp(dt A)``, ``M = A^{-1}(A_bar - I)`` so that ``B_bar = M B``."""
    A_bar = expm(dt * A)
    M = solve(A, A_bar - np.eye(A.shape[0]))
    return A_bar, M


def ssm_scan(u: torch.Tensor, A_bar: torch.Tensor, B_bar: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """Per-channel linear recursion ``s_t = A_bar s_{t-1} + B_bar u_t``, ``y_t = C . s_t``.

    ``u [B, L, D]``, ``A_bar [N, N]``, ``B_bar, C [D, N]``; zero initial state.
    """
    Bsz, L, D = u.shape
    s = u.new_zeros(Bsz, D, A_bar.shape[0])
    ys = []
    for t in range(L):
        s = s @ A_bar.T + u[:, t, :, None] * B_bar
        ys.append((s * C).sum(-1))
    return torch.stack(ys, dim=1)


class SSMBlock(nn.Module):
    """Input projection, causal depthwise conv, HiPPO scan and a multiplicative gate."""

    def __init__(self, dim: int, n_state: int, dt: float, conv_kernel: int = 4):
        super().__init__()
        A_bar, M = discretize_zoh(hippo_legs_matrix(n_state), dt)
        self.register_buffer("A_bar", torch.from_numpy(A_bar))
        self.register_buffer("M", torch.from_numpy(M))
        self.in_proj = linear(dim, 2 * dim)
        self.conv_kernel = conv_kernel
        self.conv = nn.Parameter(uniform_fan_in_(torch.empty(dim, conv_kernel), conv_kernel))
        self.B = nn.Parameter(uniform_fan_in_(torch.empty(dim, n_state), n_state))
        self.C = nn.Parameter(uniform_fan_in_(torch.empty(dim, n_state), n_state))
        self.out_proj = linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u, z = self.in_proj(x).chunk(2, dim=-1)
        # causal depthwise conv: left pad with zeros
        u = F.pad(u.transpose(1, 2), (self.conv_kernel - 1, 0))
        u = F.silu(F.conv1d(u, self.conv.unsqueeze(1), groups=self.conv.shape[0]).transpose(1, 2))
        A_bar = self.A_bar.to(x.dtype)
        B_bar = self.B @ self.M.to(x.dtype).T
        y = ssm_scan(u, A_bar, B_bar, self.C)
        return self.out_proj(y * F.silu(z))


class SSMStack(nn.Module):
    def __init__(self, dim: int, n_state: int, layers: int, dt: float, conv_kernel: int = 4):
        super().__init__()
        self.norms = nn.ModuleList(nn.LayerNorm(dim) for _ in range(layers))
        self.blocks = nn.ModuleList(SSMBlock(dim, n_state, dt, conv_kernel) for _ in range(layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for norm, block in zip(self.norms, self.blocks):
            x = x + block(norm(x))
        return x
