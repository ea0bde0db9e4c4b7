"""Shared building blocks: projection head, variable selection, patching, attention."""
from __future__ import annotations

import math
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..exceptions import ConfigError


def uniform_fan_in_(weight: torch.Tensor, fan_in: Optional[int] = None) -> torch.Tensor:
    fan_in = fan_in or weight.shape[-1]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        return weight.uniform_(-bound, bound)


def reset_linear(layer: nn.Linear) -> nn.Linear:
    uniform_fan_in_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


def linear(n_in: int, n_out: int, bias: bool = True) -> nn.Linear:
    return reset_linear(nn.Linear(n_in, n_out, bias=bias))


def projection_head(h: torch.Tensor, w: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Bounded trading signal ``tanh(w . h + b)``."""
    return torch.tanh(h @ w + b)


class ProjectionHead(nn.Module):
    def __init__(self, hidden_dim: int):
        super().__init__()
        self.w_lin = nn.Parameter(uniform_fan_in_(torch.empty(hidden_dim)))
        self.b_lin = nn.Parameter(torch.zeros(()))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return projection_head(h, self.w_lin, self.b_lin)


class VariableSelection(nn.Module):
    """Per-variable nonlinear embeddings mixed by softmax importance weights.

    ``mode="embed"`` returns the weighted sum of the embeddings (width H);
    ``mode="mask"`` rescales the raw inputs by the weights (width C).
    """

    def __init__(self, n_vars: int, hidden_dim: int, mode: str = "embed"):
        super().__init__()
        if mode not in ("embed", "mask"):
            raise ConfigError(f"unknown VSN mode {mode!r}")
        self.n_vars, self.hidden_dim, self.mode = n_vars, hidden_dim, mode
        self.w1 = nn.Parameter(uniform_fan_in_(torch.empty(n_vars, hidden_dim), 1))
        self.b1 = nn.Parameter(torch.zeros(n_vars, hidden_dim))
        self.w2 = nn.Parameter(uniform_fan_in_(torch.empty(n_vars, hidden_dim, hidden_dim)))
        self.b2 = nn.Parameter(torch.zeros(n_vars, hidden_dim))
        self.gate = linear(n_vars * hidden_dim, n_vars)

    @property
    def out_dim(self) -> int:
        return self.hidden_dim if self.mode == "embed" else self.n_vars

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """``[..., C] -> [..., C, H]``"""
        hidden = F.elu(x.unsqueeze(-1) * self.w1 + self.b1)
        return torch.einsum("...ch,chk->...ck", hidden, self.w2) + self.b2

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        emb = self.embed(x)
        weights = torch.softmax(self.gate(emb.flatten(-2)), dim=-1)
        if self.mode == "mask":
            return weights * x, weights
        return (weights.unsqueeze(-1) * emb).sum(-2), weights


def patch_count(seq_len: int, patch_len: int, stride: int) -> int:
    if patch_len > seq_len:
        raise ConfigError(f"patch_len {patch_len} exceeds sequence length {seq_len}")
    return (seq_len - patch_len) // stride + 1


def patchify(seq: torch.Tensor, patch_len: int, stride: int) -> torch.Tensor:
    """Channel-independent patches: ``[B, L, C] -> [B, C, N, patch_len]``."""
    patch_count(seq.shape[1], patch_len, stride)
    return seq.transpose(1, 2).unfold(-1, patch_len, stride)


def to_streams(x: torch.Tensor, stride: int) -> Tuple[torch.Tensor, int]:
    """Split ``[B, N, D]`` into ``stride`` interleaved streams ``[B * stride, ceil(N/stride), D]``.

    Stream ``o`` holds items ``o, o + stride, ...``; right padding keeps
    every stream causal.
    """
    B, N, D = x.shape
    n = -(-N // stride)
    pad = n * stride - N
    if pad:
        x = torch.cat([x, x.new_zeros(B, pad, D)], dim=1)
    return x.view(B, n, stride, D).transpose(1, 2).reshape(B * stride, n, D), N


def from_streams(x: torch.Tensor, stride: int, length: int) -> torch.Tensor:
    Bs, n, D = x.shape
    B = Bs // stride
    return x.view(B, stride, n, D).transpose(1, 2).reshape(B, n * stride, D)[:, :length]


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              mask: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """``softmax(q k^T / sqrt(d_k)) v`` with an optional boolean keep-mask."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


def causal_mask(n: int, device=None) -> torch.Tensor:
    return torch.ones(n, n, dtype=torch.bool, device=device).tril()


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = linear(dim, 3 * dim)
        self.out = linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, N, D = x.shape
        q, k, v = self.qkv(x).view(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        y, _ = attention(q, k, v, causal_mask(N, x.device))
        return self.out(y.transpose(1, 2).reshape(B, N, D))


class EncoderLayer(nn.Module):
    """Pre-norm transformer layer with causal attention over the token axis."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(linear(dim, ff_mult * dim), nn.GELU(), linear(ff_mult * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))
