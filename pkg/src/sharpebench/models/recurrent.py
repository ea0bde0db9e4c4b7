"""LSTM and xLSTM (sLSTM / mLSTM) recurrences."""
from __future__ import annotations

from typing import Tuple

import torch
from torch import nn

from .layers import linear, uniform_fan_in_

State = Tuple[torch.Tensor, ...]


def make_lstm(n_in: int, hidden: int, layers: int = 1) -> nn.LSTM:
    """``nn.LSTM`` with fan-in uniform weights, zero biases and forget bias +1."""
    lstm = nn.LSTM(n_in, hidden, num_layers=layers, batch_first=True)
    for name, p in lstm.named_parameters():
        if name.startswith("weight"):
            uniform_fan_in_(p, p.shape[-1])
        else:
            nn.init.zeros_(p)
            if name.startswith("bias_ih"):
                with torch.no_grad():
                    p[hidden:2 * hidden] = 1.0  # gate order i, f, g, o
    return lstm


def lstm_forward(x: torch.Tensor, lstm: nn.LSTM) -> torch.Tensor:
    """Hidden sequence ``[B, L, H]`` from zero initial state."""
    out, _ = lstm(x)
    return out


# ---------------------------------------------------------------------------
# sLSTM


def slstm_update(c, n, m, z_pre, i_pre, f_pre, o_pre) -> State:
    """One stabilized exponential-gating step.

    The log-domain stabilizer ``m`` is carried as a constant for
    differentiation: ``c / n`` does not depend on it.
    """
    m_prev = m.detach()
    m_new = torch.maximum(f_pre.detach() + m_prev, i_pre.detach())
    f_gate = torch.exp(f_pre + m_prev - m_new)
    i_gate = torch.exp(i_pre - m_new)
    c = f_gate * c + i_gate * torch.tanh(z_pre)
    n = f_gate * n + i_gate
    h = torch.sigmoid(o_pre) * (c / n)
    return c, n, m_new, h


class SLSTMCell(nn.Module):
    def __init__(self, n_in: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.w = linear(n_in, 4 * hidden)
        self.r = nn.Parameter(uniform_fan_in_(torch.empty(hidden, 4 * hidden), hidden))

    def init_state(self, batch: int, like: torch.Tensor) -> State:
        zeros = like.new_zeros(batch, self.hidden)
        return zeros, zeros, zeros, zeros  # c, n, m, h

    def step(self, x_t: torch.Tensor, state: State) -> State:
        c, n, m, h = state
        pre = self.w(x_t) + h @ self.r
        z_pre, i_pre, f_pre, o_pre = pre.chunk(4, dim=-1)
        return slstm_update(c, n, m, z_pre, i_pre, f_pre, o_pre)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        state = self.init_state(x.shape[0], x)
        outs = []
        for t in range(x.shape[1]):
            state = self.step(x[:, t], state)
            outs.append(state[3])
        return torch.stack(outs, dim=1)


def slstm_step(x_t: torch.Tensor, state: State, cell: SLSTMCell) -> State:
    return cell.step(x_t, state)


# ---------------------------------------------------------------------------
# mLSTM


def mlstm_update(C, n, m, q, k, v, i_pre, f_pre) -> State:
    """Gated outer-product memory update and query retrieval.

    Shapes: ``C [..., d, d]``, ``n, q, k, v [..., d]``, gates/stabilizer ``[...]``.
    Returns ``(C, n, m, h_tilde)``. Unlike sLSTM the stabilizer stays in
    the graph: the ``exp(-m)`` floor of the normalizer depends on it.
    """
    m_new = torch.maximum(f_pre + m, i_pre)
    f_gate = torch.exp(f_pre + m - m_new)
    i_gate = torch.exp(i_pre - m_new)
    C = f_gate[..., None, None] * C + i_gate[..., None, None] * (v.unsqueeze(-1) * k.unsqueeze(-2))
    n = f_gate[..., None] * n + i_gate[..., None] * k
    denom = torch.maximum((n * q).sum(-1).abs(), torch.exp(-m_new))
    h = (C @ q.unsqueeze(-1)).squeeze(-1) / denom[..., None]
    return C, n, m_new, h


class MLSTMCell(nn.Module):
    """Matrix memory per head; gates depend on the current input only."""

    def __init__(self, n_in: int, hidden: int, heads: int = 1):
        super().__init__()
        self.hidden, self.heads, self.head_dim = hidden, heads, hidden // heads
        self.qkv = linear(n_in, 3 * hidden)
        self.gates = linear(n_in, 2 * heads)
        self.o = linear(n_in, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, _ = x.shape
        Hh, d = self.heads, self.head_dim
        q, k, v = self.qkv(x).view(B, L, 3, Hh, d).unbind(2)
        k = k / d ** 0.5
        i_pre, f_pre = self.gates(x).view(B, L, 2, Hh).unbind(2)
        o = torch.sigmoid(self.o(x))
        C = x.new_zeros(B, Hh, d, d)
        n = x.new_zeros(B, Hh, d)
        m = x.new_zeros(B, Hh)
        outs = []
        for t in range(L):
            C, n, m, h = mlstm_update(C, n, m, q[:, t], k[:, t], v[:, t], i_pre[:, t], f_pre[:, t])
            outs.append(h.reshape(B, -1))
        return o * torch.stack(outs, dim=1)


def mlstm_step(x_t: torch.Tensor, state: State, cell: MLSTMCell) -> State:
    """Single mLSTM step on ``x_t [B, D]`` with state ``(C, n, m)``; returns ``(C, n, m, h)``."""
    B = x_t.shape[0]
    Hh, d = cell.heads, cell.head_dim
    q, k, v = cell.qkv(x_t).view(B, 3, Hh, d).unbind(1)
    i_pre, f_pre = cell.gates(x_t).view(B, 2, Hh).unbind(1)
    C, n, m, h = mlstm_update(*state, q, k / d ** 0.5, v, i_pre, f_pre)
    return C, n, m, torch.sigmoid(cell.o(x_t)) * h.reshape(B, -1)


class XLSTMStack(nn.Module):
    """Pre-norm residual blocks plus a final LayerNorm; ``layout`` is a string of ``s``/``m`` cell types."""

    def __init__(self, dim: int, layout: str, heads: int = 1):
        super().__init__()
        self.layout = layout
        self.norms = nn.ModuleList(nn.LayerNorm(dim) for _ in layout)
        self.cells = nn.ModuleList(
            SLSTMCell(dim, dim) if kind == "s" else MLSTMCell(dim, dim, heads) for kind in layout
        )
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for norm, cell in zip(self.norms, self.cells):
            x = x + cell(norm(x))
        return self.out_norm(x)


def xlstm_layout(layers: int, start: str = "s") -> str:
    if layers == 1:
        return start
    other = "m" if start == "s" else "s"
    return "".join(start if i % 2 == 0 else other for i in range(layers))
