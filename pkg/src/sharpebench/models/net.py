"""Architecture dispatch: ticker embedding -> optional VSN -> backbone -> tanh head."""
from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from ..exceptions import ConfigError
from .layers import EncoderLayer, ProjectionHead, VariableSelection, linear, patchify, to_streams, from_streams
from .linear import AR1X, DLinear, NLinear
from .recurrent import SLSTMCell, XLSTMStack, make_lstm, xlstm_layout
from .spec import LINEAR_ARCHS, ModelSpec
from .ssm import SSMStack


class PatchBackbone(nn.Module):
    """Channel-independent patch model with dense per-timestep outputs.

    A patch ends at every timestep; patches whose end times differ by a
    multiple of ``stride`` form one stream, and each stream is processed
    causally (attention or sLSTM), so the output at ``t`` only sees data up
    to ``t``. Channel representations are flattened and projected to H.
    """

    def __init__(self, n_channels: int, spec: ModelSpec, mixer: str, denoise_dim: int = 0):
        super().__init__()
        H, P = spec.hidden_dim, spec.patch_len
        self.patch_len, self.stride, self.mixer = P, spec.stride, mixer
        self.denoiser = make_lstm(1, denoise_dim) if denoise_dim else None
        width = denoise_dim or 1
        self.embed = linear(P * width, H)
        if mixer == "attention":
            n_pos = -(-(spec.seq_len - P + 1) // spec.stride)
            self.pos = nn.Parameter(torch.zeros(n_pos, H))
            self.encoder = nn.ModuleList(EncoderLayer(H, spec.heads) for _ in range(spec.layers))
        else:
            self.cell = SLSTMCell(H, H)
        self.flatten = linear(n_channels * H, H)

    def channel_repr(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-flatten representation ``[B, C, N, H]`` (N = L - P + 1)."""
        B, L, C = x.shape
        if self.denoiser is not None:
            seq, _ = self.denoiser(x.transpose(1, 2).reshape(B * C, L, 1))
            seq = seq.reshape(B, C, L, -1)
            patches = seq.unfold(2, self.patch_len, 1)  # [B, C, N, D, P]
            patches = patches.transpose(-1, -2).flatten(-2)
        else:
            patches = patchify(x, self.patch_len, 1)  # [B, C, N, P]
        tokens = self.embed(patches)
        N = tokens.shape[2]
        streams, _ = to_streams(tokens.reshape(B * C, N, -1), self.stride)
        if self.mixer == "attention":
            streams = streams + self.pos[: streams.shape[1]]
            for layer in self.encoder:
                streams = layer(streams)
        else:
            streams = self.cell(streams)
        return from_streams(streams, self.stride, N).reshape(B, C, N, -1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, C = x.shape
        rep = self.channel_repr(x)
        out = self.flatten(rep.permute(0, 2, 1, 3).flatten(2))  # [B, N, H]
        return torch.cat([out.new_zeros(B, self.patch_len - 1, out.shape[-1]), out], dim=1)


class SignalNet(nn.Module):
    def __init__(self, spec: ModelSpec, n_features: int, n_tickers: int):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.n_features, self.n_tickers = n_features, n_tickers
        E, H = spec.embed_dim, spec.hidden_dim
        self.embedding = nn.Embedding(n_tickers, E) if E > 0 else None
        if self.embedding is not None:
            nn.init.uniform_(self.embedding.weight, -1.0, 1.0)
        c_in = n_features + E
        arch, x = spec.arch, spec.extras
        self.vsn = None
        if arch in ("VLSTM", "VXLSTM"):
            self.vsn = VariableSelection(c_in, H, "embed")
        elif arch == "VSN_MAMBA2":
            self.vsn = VariableSelection(c_in, H, "mask")
        d = self.vsn.out_dim if self.vsn is not None else c_in

        if arch == "AR1X":
            self.backbone = AR1X(d, x.get("p", 1))
        elif arch == "NLINEAR":
            self.backbone = NLinear(d, x.get("window", 21))
        elif arch == "DLINEAR":
            self.backbone = DLinear(d, x.get("window", 21), x.get("kernel", 25))
        elif arch in ("LSTM", "VLSTM"):
            self.backbone = make_lstm(d, H, spec.layers)
        elif arch in ("XLSTM", "VXLSTM"):
            layout = x.get("blocks") or xlstm_layout(spec.layers, "s" if arch == "XLSTM" else "m")
            proj = linear(d, H) if arch == "XLSTM" else nn.Identity()
            self.backbone = nn.Sequential(proj, XLSTMStack(H, layout, spec.heads))
        elif arch in ("MAMBA2", "VSN_MAMBA2"):
            dt = x.get("dt_max", 0.4) / 2.0
            self.backbone = nn.Sequential(
                linear(d, H), SSMStack(H, spec.ssm_state, spec.layers, dt, x.get("conv_kernel", 4))
            )
        elif arch == "PATCHTST":
            self.backbone = PatchBackbone(d, spec, "attention")
        elif arch == "LPATCHTST":
            self.backbone = PatchBackbone(d, spec, "attention", denoise_dim=x.get("denoise_dim", 4))
        elif arch == "PSLSTM":
            self.backbone = PatchBackbone(d, spec, "slstm")
        else:  # pragma: no cover - guarded by ModelSpec.validate
            raise ConfigError(arch)
        out_dim = self.backbone.out_dim if arch in LINEAR_ARCHS else H
        self.dropout = nn.Dropout(spec.dropout)
        self.head = ProjectionHead(out_dim)

    @property
    def internal_burn_in(self) -> int:
        if self.spec.arch in ("PATCHTST", "LPATCHTST", "PSLSTM"):
            return self.spec.patch_len - 1
        return 0

    def embed_tickers(self, x: torch.Tensor, ticker_ids: torch.Tensor) -> torch.Tensor:
        if self.embedding is None:
            return x
        if ticker_ids.min() < 0 or ticker_ids.max() >= self.n_tickers:
            raise IndexError(f"ticker id out of range [0, {self.n_tickers})")
        emb = self.embedding(ticker_ids)[:, None, :].expand(-1, x.shape[1], -1)
        return torch.cat([x, emb], dim=-1)

    def hidden(self, x: torch.Tensor, ticker_ids: torch.Tensor) -> torch.Tensor:
        z = self.embed_tickers(x, ticker_ids)
        if self.vsn is not None:
            z, _ = self.vsn(z)
        if self.spec.arch in ("LSTM", "VLSTM"):
            z, _ = self.backbone(z)
        else:
            z = self.backbone(z)
        return self.dropout(z)

    def forward(self, x: torch.Tensor, ticker_ids: torch.Tensor) -> torch.Tensor:
        """``x [B, L, C]``, ``ticker_ids [B]`` -> signals ``[B, L]`` in ``[-1, 1]``."""
        if x.shape[-1] != self.n_features:
            raise ConfigError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return self.head(self.hidden(x, ticker_ids))


def build_model(spec: ModelSpec, n_features: int, n_tickers: int, seed: int = 0,
                dtype: torch.dtype = torch.float64) -> SignalNet:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = SignalNet(spec, n_features, n_tickers)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def embed_ticker(model: SignalNet, ticker_id: int) -> torch.Tensor:
    if not 0 <= ticker_id < model.n_tickers:
        raise IndexError(f"ticker id {ticker_id} out of range [0, {model.n_tickers})")
    if model.embedding is None:
        return torch.zeros(0, dtype=model.head.w_lin.dtype)
    return model.embedding.weight[ticker_id]


def model_forward(spec: ModelSpec, params, X, ticker_id, n_tickers: Optional[int] = None):
    """Functional entry point: signals for one window ``X [L, C]`` (or a batch ``[B, L, C]``).

    ``params`` is a :class:`ParamSet`; a fresh network is built from ``spec``
    and loaded, so any spec/params disagreement raises :class:`ConfigError`.
    """
    X = torch.as_tensor(X, dtype=torch.float64)
    single = X.dim() == 2
    if single:
        X = X.unsqueeze(0)
    ids = torch.as_tensor(ticker_id, dtype=torch.long).reshape(-1).expand(X.shape[0])
    if n_tickers is None:
        emb = params.arrays.get("embedding.weight")
        n_tickers = emb.shape[0] if emb is not None else int(ids.max()) + 1
    model = SignalNet(spec, X.shape[-1], n_tickers).to(torch.float64)
    params.load_into(model)
    model.eval()
    with torch.no_grad():
        out = model(X, ids)
    return out[0] if single else out
