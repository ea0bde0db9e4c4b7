from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from ..exceptions import ConfigError

ARCHS = (
    "AR1X", "NLINEAR", "DLINEAR", "LSTM", "VLSTM", "XLSTM", "VXLSTM",
    "PATCHTST", "LPATCHTST", "PSLSTM", "MAMBA2", "VSN_MAMBA2",
)
LINEAR_ARCHS = ("AR1X", "NLINEAR", "DLINEAR")
PATCH_ARCHS = ("PATCHTST", "LPATCHTST", "PSLSTM")
ATTENTION_ARCHS = ("PATCHTST", "LPATCHTST")

# display names used in reports
DISPLAY_NAMES = {
    "AR1X": "AR1x", "NLINEAR": "NLinear", "DLINEAR": "DLinear", "LSTM": "LSTM",
    "VLSTM": "VLSTM", "XLSTM": "xLSTM", "VXLSTM": "VxLSTM", "PATCHTST": "PatchTST",
    "LPATCHTST": "LPatchTST", "PSLSTM": "PsLSTM", "MAMBA2": "Mamba2", "VSN_MAMBA2": "VSN+Mamba2",
}


@dataclass
class ModelSpec:
    """Architecture identifier plus hyperparameters.

    ``extras`` carries architecture-specific knobs: ``p`` (AR lag order),
    ``window`` (linear lookback), ``kernel`` (DLinear trend kernel),
    ``conv_kernel``/``dt_max`` (SSM), ``blocks`` (xLSTM layout string of
    ``s``/``m``), ``denoise_dim`` (LPatchTST LSTM width).
    """

    arch: str
    hidden_dim: int = 16
    layers: int = 1
    seq_len: int = 63
    dropout: float = 0.0
    embed_dim: int = 4
    patch_len: int = 8
    stride: Optional[int] = None
    heads: int = 2
    ssm_state: int = 8
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.arch = self.arch.upper()
        if self.stride is None:
            self.stride = self.patch_len
        self.validate()

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {', '.join(ARCHS)}")
        if self.hidden_dim < 1 or self.seq_len < 1 or self.layers < 1:
            raise ConfigError("hidden_dim, seq_len and layers must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.embed_dim < 0:
            raise ConfigError("embed_dim must be >= 0")
        if self.arch in PATCH_ARCHS:
            if not 1 <= self.patch_len <= self.seq_len:
                raise ConfigError(f"patch_len {self.patch_len} must lie in [1, seq_len={self.seq_len}]")
            if self.stride < 1:
                raise ConfigError("stride must be >= 1")
        if self.arch in ATTENTION_ARCHS + ("XLSTM", "VXLSTM") and self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.arch in ("MAMBA2", "VSN_MAMBA2") and self.ssm_state < 1:
            raise ConfigError("ssm_state must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelSpec":
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
