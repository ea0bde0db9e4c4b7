"""ParamSet container and a deterministic binary checkpoint format.

Layout: ``b"SBCK"``, uint32 format version, uint64 header length, UTF-8 JSON
header (spec, fingerprint, array table), then the raw little-endian array
bytes in header order. No timestamps, so identical parameters always give
identical files.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from ..exceptions import ConfigError
from .spec import ModelSpec

MAGIC = b"SBCK"
FORMAT_VERSION = 1


@dataclass
class ParamSet:
    """Named float arrays plus the spec that fixes their shapes."""

    spec: ModelSpec
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, meta: Optional[dict] = None) -> "ParamSet":
        arrays = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(model.spec, arrays, dict(meta or {}))

    def validate(self) -> None:
        for name, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise ConfigError(f"parameter {name!r} contains non-finite values")

    def load_into(self, model) -> None:
        if model.spec.fingerprint() != self.spec.fingerprint():
            raise ConfigError(
                f"spec fingerprint mismatch: model {model.spec.fingerprint()} vs params {self.spec.fingerprint()}"
            )
        own = model.state_dict()
        if set(own) != set(self.arrays):
            missing = sorted(set(own) ^ set(self.arrays))
            raise ConfigError(f"parameter names differ: {missing[:5]}")
        for name, ref in own.items():
            if tuple(ref.shape) != self.arrays[name].shape:
                raise ConfigError(f"shape mismatch for {name}: {tuple(ref.shape)} vs {self.arrays[name].shape}")
        model.load_state_dict({k: torch.from_numpy(np.array(v)).to(own[k].dtype) for k, v in self.arrays.items()})

    def equals(self, other: "ParamSet") -> bool:
        if self.spec.fingerprint() != other.spec.fingerprint() or list(self.arrays) != list(other.arrays):
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays.values(), other.arrays.values())
        )

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0
        for name, a in self.arrays.items():
            a = np.asarray(a, order="C")  # ascontiguousarray would promote 0-d to 1-d
            a = a.astype(a.dtype.newbyteorder("<"), copy=False)
            raw = a.tobytes()
            table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                          "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = {
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "fingerprint": self.spec.fingerprint(),
            "arrays": table,
            "meta": self.meta,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamSet":
        if data[:4] != MAGIC:
            raise ConfigError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<IQ", data[4:16])
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        if spec.fingerprint() != header["fingerprint"]:
            raise ConfigError("checkpoint fingerprint does not match its spec")
        body = data[16 + hlen:]
        arrays = {}
        for entry in header["arrays"]:
            raw = body[entry["offset"]: entry["offset"] + entry["nbytes"]]
            arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        return cls(spec, arrays, header.get("meta", {}))


def save_params(params: ParamSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(params.to_bytes())
    return path


def load_params(path) -> ParamSet:
    return ParamSet.from_bytes(Path(path).read_bytes())
