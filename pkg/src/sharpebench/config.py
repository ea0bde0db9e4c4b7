"""YAML run configuration: data source, models, folds, seeds, costs and output.

Schema (every key except ``models`` is optional)::

    data:
      source: synthetic            # synthetic | csv
      csv: prices.csv              # long date,ticker,close (source: csv)
      groups: groups.csv           # optional ticker,group
      synthetic: {n_assets: 4, n_days: 5000, signal_kind: ar1, signal_strength: 0.3, rng_seed: 0}
      features: {span: 60, min_obs: 21}
    models:
      - {name: AR1x, arch: AR1X, seq_len: 63, train: {lr: 0.01}}
    folds: {retrain_every: 5, initial_train_years: 10, val_fraction: 0.1}
    seeds: {preset: reduced}       # or {n_seeds: 10, top_S: 5}
    training: {lr: 0.001, batch_size: 64, max_epochs: 300, patience: 20, clip_norm: 1.0}
    sigma_tgt: 0.10
    costs: {file: costs.csv, default_bps: 0.0}
    output: store
    periods: [2010-2025, 2015-2025, 2010-2015, 2015-2020, 2020-2025]
    grid: {axes: {lr: [0.001, 0.01], hidden_dim: [8, 16]}, cap: 100}

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import copy
import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from .evaluation import DEFAULT_PERIODS, parse_period
from .exceptions import ConfigError
from .market_data import DEFAULT_MIN_OBS, DEFAULT_SPAN, SyntheticConfig
from .models.spec import ARCHS, DISPLAY_NAMES, ModelSpec
from .portfolio import SIGMA_TGT
from .training import SEED_PRESETS, TrainConfig

TOP_LEVEL_KEYS = {"data", "models", "folds", "seeds", "training", "sigma_tgt", "costs", "output", "periods", "grid", "_variant"}
SPEC_FIELDS = {f.name for f in dataclasses.fields(ModelSpec)} - {"arch"}
TRAIN_FIELDS = {"lr", "batch_size", "max_epochs", "patience", "clip_norm", "burn_in_rule", "window_stride", "betas"}
DEFAULT_GRID_CAP = 100


@dataclass
class ModelEntry:
    name: str
    spec: ModelSpec
    train: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunConfig:
    raw: Dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)
    text: Optional[str] = None  # verbatim YAML when loaded from a file

    # -- views ---------------------------------------------------------------

    @property
    def data(self) -> Dict[str, Any]:
        return self.raw.get("data", {"source": "synthetic"})

    @property
    def source(self) -> str:
        return self.data.get("source", "synthetic")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output(self) -> Path:
        return self.resolve(self.raw.get("output", "store"))

    @property
    def sigma_tgt(self) -> float:
        return float(self.raw.get("sigma_tgt", SIGMA_TGT))

    @property
    def periods(self) -> List[str]:
        return [str(p) for p in self.raw.get("periods", DEFAULT_PERIODS)]

    @property
    def folds(self) -> Dict[str, Any]:
        d = {"retrain_every": 5, "initial_train_years": 10, "val_fraction": 0.10}
        d.update(self.raw.get("folds", {}) or {})
        return d

    @property
    def feature_args(self) -> Dict[str, Any]:
        d = {"span": DEFAULT_SPAN, "min_obs": DEFAULT_MIN_OBS}
        d.update(self.data.get("features", {}) or {})
        return d

    def synthetic(self) -> SyntheticConfig:
        kw = dict(self.data.get("synthetic", {}) or {})
        if "regimes" in kw:
            kw["regimes"] = [tuple(r) for r in kw["regimes"]]
        if "base_vol" in kw:
            kw["base_vol"] = tuple(kw["base_vol"])
        return SyntheticConfig(**kw)

    def seed_protocol(self) -> tuple:
        s = self.raw.get("seeds", {"preset": "reduced"}) or {}
        if "preset" in s:
            return SEED_PRESETS[s["preset"]]
        return int(s["n_seeds"]), int(s["top_S"])

    def models(self) -> List[ModelEntry]:
        out = []
        for m in self.raw["models"]:
            m = dict(m)
            arch = str(m.pop("arch", m.get("name", ""))).upper()
            name = str(m.pop("name", DISPLAY_NAMES.get(arch, arch)))
            train = dict(m.pop("train", {}) or {})
            spec = ModelSpec(arch, **m)
            out.append(ModelEntry(name, spec, train))
        return out

    def train_config(self, entry: Optional[ModelEntry] = None) -> TrainConfig:
        n, top = self.seed_protocol()
        kw = dict(self.raw.get("training", {}) or {})
        if entry is not None:
            kw.update(entry.train)
        if "betas" in kw:
            kw["betas"] = tuple(kw["betas"])
        if "clip_norm" in kw:
            kw["clip_norm"] = float(kw["clip_norm"])
        return TrainConfig(seeds=tuple(range(n)), top_S=top, sigma_tgt=self.sigma_tgt,
                           val_fraction=float(self.folds["val_fraction"]), **kw)

    # -- validation ----------------------------------------------------------

    def validate(self) -> "RunConfig":
        raw = self.raw
        unknown = set(raw) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv":
            if "csv" not in self.data:
                raise ConfigError("data.csv is required when data.source is 'csv'")
            self._require_file(self.data["csv"], "data.csv")
            if self.data.get("groups"):
                self._require_file(self.data["groups"], "data.groups")
        else:
            try:
                self.synthetic().validate()
            except TypeError as exc:
                raise ConfigError(f"bad data.synthetic: {exc}") from exc
        if not raw.get("models"):
            raise ConfigError("at least one model is required")
        names = []
        for m in raw["models"]:
            if not isinstance(m, Mapping):
                raise ConfigError(f"model entries must be mappings, got {m!r}")
            arch = str(m.get("arch", m.get("name", ""))).upper()
            if arch not in ARCHS:
                raise ConfigError(f"unknown model {arch!r}; supported: {', '.join(ARCHS)}")
            bad = set(m) - SPEC_FIELDS - {"name", "arch", "train"}
            if bad:
                raise ConfigError(f"unknown fields for model {arch}: {sorted(bad)}")
            bad = set(m.get("train", {}) or {}) - TRAIN_FIELDS
            if bad:
                raise ConfigError(f"unknown train fields for model {arch}: {sorted(bad)}")
        s = raw.get("seeds", {}) or {}
        if "preset" in s and s["preset"] not in SEED_PRESETS:
            raise ConfigError(f"unknown seed preset {s['preset']!r}; choose from {sorted(SEED_PRESETS)}")
        if s and "preset" not in s and not {"n_seeds", "top_S"} <= set(s):
            raise ConfigError("seeds needs either 'preset' or both 'n_seeds' and 'top_S'")
        bad = set(raw.get("training", {}) or {}) - TRAIN_FIELDS
        if bad:
            raise ConfigError(f"unknown training fields: {sorted(bad)}")
        for entry in self.models():
            names.append(entry.name)
            self.train_config(entry).validate()
        if len(set(names)) != len(names):
            raise ConfigError(f"model names must be unique: {names}")
        if "Passive" in names:
            raise ConfigError("'Passive' is reserved for the benchmark row")
        if not self.sigma_tgt > 0:
            raise ConfigError("sigma_tgt must be > 0")
        costs = raw.get("costs", {}) or {}
        if costs.get("file"):
            self._require_file(costs["file"], "costs.file")
        if float(costs.get("default_bps", 0.0)) < 0:
            raise ConfigError("costs.default_bps must be >= 0")
        for p in self.periods:
            try:
                lo, hi = parse_period(p)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad period {p!r}; expected 'YYYY-YYYY'") from exc
            if hi <= lo:
                raise ConfigError(f"empty period {p!r}")
        grid = raw.get("grid", {}) or {}
        for axis in (grid.get("axes", {}) or {}):
            if axis not in SPEC_FIELDS | TRAIN_FIELDS:
                raise ConfigError(f"unknown grid axis {axis!r}")
        return self

    def _require_file(self, p, what: str) -> None:
        if not self.resolve(p).is_file():
            raise ConfigError(f"{what}: file not found: {self.resolve(p)}")

    def to_yaml(self) -> str:
        return self.text if self.text is not None else yaml.safe_dump(self.raw, sort_keys=True)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return RunConfig(raw, path.resolve().parent, text).validate()


def from_dict(raw: Mapping, base_dir=None) -> RunConfig:
    return RunConfig(copy.deepcopy(dict(raw)), Path(base_dir) if base_dir else Path.cwd()).validate()


# ---------------------------------------------------------------------------
# grid expansion


def grid_size(config: RunConfig) -> int:
    axes = (config.raw.get("grid", {}) or {}).get("axes", {}) or {}
    n = 1
    for values in axes.values():
        n *= len(values)
    return n


def expand_grid(config: RunConfig, cap: Optional[int] = None) -> List[RunConfig]:
    """Cartesian product of the grid axes, each applied to every model.

    Spec axes (``hidden_dim``, ``seq_len``, ...) set model fields; training
    axes (``lr``, ``batch_size``, ...) set per-model train overrides. An empty
    grid gives the base config alone.
    """
    grid = config.raw.get("grid", {}) or {}
    axes = grid.get("axes", {}) or {}
    cap = int(grid.get("cap", DEFAULT_GRID_CAP)) if cap is None else cap
    n = grid_size(config)
    if n > cap:
        raise ConfigError(f"grid has {n} variants, over the cap of {cap}")
    if not axes:
        return [config]
    names = list(axes)
    variants = []
    for combo in itertools.product(*(axes[a] for a in names)):
        raw = copy.deepcopy(config.raw)
        raw.pop("grid", None)
        for m in raw["models"]:
            for axis, value in zip(names, combo):
                if axis in SPEC_FIELDS:
                    m[axis] = value
                else:
                    m.setdefault("train", {})[axis] = value
        raw["_variant"] = dict(zip(names, combo))
        variants.append(RunConfig(raw, config.base_dir))
    return variants


def variant_label(config: RunConfig) -> str:
    v = config.raw.get("_variant", {})
    return ",".join(f"{k}={v[k]}" for k in v) or "base"
