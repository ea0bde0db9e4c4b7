"""Walk-forward training: fold schedule, Sharpe-loss optimization, seed ensembles.

Date bookkeeping uses integer indices into the panel calendar. A sample
whose decision date is ``t`` consumes ``target_t`` (which embeds
``r_{t+1}``), so it is admissible for a split ending at index ``b`` only if
``t + 1 < b``.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from .exceptions import ConfigError
from .market_data import TRADING_DAYS, FeaturePanel
from .models.checkpoint import ParamSet
from .models.net import SignalNet, build_model
from .models.spec import LINEAR_ARCHS, ModelSpec
from .objective import sharpe_loss
from .portfolio import SIGMA_TGT, SignalPanel

log = logging.getLogger(__name__)

WORKERS_ENV = "SHARPEBENCH_WORKERS"
SEED_PRESETS = {"default": (50, 10), "reduced": (25, 5)}


# ---------------------------------------------------------------------------
# fold schedule


@dataclass(frozen=True)
class Fold:
    fold_id: int
    train_start: pd.Timestamp
    train_end: pd.Timestamp  # exclusive, equals test_start
    test_start: pd.Timestamp
    test_end: pd.Timestamp  # exclusive


@dataclass(frozen=True)
class FoldSchedule:
    folds: List[Fold]
    retrain_every: int = 5
    val_fraction: float = 0.10
    initial_train_years: int = 10

    def __len__(self) -> int:
        return len(self.folds)

    def index_bounds(self, dates: pd.DatetimeIndex, fold: Fold) -> Tuple[int, int, int]:
        """``(train_lo, test_lo, test_hi)`` positions in ``dates`` (hi exclusive)."""
        lo = int(dates.searchsorted(fold.train_start))
        a = int(dates.searchsorted(fold.test_start))
        b = int(dates.searchsorted(fold.test_end))
        return lo, a, b


def build_fold_schedule(dates, retrain_every: int = 5, initial_train_years: int = 10,
                        val_fraction: float = 0.10) -> FoldSchedule:
    """Expanding-window folds with test blocks of ``retrain_every`` calendar years.

    The first test block starts on January 1 of ``start_year +
    initial_train_years``; a series starting after January 15 counts its
    first full year from the next January. The last block is truncated at
    the end of the data.
    """
    dates = pd.DatetimeIndex(dates)
    if retrain_every < 1 or initial_train_years < 1:
        raise ConfigError("retrain_every and initial_train_years must be >= 1")
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    first, last = dates[0], dates[-1]
    start_year = first.year + (1 if (first.month, first.day) > (1, 15) else 0)
    test_start = pd.Timestamp(start_year + initial_train_years, 1, 1)
    if test_start > last:
        raise ConfigError(
            f"insufficient history: first test block would start {test_start.date()} after last date {last.date()}"
        )
    folds = []
    while test_start <= last:
        test_end = pd.Timestamp(test_start.year + retrain_every, 1, 1)
        folds.append(Fold(len(folds), first, test_start, test_start, test_end))
        test_start = test_end
    return FoldSchedule(folds, retrain_every, val_fraction, initial_train_years)


def split_validation(n_train: int, val_fraction: float = 0.10) -> Tuple[int, int]:
    """Chronological split of ``n_train`` dates into ``(n_core, n_val)``; ``n_val = max(1, floor)``."""
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    if n_train < 2:
        raise ConfigError("need at least 2 training dates")
    n_val = max(1, int(math.floor(n_train * val_fraction)))
    return n_train - n_val, n_val


# ---------------------------------------------------------------------------
# configuration and records


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    clip_norm: float = 1.0
    seeds: Sequence[int] = tuple(range(50))
    top_S: int = 10
    burn_in_rule: Optional[str] = None  # fixed_21 | quarter_seq_len | None (by architecture)
    sigma_tgt: float = SIGMA_TGT
    betas: Tuple[float, float] = (0.9, 0.999)
    window_stride: Optional[int] = None  # spacing of window end dates per epoch; None -> seq_len
    val_fraction: float = 0.10

    def validate(self) -> None:
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.lr > 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("lr, batch_size and max_epochs must be positive")
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0 (use inf to disable)")
        if not 1 <= self.top_S <= len(self.seeds):
            raise ConfigError(f"top_S={self.top_S} must lie in [1, {len(self.seeds)}]")
        if self.burn_in_rule not in (None, "fixed_21", "quarter_seq_len"):
            raise ConfigError(f"unknown burn_in_rule {self.burn_in_rule!r}")

    @classmethod
    def preset(cls, name: str, **kw) -> "TrainConfig":
        n, s = SEED_PRESETS[name]
        return cls(seeds=tuple(range(n)), top_S=s, **kw)


def burn_in_length(spec: ModelSpec, rule: Optional[str] = None) -> int:
    """Leading positions of each training window excluded from the loss."""
    if rule is None:
        rule = "fixed_21" if spec.arch in LINEAR_ARCHS else "quarter_seq_len"
    return 21 if rule == "fixed_21" else spec.seq_len // 4


def oos_burn_in(spec: ModelSpec) -> int:
    """Leading test dates of every fold excluded from reported metrics."""
    return max(21, spec.seq_len // 4)


@dataclass
class RunRecord:
    seed: int
    fold_id: int
    val_loss: float
    params: Optional[ParamSet] = None
    signals: Optional[np.ndarray] = None  # [n_test_dates, K]
    test_slice: Tuple[int, int] = (0, 0)
    epochs: int = 0
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    failed: bool = False
    error: str = ""
    wall_time: float = 0.0
    checkpoint: str = ""
    train_loss_before: float = math.nan
    train_loss_after: float = math.nan


class EarlyStopping:
    """Tracks the best validation loss; ``step`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self.best_state: Optional[Dict[str, torch.Tensor]] = None

    def step(self, epoch: int, loss: float, model: Optional[torch.nn.Module] = None) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            if model is not None:
                self.best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def restore(self, model: torch.nn.Module) -> None:
        if self.best_state is not None:
            model.load_state_dict(self.best_state)


# ---------------------------------------------------------------------------
# window data


def run_length(ok: np.ndarray) -> np.ndarray:
    """Length of the run of consecutive True values ending at each date, per column."""
    out = np.zeros(ok.shape, dtype=np.int64)
    run = np.zeros(ok.shape[1], dtype=np.int64)
    for t in range(ok.shape[0]):
        run = np.where(ok[t], run + 1, 0)
        out[t] = run
    return out


class WindowData:
    """Feature/target tensors with helpers to gather fully present windows."""

    def __init__(self, panel: FeaturePanel, sigma_tgt: float = SIGMA_TGT, dtype=torch.float64):
        self.panel = panel
        self.dates = panel.dates
        self.n_dates, self.n_assets, self.n_features = panel.features.shape
        self.X = torch.from_numpy(np.nan_to_num(panel.features, nan=0.0)).to(dtype)
        self.Y = torch.from_numpy(np.nan_to_num(panel.target, nan=0.0)).to(dtype)
        self.feat_ok = panel.feature_mask
        self.tgt_ok = panel.target_mask
        self.feat_run = run_length(self.feat_ok)
        self.both_run = run_length(self.feat_ok & self.tgt_ok)
        self.scale = sigma_tgt / math.sqrt(TRADING_DAYS)

    def gather(self, ends: np.ndarray, assets: np.ndarray, L: int):
        offs = torch.arange(-L + 1, 1)
        t_idx = torch.as_tensor(ends)[:, None] + offs
        k_idx = torch.as_tensor(assets)[:, None].expand_as(t_idx)
        return self.X[t_idx, k_idx], self.Y[t_idx, k_idx], torch.as_tensor(assets, dtype=torch.long)

    def train_windows(self, L: int, boundary: int) -> Tuple[np.ndarray, np.ndarray]:
        """Windows with present features and targets whose last target realizes before ``boundary``."""
        ok = self.both_run[: max(boundary - 1, 0)] >= L
        t, k = np.nonzero(ok)
        return t, k

    def predict_windows(self, L: int, lo: int, hi: int) -> Tuple[np.ndarray, np.ndarray]:
        ok = self.feat_run[lo:hi] >= L
        t, k = np.nonzero(ok)
        return t + lo, k


def predict_last(model: SignalNet, data: WindowData, ends: np.ndarray, assets: np.ndarray,
                 L: int, chunk: int = 2048) -> np.ndarray:
    """Signal at the final position of each window."""
    out = np.empty(len(ends))
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for i in range(0, len(ends), chunk):
            X, _, ids = data.gather(ends[i:i + chunk], assets[i:i + chunk], L)
            out[i:i + chunk] = model(X, ids)[:, -1].numpy()
    model.train(was_training)
    return out


def validation_loss(model: SignalNet, data: WindowData, lo: int, hi: int, L: int) -> float:
    """Sharpe loss of the daily portfolio formed from last-step signals on decision dates ``[lo, hi)``."""
    t, k = data.predict_windows(L, lo, hi)
    keep = data.tgt_ok[t, k]
    t, k = t[keep], k[keep]
    if len(t) < 2:
        return math.nan
    yhat = predict_last(model, data, t, k, L)
    strat = yhat * data.Y.numpy()[t, k] * data.scale
    total = np.bincount(t - lo, weights=strat, minlength=hi - lo)
    count = np.bincount(t - lo, minlength=hi - lo)
    port = total[count > 0] / count[count > 0]
    if len(port) < 2:
        return math.nan
    return sharpe_loss(port)


def batch_loss(model: SignalNet, X, Y, ids, burn_in: int, scale: float) -> torch.Tensor:
    yhat = model(X, ids)
    return sharpe_loss((yhat[:, burn_in:] * Y[:, burn_in:] * scale).reshape(-1))


# ---------------------------------------------------------------------------
# single run


def full_loss(model: SignalNet, data: WindowData, ends, assets, L: int, burn: int) -> float:
    """Pooled training loss over a fixed set of windows, in evaluation mode."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        X, Y, ids = data.gather(ends, assets, L)
        value = batch_loss(model, X, Y, ids, burn, data.scale).item()
    model.train(was_training)
    return value


def fit_seed(spec: ModelSpec, data: WindowData, lo: int, test_lo: int, config: TrainConfig, seed: int,
             val_fraction: float = 0.10, fold_id: int = 0):
    """Optimize one seed on dates ``[lo, test_lo)``; returns ``(model, record)``.

    The last ``val_fraction`` of those dates is the validation tail. The
    returned model carries the best-validation parameters.
    """
    config.validate()
    t0 = time.perf_counter()
    L = spec.seq_len
    burn = burn_in_length(spec, config.burn_in_rule)
    if burn >= L:
        raise ConfigError(f"burn-in {burn} leaves no loss positions for seq_len {L}")
    n_core, _ = split_validation(test_lo - lo, val_fraction)
    val_lo = lo + n_core

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = build_model(spec, data.n_features, data.n_assets, seed=seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas)
    stopper = EarlyStopping(config.patience)
    rec = RunRecord(seed=seed, fold_id=fold_id, val_loss=math.inf)

    ends, assets = data.train_windows(L, val_lo)
    ends, assets = ends[ends >= lo + L - 1], assets[ends >= lo + L - 1]
    if len(ends) == 0:
        raise ConfigError(f"fold {fold_id}: no fully present training windows of length {L}")
    stride = config.window_stride or L
    probe = np.linspace(0, len(ends) - 1, min(len(ends), 512)).astype(int)
    rec.train_loss_before = full_loss(model, data, ends[probe], assets[probe], L, burn)

    for epoch in range(config.max_epochs):
        model.train()
        offset = int(rng.integers(stride))
        sel = np.nonzero((ends - offset) % stride == 0)[0] if stride > 1 else np.arange(len(ends))
        if len(sel) == 0:
            sel = np.arange(len(ends))
        sel = rng.permutation(sel)
        losses = []
        for i in range(0, len(sel), config.batch_size):
            b = sel[i:i + config.batch_size]
            X, Y, ids = data.gather(ends[b], assets[b], L)
            loss = batch_loss(model, X, Y, ids, burn, data.scale)
            if not torch.isfinite(loss):
                rec.failed, rec.error = True, f"non-finite training loss at epoch {epoch}"
                break
            opt.zero_grad()
            loss.backward()
            if not math.isinf(config.clip_norm):
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            losses.append(loss.item())
        if rec.failed:
            break
        rec.train_losses.append(float(np.mean(losses)))
        vl = validation_loss(model, data, val_lo, test_lo - 1, L)
        rec.val_losses.append(vl)
        rec.epochs = epoch + 1
        if not math.isfinite(vl):
            rec.failed, rec.error = True, f"non-finite validation loss at epoch {epoch}"
            break
        if stopper.step(epoch, vl, model):
            break

    if not rec.failed:
        stopper.restore(model)
        rec.val_loss = stopper.best
        rec.train_loss_after = full_loss(model, data, ends[probe], assets[probe], L, burn)
    rec.wall_time = time.perf_counter() - t0
    return model, rec


def predict_block(model: SignalNet, data: WindowData, lo: int, hi: int) -> np.ndarray:
    """Last-step signals for decision dates ``[lo, hi)``; NaN where the window is incomplete."""
    L = model.spec.seq_len
    t, k = data.predict_windows(L, lo, hi)
    sig = np.full((hi - lo, data.n_assets), np.nan)
    if len(t):
        sig[t - lo, k] = predict_last(model, data, t, k, L)
    return sig


def train_one(spec: ModelSpec, data: WindowData, fold: Fold, schedule: FoldSchedule,
              config: TrainConfig, seed: int, keep_params: bool = True) -> RunRecord:
    """Train one seed on one fold and predict its test block."""
    lo, test_lo, test_hi = schedule.index_bounds(data.dates, fold)
    model, rec = fit_seed(spec, data, lo, test_lo, config, seed, schedule.val_fraction, fold.fold_id)
    rec.test_slice = (test_lo, test_hi)
    if not rec.failed:
        t0 = time.perf_counter()
        rec.signals = predict_block(model, data, test_lo, test_hi)
        if keep_params:
            rec.params = ParamSet.from_model(model, {"seed": seed, "fold": fold.fold_id})
        rec.wall_time += time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# ensembles and walk-forward driver


def select_top(records: Sequence[RunRecord], S: int) -> List[RunRecord]:
    ok = [r for r in records if not r.failed and math.isfinite(r.val_loss)]
    if len(ok) < S:
        failed = ", ".join(f"seed {r.seed}: {r.error or 'failed'}" for r in records if r not in ok)
        raise RuntimeError(f"only {len(ok)} successful runs for top-{S} ensemble; failures: {failed}")
    return sorted(ok, key=lambda r: (r.val_loss, r.seed))[:S]


def ensemble_positions(records: Sequence[RunRecord], S: int) -> np.ndarray:
    """Cell-wise mean of the signals of the ``S`` best runs by validation loss."""
    top = select_top(records, S)
    return np.mean(np.stack([r.signals for r in top]), axis=0)


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def _train_job(args):
    spec, panel, fold, schedule, config, seed = args
    torch.set_num_threads(1)
    return train_one(spec, WindowData(panel, config.sigma_tgt), fold, schedule, config, seed)


def train_fold(spec: ModelSpec, data: WindowData, fold: Fold, schedule: FoldSchedule,
               config: TrainConfig, workers: int = 1) -> List[RunRecord]:
    seeds = list(config.seeds)
    if workers <= 1:
        return [train_one(spec, data, fold, schedule, config, s) for s in seeds]
    jobs = [(spec, data.panel, fold, schedule, config, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_job, jobs))


@dataclass
class WalkForwardResult:
    signals: SignalPanel
    records: Dict[int, List[RunRecord]]
    seed_signals: Dict[int, np.ndarray]  # seed -> full-calendar signal matrix


def walk_forward(spec: ModelSpec, panel: FeaturePanel, schedule: FoldSchedule, config: TrainConfig,
                 workers: int = 1) -> WalkForwardResult:
    """Train every fold and seed, ensemble per fold, and stitch out-of-sample signals."""
    data = WindowData(panel, config.sigma_tgt)
    T, K = data.n_dates, data.n_assets
    yhat = np.full((T, K), np.nan)
    excluded = np.zeros(T, dtype=bool)
    seed_signals = {s: np.full((T, K), np.nan) for s in config.seeds}
    records: Dict[int, List[RunRecord]] = {}
    burn = oos_burn_in(spec)
    for fold in schedule.folds:
        recs = train_fold(spec, data, fold, schedule, config, workers)
        records[fold.fold_id] = recs
        a, b = recs[0].test_slice
        yhat[a:b] = ensemble_positions(recs, config.top_S)
        excluded[a:min(a + burn, b)] = True
        for r in recs:
            if r.signals is not None:
                seed_signals[r.seed][a:b] = r.signals
    sig = SignalPanel(panel.dates, panel.tickers, yhat, excluded=excluded)
    return WalkForwardResult(sig, records, seed_signals)


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class BlockCheck:
    name: str
    n_params: int
    n_checked: int
    max_rel_error: float
    worst: str


@dataclass
class GradCheckReport:
    arch: str
    blocks: List[BlockCheck]
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    @property
    def failing_blocks(self) -> List[str]:
        return [b.name for b in self.blocks if b.max_rel_error > self.tol]

    def summary(self) -> str:
        lines = [f"{self.arch}: max rel error {self.max_rel_error:.2e} ({'PASS' if self.passed else 'FAIL'})"]
        for b in self.blocks:
            lines.append(f"  {b.name:<12s} {b.n_checked:>4d}/{b.n_params:<6d} max {b.max_rel_error:.2e}  {b.worst}")
        return "\n".join(lines)


def gradcheck_instance(spec: ModelSpec, n_assets: int = 2, n_features: int = 9, seed: int = 0,
                       input_scale: float = 1.0):
    g = torch.Generator().manual_seed(seed)
    X = torch.randn(n_assets, spec.seq_len, n_features, generator=g, dtype=torch.float64) * input_scale
    Y = torch.randn(n_assets, spec.seq_len, generator=g, dtype=torch.float64)
    ids = torch.arange(n_assets)
    return X, Y, ids


def gradient_check(spec: ModelSpec, n_assets: int = 2, n_per_block: int = 200, tol: float = 1e-4,
                   seed: int = 0, input_scale: float = 1.0, rel_floor: float = 1e-5,
                   model: Optional[SignalNet] = None) -> GradCheckReport:
    """Central finite differences of the pooled Sharpe loss against autograd, per top-level block.

    Relative error is ``|a - fd| / max(|a|, |fd|, rel_floor * max(1, |loss|))``
    with step ``1e-5 * max(1, |theta|)``. The floor sits well above the
    finite-difference rounding noise (about ``1e-11 |loss|``) so that
    derivatives that are exactly zero by symmetry (softmax-invariant key
    biases, a common shift of all sLSTM input-gate preactivations) do not
    register as failures.
    """
    X, Y, ids = gradcheck_instance(spec, n_assets, seed=seed, input_scale=input_scale)
    if model is None:
        model = build_model(spec, X.shape[-1], n_assets, seed=seed)
    model.eval()  # dropout off: the loss must be a deterministic function of the parameters

    def loss_fn():
        return sharpe_loss((model(X, ids) * Y).reshape(-1))

    model.zero_grad()
    base = loss_fn()
    base.backward()
    floor = rel_floor * max(1.0, abs(base.item()))
    rng = np.random.default_rng(seed)
    blocks = []
    with torch.no_grad():
        for name, child in model.named_children():
            params = [(n, p) for n, p in child.named_parameters() if p.requires_grad]
            if not params:
                continue
            sizes = [p.numel() for _, p in params]
            total = sum(sizes)
            picks = rng.choice(total, size=min(n_per_block, total), replace=False)
            bounds = np.cumsum([0] + sizes)
            worst, worst_name = 0.0, ""
            for flat in np.sort(picks):
                j = int(np.searchsorted(bounds, flat, side="right") - 1)
                pname, p = params[j]
                i = int(flat - bounds[j])
                view = p.view(-1)
                theta = view[i].item()
                h = 1e-5 * max(1.0, abs(theta))
                view[i] = theta + h
                up = loss_fn().item()
                view[i] = theta - h
                down = loss_fn().item()
                view[i] = theta
                fd = (up - down) / (2 * h)
                a = p.grad.view(-1)[i].item() if p.grad is not None else 0.0
                err = abs(a - fd) / max(abs(a), abs(fd), floor)
                if err > worst:
                    worst, worst_name = err, f"{name}.{pname}[{i}] autograd={a:.3e} fd={fd:.3e}"
            blocks.append(BlockCheck(name, total, len(picks), worst, worst_name))
    return GradCheckReport(spec.arch, blocks, tol)


def gradcheck_spec(arch: str, hidden_dim: int = 4, seq_len: int = 16, **kw) -> ModelSpec:
    """The small float64 instance used by the gradient suite."""
    layers = kw.pop("layers", 2 if arch.upper() in ("XLSTM", "VXLSTM") else 1)
    return ModelSpec(arch, hidden_dim=hidden_dim, seq_len=seq_len, layers=layers, patch_len=kw.pop("patch_len", 4),
                     heads=kw.pop("heads", 2), ssm_state=kw.pop("ssm_state", 4), embed_dim=kw.pop("embed_dim", 2),
                     extras=kw.pop("extras", {"window": 8, "kernel": 5} if arch.upper() in ("NLINEAR", "DLINEAR") else {}),
                     **kw)
