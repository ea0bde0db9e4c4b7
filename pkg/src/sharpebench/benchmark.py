"""End-to-end benchmark orchestration and the on-disk result store.

Layout under the output directory::

    config.yaml                 verbatim copy of the run config
    ledger.csv                  one row per model (status, provenance, timing)
    runs.csv                    one row per (model, fold, seed) training run
    metrics/<model>.json        gross and net MetricsReport plus portfolio c*
    series/<model>.csv          daily gross/net/passive returns and the evaluation mask
    weights/<model>.csv         ensemble weight panel; <model>_seeds.npz per-seed panels
    breakeven/<model>.csv       per-asset vol-rescaled gross, turnover and c* (bps)
    checkpoints/<model>/fold<f>_seed<s>.sbck
    tables/, plots/             written by reporting
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
import shutil
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .config import RunConfig, expand_grid, variant_label
from .evaluation import MetricsReport, PassiveBenchmark, evaluate, evaluation_mask, passive_benchmark
from .exceptions import ConfigError
from .market_data import (
    TRADING_DAYS, FeaturePanel, PricePanel, build_feature_panel, generate_synthetic_universe, load_price_panel,
)
from .models.checkpoint import save_params
from .portfolio import (
    StrategyReturns, WeightPanel, breakeven_cost, load_costs, net_returns, position_weights, realized_costs,
    strategy_returns,
)
from .training import (
    FoldSchedule, WalkForwardResult, build_fold_schedule, select_top, walk_forward, workers_from_env,
)

log = logging.getLogger(__name__)

PASSIVE = "Passive"
LEDGER_FIELDS = ["model", "arch", "status", "error", "fingerprint", "n_folds", "n_seeds", "top_S",
                 "failed_runs", "data_sha256", "config_sha256", "checkpoints", "wall_time"]
RUN_FIELDS = ["model", "fold", "seed", "val_loss", "epochs", "failed", "selected", "error", "checkpoint"]
BREAKEVEN_COLUMNS = ["ticker", "gross_ann", "turnover_ann", "c_star_bps"]
MANAGED = ("metrics", "series", "weights", "breakeven", "checkpoints", "tables", "plots")


def safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def _sha256(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(b)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


class ResultStore:
    """Directory-backed store; writes go through this single object."""

    def __init__(self, root):
        self.root = Path(root)

    # -- lifecycle -------------------------------------------------------------

    def reset(self) -> "ResultStore":
        """Start a fresh run: drop artifacts of a previous run in the managed subdirectories."""
        for sub in MANAGED:
            shutil.rmtree(self.root / sub, ignore_errors=True)
        for f in ("ledger.csv", "runs.csv", "config.yaml", "grid.csv"):
            (self.root / f).unlink(missing_ok=True)
        for sub in MANAGED:
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def write_config(self, text: str) -> None:
        self.path("config.yaml").write_text(text, encoding="utf-8")

    def config_text(self) -> str:
        return self.path("config.yaml").read_text(encoding="utf-8")

    # -- append-only csv ledgers ----------------------------------------------

    def _append(self, fname: str, fields: List[str], row: Dict) -> None:
        p = self.path(fname)
        new = not p.exists()
        with open(p, "a", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            if new:
                w.writeheader()
            w.writerow({k: row.get(k, "") for k in fields})

    def append_ledger(self, row: Dict) -> None:
        self._append("ledger.csv", LEDGER_FIELDS, row)

    def append_run(self, row: Dict) -> None:
        self._append("runs.csv", RUN_FIELDS, row)

    def ledger(self) -> pd.DataFrame:
        p = self.path("ledger.csv")
        if not p.exists():
            return pd.DataFrame(columns=LEDGER_FIELDS)
        return pd.read_csv(p, dtype=str, keep_default_na=False)

    def runs(self) -> pd.DataFrame:
        return pd.read_csv(self.path("runs.csv"), float_precision="round_trip")

    # -- per-model records -----------------------------------------------------

    def write_metrics(self, name: str, payload: Dict) -> None:
        text = json.dumps(_jsonable(payload), sort_keys=True, indent=2)
        self.path("metrics", f"{safe_name(name)}.json").write_text(text + "\n", encoding="utf-8")

    def read_metrics(self, name: str) -> Dict:
        return json.loads(self.path("metrics", f"{safe_name(name)}.json").read_text(encoding="utf-8"))

    def report(self, name: str, basis: str = "gross") -> MetricsReport:
        return MetricsReport.from_dict(self.read_metrics(name)[basis])

    def write_series(self, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self.path("series", f"{safe_name(name)}.csv"), index_label="date", date_format="%Y-%m-%d")

    def read_series(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.path("series", f"{safe_name(name)}.csv"), index_col="date", parse_dates=["date"],
                           float_precision="round_trip")

    def write_weights(self, name: str, weights: WeightPanel, seeds: Optional[Dict[int, np.ndarray]] = None) -> None:
        pd.DataFrame(weights.w, index=weights.dates, columns=weights.tickers).to_csv(
            self.path("weights", f"{safe_name(name)}.csv"), index_label="date", date_format="%Y-%m-%d")
        if seeds:
            np.savez_compressed(self.path("weights", f"{safe_name(name)}_seeds.npz"),
                                **{f"seed_{s}": w for s, w in seeds.items()})

    def read_weights(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.path("weights", f"{safe_name(name)}.csv"), index_col="date", parse_dates=["date"],
                           float_precision="round_trip")

    def read_seed_weights(self, name: str) -> Dict[int, np.ndarray]:
        with np.load(self.path("weights", f"{safe_name(name)}_seeds.npz")) as z:
            return {int(k.split("_")[1]): z[k] for k in z.files}

    def write_breakeven(self, name: str, table: pd.DataFrame) -> None:
        table.to_csv(self.path("breakeven", f"{safe_name(name)}.csv"), index=False)

    def read_breakeven(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.path("breakeven", f"{safe_name(name)}.csv"), float_precision="round_trip")

    def checkpoint_path(self, name: str, fold: int, seed: int) -> Path:
        d = self.path("checkpoints", safe_name(name))
        d.mkdir(parents=True, exist_ok=True)
        return d / f"fold{fold}_seed{seed}.sbck"

    def models(self, include_failed: bool = False) -> List[str]:
        """Model names in run order (Passive first), successful ones unless asked otherwise."""
        led = self.ledger()
        if not include_failed:
            led = led[led["status"] == "ok"]
        return list(led["model"])


# ---------------------------------------------------------------------------
# pipeline pieces


def load_prices(config: RunConfig) -> PricePanel:
    if config.source == "csv":
        groups = config.data.get("groups")
        return load_price_panel(config.resolve(config.data["csv"]),
                                groups_path=config.resolve(groups) if groups else None)
    return generate_synthetic_universe(config.synthetic())


def data_fingerprint(prices: PricePanel) -> str:
    close = np.ascontiguousarray(prices.close, dtype="<f8")
    return _sha256(close.tobytes(), "|".join(prices.tickers).encode(),
                   "|".join(d.strftime("%Y-%m-%d") for d in prices.dates).encode())


def cost_vector(config: RunConfig, tickers) -> np.ndarray:
    costs = config.raw.get("costs", {}) or {}
    default = float(costs.get("default_bps", 0.0))
    if costs.get("file"):
        return load_costs(config.resolve(costs["file"]), tickers, default)
    return np.full(len(tickers), default / 1e4)


def test_decision_mask(dates: pd.DatetimeIndex, schedule: FoldSchedule) -> np.ndarray:
    """Decision dates covered by some test block."""
    mask = np.zeros(len(dates), dtype=bool)
    for fold in schedule.folds:
        _, a, b = schedule.index_bounds(dates, fold)
        mask[a:b] = True
    return mask


def realization_mask(series: np.ndarray, decision: np.ndarray) -> np.ndarray:
    out = np.zeros(len(series), dtype=bool)
    out[1:] = decision[:-1]
    return out & np.isfinite(series)


def breakeven_table(gross: StrategyReturns, weights: WeightPanel, mask: np.ndarray,
                    vol_target: float = 0.10) -> pd.DataFrame:
    """Per-asset annualized vol-rescaled gross return, turnover and ``c*`` in bps, sorted by ``c*``.

    Each asset's gross series is rescaled ex post to ``vol_target``; the same
    factor scales its turnover, so ``c* = gross_ann / turnover_ann`` equals the
    unscaled breakeven ``sum R / sum |dw|``.
    """
    be = breakeven_cost(gross, weights, mask)
    tau = realized_costs(weights, 1.0)
    rows = []
    for i, name in enumerate(gross.tickers):
        r = gross.per_asset[mask, i]
        ok = np.isfinite(r)
        n = int(ok.sum())
        sd = float(np.std(r[ok], ddof=1)) if n > 1 else float("nan")
        alpha = vol_target / (sd * math.sqrt(TRADING_DAYS)) if sd > 0 else float("nan")
        g = alpha * r[ok].sum() / n * TRADING_DAYS if n else float("nan")
        t = alpha * tau[mask, i].sum() / n * TRADING_DAYS if n else float("nan")
        rows.append({"ticker": name, "gross_ann": g, "turnover_ann": t, "c_star_bps": be.per_asset[name] * 1e4})
    table = pd.DataFrame(rows, columns=BREAKEVEN_COLUMNS)
    return table.sort_values("c_star_bps", ascending=False, na_position="last", kind="mergesort").reset_index(drop=True)


def _series_frame(dates, gross, net, passive, mask) -> pd.DataFrame:
    return pd.DataFrame({"gross": gross, "net": net, "passive": passive, "mask": mask.astype(int)},
                        index=pd.DatetimeIndex(dates, name="date"))


def _report_payload(gross_rep: MetricsReport, net_rep: MetricsReport, be, extra: Dict) -> Dict:
    return {"gross": gross_rep.to_dict(), "net": net_rep.to_dict(),
            "breakeven_portfolio_bps": be.portfolio * 1e4, **extra}


def portfolio_returns(weights: WeightPanel, panel: FeaturePanel, costs: np.ndarray) -> StrategyReturns:
    return net_returns(strategy_returns(weights, panel.returns), weights, costs)


def evaluate_both(gross: StrategyReturns, weights: WeightPanel, panel: FeaturePanel, passive: PassiveBenchmark,
                  mask: np.ndarray, periods):
    """Gross and net MetricsReport over the realization dates in ``mask``."""
    r = panel.returns.r
    g = evaluate(gross.portfolio, panel.dates, weights.w, r, passive.returns, mask, periods)
    n = evaluate(gross.net, panel.dates, weights.w, r, passive.returns, mask, periods)
    return g, n


def run_benchmark(config: RunConfig, workers: Optional[int] = None, emit: bool = True) -> ResultStore:
    """Data -> training -> ensembling -> portfolio -> evaluation for every configured model.

    A model that raises is recorded as failed in the ledger and the run
    moves on to the next one.
    """
    config.validate()
    workers = workers_from_env() if workers is None else workers
    store = ResultStore(config.output).reset()
    text = config.to_yaml()
    store.write_config(text)
    config_hash = _sha256(text.encode())

    prices = load_prices(config)
    data_hash = data_fingerprint(prices)
    panel = build_feature_panel(prices, **config.feature_args)
    f = config.folds
    schedule = build_fold_schedule(panel.dates, int(f["retrain_every"]), int(f["initial_train_years"]),
                                   float(f["val_fraction"]))
    costs = cost_vector(config, panel.tickers)
    sigma_tgt = config.sigma_tgt
    periods = config.periods
    test_dec = test_decision_mask(panel.dates, schedule)

    t0 = time.perf_counter()
    passive = passive_benchmark(panel.vol, panel.returns, sigma_tgt)
    p_mask = realization_mask(passive.returns, test_dec)
    pw = passive.weights
    pg = portfolio_returns(pw, panel, costs)
    p_gross, p_net = evaluate_both(pg, pw, panel, passive, p_mask, periods)
    be = breakeven_cost(pg, pw, p_mask)
    store.write_metrics(PASSIVE, _report_payload(p_gross, p_net, be, {"model": PASSIVE, "periods": list(periods)}))
    store.write_series(PASSIVE, _series_frame(panel.dates, pg.portfolio, pg.net, passive.returns, p_mask))
    store.write_weights(PASSIVE, pw)
    store.write_breakeven(PASSIVE, breakeven_table(pg, pw, p_mask))
    store.append_ledger({"model": PASSIVE, "arch": "PASSIVE", "status": "ok", "n_folds": len(schedule),
                         "data_sha256": data_hash, "config_sha256": config_hash,
                         "wall_time": f"{time.perf_counter() - t0:.3f}"})

    for entry in config.models():
        t0 = time.perf_counter()
        row = {"model": entry.name, "arch": entry.spec.arch, "fingerprint": entry.spec.fingerprint(),
               "n_folds": len(schedule), "data_sha256": data_hash, "config_sha256": config_hash}
        try:
            tc = config.train_config(entry)
            row.update(n_seeds=len(tc.seeds), top_S=tc.top_S)
            wf = walk_forward(entry.spec, panel, schedule, tc, workers)
            failed = _store_runs(store, entry.name, wf, tc.top_S)
            weights = position_weights(wf.signals, panel.vol, sigma_tgt)
            gross = portfolio_returns(weights, panel, costs)
            mask = evaluation_mask(gross.portfolio, wf.signals.excluded) & realization_mask(gross.portfolio, test_dec)
            g_rep, n_rep = evaluate_both(gross, weights, panel, passive, mask, periods)
            be = breakeven_cost(gross, weights, mask)
            store.write_metrics(entry.name, _report_payload(g_rep, n_rep, be, {
                "model": entry.name, "periods": list(periods), "spec": entry.spec.to_dict(), "burn_in_dates": int(wf.signals.excluded.sum())}))
            store.write_series(entry.name, _series_frame(panel.dates, gross.portfolio, gross.net, passive.returns, mask))
            seed_w = {s: position_weights(y, panel.vol, sigma_tgt).w for s, y in wf.seed_signals.items()}
            store.write_weights(entry.name, weights, seed_w)
            store.write_breakeven(entry.name, breakeven_table(gross, weights, mask))
            row.update(status="ok", failed_runs=failed, checkpoints=str(Path("checkpoints") / safe_name(entry.name)))
        except Exception as exc:  # isolate: one model never aborts the run
            log.exception("model %s failed", entry.name)
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        row["wall_time"] = f"{time.perf_counter() - t0:.3f}"
        store.append_ledger(row)

    if emit:
        from .reporting import emit_tables

        emit_tables(store)
    return store


def _store_runs(store: ResultStore, name: str, wf: WalkForwardResult, top_S: int) -> int:
    failed = 0
    for fold_id, recs in sorted(wf.records.items()):
        chosen = {r.seed for r in select_top(recs, top_S)}
        for r in recs:
            ck = ""
            if r.params is not None:
                p = store.checkpoint_path(name, fold_id, r.seed)
                save_params(r.params, p)
                ck = str(p.relative_to(store.root))
            failed += int(r.failed)
            store.append_run({"model": name, "fold": fold_id, "seed": r.seed, "val_loss": repr(float(r.val_loss)),
                              "epochs": r.epochs, "failed": int(r.failed), "selected": int(r.seed in chosen),
                              "error": r.error, "checkpoint": ck})
    return failed


# ---------------------------------------------------------------------------
# grid search


def grid_search(config: RunConfig, workers: Optional[int] = None) -> pd.DataFrame:
    """Train every grid variant and pick, per model, the one with the best validation Sharpe.

    Validation Sharpe of a variant is the mean over folds of the mean
    ``-val_loss`` of its top-S runs. The table is written to ``grid.csv``.
    """
    config.validate()
    variants = expand_grid(config)
    workers = workers_from_env() if workers is None else workers
    panel = build_feature_panel(load_prices(config), **config.feature_args)
    f = config.folds
    schedule = build_fold_schedule(panel.dates, int(f["retrain_every"]), int(f["initial_train_years"]),
                                   float(f["val_fraction"]))
    rows = []
    for v in variants:
        for entry in v.models():
            tc = v.train_config(entry)
            try:
                wf = walk_forward(entry.spec, panel, schedule, tc, workers)
                score = float(np.mean([np.mean([-r.val_loss for r in select_top(recs, tc.top_S)])
                                       for recs in wf.records.values()]))
                err = ""
            except Exception as exc:
                score, err = float("nan"), f"{type(exc).__name__}: {exc}"
            rows.append({"model": entry.name, "variant": variant_label(v), "val_sharpe": score, "error": err})
    table = pd.DataFrame(rows, columns=["model", "variant", "val_sharpe", "error"])
    table["selected"] = 0
    for name, grp in table.groupby("model", sort=False):
        ok = grp["val_sharpe"].dropna()
        if len(ok):
            table.loc[ok.idxmax(), "selected"] = 1
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "grid.csv", index=False)
    return table
