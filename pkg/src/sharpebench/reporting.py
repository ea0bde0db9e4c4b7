"""Tables and PnL curves emitted from a populated :class:`ResultStore`.

Every table cell is read from a stored record; emission only formats.
CSV headers use the MetricsReport keys, the aligned text tables use the
published column labels (see ``PERFORMANCE_COLUMNS`` / ``RISK_COLUMNS``).
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .benchmark import BREAKEVEN_COLUMNS, PASSIVE, ResultStore, safe_name
from .evaluation import PERFORMANCE_COLUMNS, RISK_COLUMNS
from .exceptions import EmptyStoreError
from .market_data import TRADING_DAYS

SURFACES = ("performance", "risk", "subperiod", "annual", "breakeven")
BREAKEVEN_LABELS = {"ticker": "Ticker", "gross_ann": "Gross (ann.)", "turnover_ann": "Turnover (ann.)",
                    "c_star_bps": "c* (bps)"}
FIRST_COLUMN = {"performance": "Model", "risk": "Model", "subperiod": "Strategy", "annual": "Strategy"}


def _fmt(v, digits: int = 4) -> str:
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "-"
    return f"{v:.{digits}f}"


def format_text(frame: pd.DataFrame, labels: Sequence[str], title: str = "", digits: int = 4) -> str:
    """Plain-text table with right-aligned numeric columns."""
    cells = [[_fmt(v, digits) for v in row] for row in frame.itertuples(index=False)]
    widths = [max([len(str(l))] + [len(r[i]) for r in cells]) for i, l in enumerate(labels)]
    line = lambda vals: "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(vals, widths)))
    out = [title] if title else []
    out += [line([str(l) for l in labels]), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in cells]
    return "\n".join(out) + "\n"


def _write(store: ResultStore, stem: str, frame: pd.DataFrame, labels: Sequence[str], title: str) -> Tuple[Path, Path]:
    d = store.path("tables")
    d.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = d / f"{stem}.csv", d / f"{stem}.txt"
    frame.to_csv(csv_path, index=False)
    txt_path.write_text(format_text(frame, labels, title), encoding="utf-8")
    return csv_path, txt_path


def _ordered_models(store: ResultStore) -> List[str]:
    names = store.models()
    if not names:
        raise EmptyStoreError(f"no model records in {store.root}")
    return [PASSIVE] + [n for n in names if n != PASSIVE] if PASSIVE in names else names


def performance_table(store: ResultStore, basis: str = "gross") -> pd.DataFrame:
    rows = []
    for name in _ordered_models(store):
        rep = store.read_metrics(name)[basis]
        rows.append({"model": name, **{k: rep[k] for k in PERFORMANCE_COLUMNS}})
    return pd.DataFrame(rows, columns=["model", *PERFORMANCE_COLUMNS])


def risk_table(store: ResultStore, basis: str = "gross") -> pd.DataFrame:
    rows = []
    for name in _ordered_models(store):
        rep = store.read_metrics(name)[basis]
        rows.append({"model": name, **{k: rep[k] for k in RISK_COLUMNS}})
    return pd.DataFrame(rows, columns=["model", *RISK_COLUMNS])


def _keyed_table(store: ResultStore, field: str, basis: str) -> pd.DataFrame:
    payloads = {n: store.read_metrics(n) for n in _ordered_models(store)}
    records = {n: p[basis][field] for n, p in payloads.items()}
    keys: List[str] = []
    if field == "per_period":
        # configured order; the JSON itself is key-sorted
        for p in payloads.values():
            keys += [k for k in p.get("periods", []) if k not in keys]
    for rec in records.values():
        keys += [k for k in rec if k not in keys]
    if field == "per_year":
        keys = sorted(keys)
    rows = [{"model": n, **{k: rec.get(k, float("nan")) for k in keys}} for n, rec in records.items()]
    return pd.DataFrame(rows, columns=["model", *keys])


def subperiod_table(store: ResultStore, basis: str = "gross") -> pd.DataFrame:
    return _keyed_table(store, "per_period", basis)


def annual_table(store: ResultStore, basis: str = "gross") -> pd.DataFrame:
    return _keyed_table(store, "per_year", basis)


def breakeven_tables(store: ResultStore) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """``(per_asset, portfolio)``: per-asset rows keep each model's stored descending c* order."""
    parts, port = [], []
    for name in _ordered_models(store):
        t = store.read_breakeven(name)
        t.insert(0, "model", name)
        parts.append(t)
        port.append({"model": name, "c_star_bps": store.read_metrics(name)["breakeven_portfolio_bps"]})
    per_asset = pd.concat(parts, ignore_index=True)[["model", *BREAKEVEN_COLUMNS]]
    portfolio = pd.DataFrame(port, columns=["model", "c_star_bps"])
    portfolio = portfolio.sort_values("c_star_bps", ascending=False, na_position="last", kind="mergesort")
    return per_asset, portfolio.reset_index(drop=True)


def emit_tables(store: ResultStore, which: Optional[Iterable[str]] = None, basis: str = "gross") -> Dict[str, List[Path]]:
    """Write CSV + aligned text for each requested surface under ``tables/``."""
    which = list(SURFACES if not which else which)
    bad = [w for w in which if w not in SURFACES]
    if bad:
        raise ValueError(f"unknown table(s) {bad}; choose from {SURFACES}")
    _ordered_models(store)
    suffix = "" if basis == "gross" else f"_{basis}"
    out: Dict[str, List[Path]] = {}
    for w in which:
        if w == "performance":
            t = performance_table(store, basis)
            labels = [FIRST_COLUMN[w], *PERFORMANCE_COLUMNS.values()]
            out[w] = list(_write(store, w + suffix, t, labels, f"Performance ({basis})"))
        elif w == "risk":
            t = risk_table(store, basis)
            labels = [FIRST_COLUMN[w], *RISK_COLUMNS.values()]
            out[w] = list(_write(store, w + suffix, t, labels, f"Risk ({basis})"))
        elif w in ("subperiod", "annual"):
            t = subperiod_table(store, basis) if w == "subperiod" else annual_table(store, basis)
            labels = [FIRST_COLUMN[w], *t.columns[1:]]
            title = "Sharpe ratio by subperiod" if w == "subperiod" else "Sharpe ratio by calendar year"
            out[w] = list(_write(store, w + suffix, t, labels, f"{title} ({basis})"))
        else:
            per_asset, port = breakeven_tables(store)
            paths = []
            for name, grp in per_asset.groupby("model", sort=False):
                frame = grp[BREAKEVEN_COLUMNS]
                paths += _write(store, f"breakeven_{safe_name(name)}", frame,
                                [BREAKEVEN_LABELS[c] for c in BREAKEVEN_COLUMNS],
                                f"{name}: annualised volatility-rescaled performance and breakeven costs (bps)")
            per_asset.to_csv(store.path("tables", "breakeven.csv"), index=False)
            paths.append(store.path("tables", "breakeven.csv"))
            paths += _write(store, "breakeven_portfolio", port, ["Model", "c* (bps)"], "Portfolio breakeven cost (bps)")
            out[w] = paths
    return out


# ---------------------------------------------------------------------------
# PnL curves


def rescale_to_vol(x: np.ndarray, target: float = 0.10) -> np.ndarray:
    """Scale ``x`` so its realized annualized (sample) volatility equals ``target``."""
    x = np.asarray(x, dtype=float)
    ok = x[np.isfinite(x)]
    sd = float(np.std(ok, ddof=1))
    if not sd > 1e-10 * float(np.max(np.abs(ok))):  # constant up to rounding
        return np.full_like(x, np.nan)
    return x * (target / (sd * math.sqrt(TRADING_DAYS)))


def pnl_curves(store: ResultStore, vol_rescale: float = 0.10, basis: str = "gross") -> Tuple[pd.DataFrame, pd.DataFrame]:
    """``(daily, cumulative)`` vol-rescaled PnL per model, on dates inside any evaluation mask."""
    daily = {}
    for name in _ordered_models(store):
        s = store.read_series(name)
        x = s[basis].where(s["mask"] == 1)
        r = pd.Series(np.nan, index=s.index)
        ok = x.notna().to_numpy()
        r[ok] = rescale_to_vol(x[ok].to_numpy(), vol_rescale)
        daily[name] = r
    frame = pd.DataFrame(daily)
    frame = frame[frame.notna().any(axis=1)]
    frame.index.name = "date"
    return frame, frame.fillna(0.0).cumsum()


def emit_pnl_plot(store: ResultStore, vol_rescale: float = 0.10, image: bool = True,
                  basis: str = "gross") -> Dict[str, Optional[Path]]:
    """Write ``plots/pnl_daily.csv``, ``plots/pnl.csv`` and, if matplotlib is available, ``plots/pnl.png``."""
    daily, cum = pnl_curves(store, vol_rescale, basis)
    d = store.path("plots")
    d.mkdir(parents=True, exist_ok=True)
    daily.to_csv(d / "pnl_daily.csv", date_format="%Y-%m-%d")
    cum.to_csv(d / "pnl.csv", date_format="%Y-%m-%d")
    out: Dict[str, Optional[Path]] = {"daily": d / "pnl_daily.csv", "cumulative": d / "pnl.csv", "image": None}
    if image:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            return out
        fig, ax = plt.subplots(figsize=(9, 4.5))
        for name in cum.columns:
            ax.plot(cum.index, cum[name], lw=1.6 if name == PASSIVE else 1.0,
                    ls="--" if name == PASSIVE else "-", label=name)
        ax.set_title(f"Cumulative {basis} PnL, rescaled to {vol_rescale:.0%} annualized volatility")
        ax.set_ylabel("cumulative return")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8, ncol=2)
        fig.tight_layout()
        fig.savefig(d / "pnl.png", dpi=120, metadata={"Software": None})
        plt.close(fig)
        out["image"] = d / "pnl.png"
    return out
