"""Command line entry point: ``sharpebench {run,tables,plot,gridcheck,gradcheck}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from .exceptions import ConfigError, DataValidationError, EmptyStoreError

log = logging.getLogger("sharpebench")


def _cmd_run(args) -> int:
    from .benchmark import run_benchmark
    from .config import load_config

    config = load_config(args.config)
    if args.output:
        config.raw["output"] = str(Path(args.output).resolve())
    t0 = time.perf_counter()
    store = run_benchmark(config, workers=args.workers)
    led = store.ledger()
    for row in led.itertuples(index=False):
        msg = f"{row.model:<14} {row.status}"
        if row.error:
            msg += f"  {row.error}"
        print(msg)
    print(f"store: {store.root}  ({time.perf_counter() - t0:.1f}s)")
    return 0 if (led["status"] == "ok").all() else 3


def _cmd_tables(args) -> int:
    from .benchmark import ResultStore
    from .reporting import emit_tables

    store = ResultStore(args.store)
    out = emit_tables(store, args.which, basis=args.basis)
    for paths in out.values():
        for p in paths:
            if p.suffix == ".txt":
                print(p.read_text(encoding="utf-8"))
    return 0


def _cmd_plot(args) -> int:
    from .benchmark import ResultStore
    from .reporting import emit_pnl_plot

    out = emit_pnl_plot(ResultStore(args.store), args.vol, image=not args.no_image, basis=args.basis)
    for k, p in out.items():
        if p is not None:
            print(f"{k}: {p}")
    return 0


def _cmd_gridcheck(args) -> int:
    from .config import expand_grid, load_config, variant_label

    config = load_config(args.config)
    variants = expand_grid(config, cap=args.cap)
    print(f"{len(variants)} variant(s) x {len(config.models())} model(s)")
    for v in variants:
        print(f"  {variant_label(v)}")
    if args.search:
        from .benchmark import grid_search

        table = grid_search(config, workers=args.workers)
        print(table.to_string(index=False))
    return 0


def _cmd_gradcheck(args) -> int:
    from .models.spec import ARCHS
    from .training import gradcheck_spec, gradient_check

    archs = ARCHS if args.model.lower() == "all" else [args.model.upper()]
    ok = True
    t0 = time.perf_counter()
    for arch in archs:
        spec = gradcheck_spec(arch, hidden_dim=args.hidden, seq_len=args.seq_len)
        rep = gradient_check(spec, n_assets=2, tol=args.tol, seed=args.seed)
        print(rep.summary())
        ok &= rep.passed
    print(f"{'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharpebench", description="Sharpe-loss sequence model benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train, evaluate and store every configured model")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None, help="worker processes (default: $SHARPEBENCH_WORKERS or 1)")
    r.add_argument("--output", default=None, help="override the configured output directory")
    r.set_defaults(func=_cmd_run)

    t = sub.add_parser("tables", help="emit report tables from a store")
    t.add_argument("store")
    t.add_argument("--which", nargs="+", default=None,
                   choices=["performance", "risk", "subperiod", "annual", "breakeven"])
    t.add_argument("--basis", choices=["gross", "net"], default="gross")
    t.set_defaults(func=_cmd_tables)

    pl = sub.add_parser("plot", help="vol-rescaled cumulative PnL curves (CSV + PNG)")
    pl.add_argument("store")
    pl.add_argument("--vol", type=float, default=0.10)
    pl.add_argument("--basis", choices=["gross", "net"], default="gross")
    pl.add_argument("--no-image", action="store_true", help="write the CSV data only")
    pl.set_defaults(func=_cmd_plot)

    g = sub.add_parser("gridcheck", help="expand and list the hyperparameter grid (optionally run it)")
    g.add_argument("config")
    g.add_argument("--cap", type=int, default=None)
    g.add_argument("--search", action="store_true", help="train every variant and select by validation Sharpe")
    g.add_argument("--workers", type=int, default=None)
    g.set_defaults(func=_cmd_gridcheck)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check of the Sharpe loss")
    gc.add_argument("model", help="architecture name or 'all'")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--hidden", type=int, default=4)
    gc.add_argument("--seq-len", type=int, default=16)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataValidationError, EmptyStoreError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
