import numpy as np
import pandas as pd
import pytest
import torch

from sharpebench.market_data import PricePanel, SyntheticConfig, build_feature_panel, generate_synthetic_universe

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def random_prices(rng, n_days=400, n_assets=3, vol=0.01, start="2001-01-02"):
    r = rng.normal(0.0002, vol, size=(n_days - 1, n_assets))
    close = np.vstack([np.full(n_assets, 100.0), 100.0 * np.cumprod(1 + r, axis=0)])
    dates = pd.bdate_range(start, periods=n_days)
    return PricePanel(dates, [f"T{k}" for k in range(n_assets)], close)


@pytest.fixture
def small_prices(rng):
    return random_prices(rng)


@pytest.fixture(scope="session")
def synthetic_panel():
    cfg = SyntheticConfig(n_assets=2, n_days=1500, signal_strength=0.3, rng_seed=3)
    return build_feature_panel(generate_synthetic_universe(cfg))


def tiny_config(tmp_path, models=None, **over):
    raw = {
        "data": {"source": "synthetic",
                 "synthetic": {"n_assets": 2, "n_days": 1500, "signal_kind": "ar1", "signal_strength": 0.3,
                               "rng_seed": 1}},
        "models": models or [{"name": "AR1x", "arch": "AR1X", "seq_len": 42, "embed_dim": 0,
                              "train": {"lr": 0.01, "window_stride": 4}}],
        "folds": {"retrain_every": 1, "initial_train_years": 3},
        "seeds": {"n_seeds": 2, "top_S": 1},
        "training": {"max_epochs": 4, "patience": 2},
        "costs": {"default_bps": 2.0},
        "output": str(tmp_path / "store"),
        "periods": ["2003-2006", "2003-2004", "2004-2006"],
    }
    raw.update(over)
    return raw


ACCEPTANCE = {}


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _verdict(n: int, ok: bool, detail: str):
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE[n] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
