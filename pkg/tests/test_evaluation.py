import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sharpebench.evaluation import (
    PERFORMANCE_COLUMNS, RISK_COLUMNS, MetricsReport, annualized_return, calmar, cagr, cvar, evaluate,
    evaluation_mask, hac_tstat, hit_rate, info_ratio_and_corr, long_run_variance, max_drawdown,
    newey_west_lags, parse_period, passive_benchmark, plain_tstat, rolling_and_period_sharpes,
    rolling_sharpes, sharpe_ratio,
)
from sharpebench.market_data import ReturnPanel, VolPanel
from sharpebench.portfolio import SignalPanel, position_weights, strategy_returns


def _series(seed, lo=200, hi=2000):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0004, 0.01, int(rng.integers(lo, hi)))


def test_return_examples():
    assert annualized_return(np.zeros(10)) == 0 and cagr(np.zeros(10)) == 0
    x = np.full(252, 0.0001)
    assert annualized_return(x) == pytest.approx(0.0252, rel=1e-12)
    assert cagr(x) == pytest.approx(1.0001 ** 252 - 1, rel=1e-12)
    assert cagr(x) == pytest.approx(0.02552, abs=1e-5)
    doubling = np.full(252, 2.0 ** (1 / 252) - 1)
    assert cagr(doubling) == pytest.approx(1.0, rel=1e-12)


def test_cagr_floor_warns():
    with pytest.warns(RuntimeWarning):
        assert cagr(np.array([0.1, -1.2])) == -1.0


def test_sharpe_examples(rng):
    assert sharpe_ratio(np.array([0.01, -0.01])) == 0
    assert math.isnan(sharpe_ratio(np.full(20, 0.001)))
    assert math.isnan(sharpe_ratio(np.array([0.1])))
    x = rng.normal(0, 0.01, 300)
    assert sharpe_ratio(-x) == pytest.approx(-sharpe_ratio(x), rel=1e-14)
    sd = 0.01
    sims = [sharpe_ratio(rng.normal(sd * 0.1, sd, 2520)) for _ in range(200)]
    # annualized sampling error over ten years is about 1 / sqrt(10)
    assert np.mean(sims) == pytest.approx(0.1 * math.sqrt(252), abs=4 * 0.32 / math.sqrt(200))


@pytest.mark.parametrize("seed", range(5))
def test_oracle_equivalence(seed):
    x = _series(seed)
    assert sharpe_ratio(x) == pytest.approx(oracles.sharpe(list(x)), rel=1e-10)
    assert cagr(x) == pytest.approx(oracles.cagr(list(x)), rel=1e-10)
    assert cvar(x) == pytest.approx(oracles.cvar(list(x)), rel=1e-10)
    assert max_drawdown(x[:400]) == pytest.approx(oracles.max_drawdown(list(x[:400])), rel=1e-10, abs=1e-15)


def test_hac_lag_zero_is_classical(rng):
    x = rng.normal(0.001, 0.01, 700)
    assert hac_tstat(x, lags=0) == pytest.approx(oracles.classical_t(list(x)), rel=1e-13)
    assert plain_tstat(x) == hac_tstat(x, lags=0)


def test_hac_matches_statsmodels(rng):
    sm = pytest.importorskip("statsmodels.api")
    x = rng.normal(0.001, 0.01, 1000)
    L = newey_west_lags(len(x))
    fit = sm.OLS(x, np.ones_like(x)).fit(cov_type="HAC", cov_kwds={"maxlags": L, "use_correction": False})
    assert hac_tstat(x) == pytest.approx(float(fit.tvalues[0]), rel=1e-8)


def test_hac_lag_rule_and_shrinkage(rng):
    assert newey_west_lags(100) == 4
    assert newey_west_lags(5000) == math.floor(4 * 50 ** (2 / 9))
    e = rng.normal(size=5000)
    x = np.empty(5000)
    x[0] = e[0]
    for t in range(1, 5000):
        x[t] = 0.5 * x[t - 1] + e[t]
    x = x * 0.01 + 0.002
    L = newey_west_lags(5000)
    assert long_run_variance(x, L) > long_run_variance(x, 0)
    assert abs(hac_tstat(x)) < abs(plain_tstat(x))
    w = rng.normal(0.0005, 0.01, 5000)
    a, b = hac_tstat(w), plain_tstat(w)
    assert abs(a - b) < 0.25 * max(abs(a), abs(b), 1.0)


def test_hac_degenerate():
    assert math.isnan(hac_tstat(np.full(100, 0.01)))
    assert math.isnan(hac_tstat(np.array([0.1, 0.2]), lags=3))


def test_hit_rate_examples(rng):
    w = np.ones((50, 1))
    assert hit_rate(w, np.full((50, 1), 0.01)) == 1.0
    alt = np.where(np.arange(50) % 2 == 0, 0.01, -0.01)[:, None]
    assert hit_rate(w, alt) == pytest.approx(0.5, abs=0.03)
    w = rng.normal(size=(30, 3))
    w[4, 0] = 0.0
    r = rng.normal(size=(30, 3))
    r[7, 2] = np.nan
    assert hit_rate(w, r) == pytest.approx(oracles.hit_rate(w.tolist(), r.tolist()), rel=1e-12)


def test_info_ratio_cases(rng):
    p = rng.normal(0, 0.01, 500)
    ir, t, c = info_ratio_and_corr(p, p)
    assert math.isnan(ir) and math.isnan(t) and c == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        ir, _, c = info_ratio_and_corr(p + 0.001, p)
    assert math.isnan(ir) and c == pytest.approx(1.0)
    s = rng.normal(0, 0.01, 500)
    ir, t, c = info_ratio_and_corr(s, p)
    assert abs(c) < 2 / math.sqrt(500) * 1.5
    assert ir == pytest.approx(oracles.info_ratio(list(s), list(p)), rel=1e-10)
    with pytest.raises(ValueError):
        info_ratio_and_corr(s, p[:-1])


def test_drawdown_examples(rng):
    assert max_drawdown(np.full(20, 0.001)) == 0
    assert max_drawdown(np.array([0.10, -0.50, 0.10])) == pytest.approx(-0.50)
    assert math.isnan(calmar(np.full(20, 0.001)))
    x = rng.normal(0, 0.01, 300)
    assert calmar(x) == pytest.approx(cagr(x) / abs(max_drawdown(x)))
    assert max_drawdown(np.concatenate([np.zeros(7), x])) == pytest.approx(max_drawdown(x), rel=1e-14)


def test_cvar_examples(rng):
    x = np.array([-1.0] + [0.01] * 99)
    assert cvar(x) == pytest.approx(0.192, rel=1e-12)
    assert cvar(np.full(40, 0.003)) == pytest.approx(-0.003)
    assert math.isnan(cvar(np.ones(19)))
    y = rng.normal(0, 0.01, 400)
    assert cvar(3.0 * y) == pytest.approx(3.0 * cvar(y), rel=1e-12)
    assert cvar(y + 0.002) == pytest.approx(cvar(y) - 0.002, rel=1e-12)


def test_rolling_windows_find_catastrophe(rng):
    x = rng.normal(0.0, 0.001, 600)
    x[300:363] -= 0.01
    rs = rolling_sharpes(x)
    brute = [np.mean(x[i:i + 63]) / np.std(x[i:i + 63], ddof=1) * math.sqrt(252) for i in range(600 - 62)]
    np.testing.assert_allclose(rs, brute, rtol=1e-10)
    i = int(np.nanargmin(rs))
    assert i <= 300 + 62 and i + 63 > 300


def test_period_and_year_decomposition(rng):
    dates = pd.bdate_range("2010-01-01", "2015-12-31")
    x = rng.normal(0.0005, 0.01, len(dates))
    worst, min_ann, per_period, per_year = rolling_and_period_sharpes(x, dates, ["2010-2012", "2012-2016"])
    sel = (dates >= "2010-01-01") & (dates < "2012-01-01")
    assert per_period["2010-2012"] == pytest.approx(sharpe_ratio(x[sel]))
    assert sorted(per_year) == [str(y) for y in range(2010, 2016)]
    assert min_ann == pytest.approx(min(per_year.values()))
    assert worst == pytest.approx(np.nanmin(rolling_sharpes(x)))
    assert parse_period("2010-2015") == (pd.Timestamp("2010-01-01"), pd.Timestamp("2015-01-01"))


def test_min_annual_skips_stub_years(rng):
    dates = pd.bdate_range("2010-01-01", "2011-01-10")
    x = rng.normal(0.0005, 0.01, len(dates))
    _, min_ann, _, per_year = rolling_and_period_sharpes(x, dates, [])
    assert "2011" in per_year
    assert min_ann == pytest.approx(per_year["2010"])


def test_constant_series_guards():
    dates = pd.bdate_range("2010-01-01", periods=300)
    worst, min_ann, _, per_year = rolling_and_period_sharpes(np.full(300, 0.001), dates, [])
    assert math.isnan(worst) and math.isnan(min_ann)
    assert all(math.isnan(v) for v in per_year.values())


def _panels(rng, T=300, K=3):
    dates = pd.bdate_range("2010-01-01", periods=T)
    tickers = [f"T{k}" for k in range(K)]
    r = rng.normal(0, 0.01, (T, K))
    r[0] = np.nan
    sigma = np.full((T, K), 0.01)
    return ReturnPanel(dates, tickers, r), VolPanel(dates, tickers, np.zeros((T, K)), sigma, 1.0 / sigma, 60)


def test_passive_is_pipeline_identity(rng):
    rets, vol = _panels(rng)
    pb = passive_benchmark(vol, rets, 0.10)
    w = position_weights(SignalPanel.constant(rets.dates, rets.tickers, 1.0), vol, 0.10)
    np.testing.assert_array_equal(pb.returns, strategy_returns(w, rets).portfolio)
    hr = hit_rate(pb.weights, rets)
    assert hr == pytest.approx(np.mean(rets.r[1:] > 0))
    _, _, c = info_ratio_and_corr(pb.returns[1:], pb.returns[1:])
    assert c == pytest.approx(1.0)


def test_evaluate_report(rng):
    rets, vol = _panels(rng)
    pb = passive_benchmark(vol, rets)
    w = position_weights(SignalPanel(rets.dates, rets.tickers, np.tanh(rng.normal(size=rets.r.shape))), vol)
    g = strategy_returns(w, rets)
    rep = evaluate(g.portfolio, rets.dates, w.w, rets.r, pb.returns, periods=["2010-2011"])
    assert rep.n_obs == 299
    assert rep.sharpe == pytest.approx(sharpe_ratio(g.portfolio[1:]))
    flat = rep.flat()
    for key in list(PERFORMANCE_COLUMNS) + list(RISK_COLUMNS):
        assert np.isfinite(flat[key]), key
    assert MetricsReport.from_dict(rep.to_dict()) == rep
    assert rep.calmar == pytest.approx(rep.cagr / abs(rep.max_dd))


def test_evaluation_mask_drops_following_days():
    p = np.array([np.nan, 0.1, 0.2, 0.3, 0.4])
    ex = np.array([False, True, False, False, False])
    np.testing.assert_array_equal(evaluation_mask(p, ex), [False, True, False, True, True])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_metric_property_oracles(seed):
    x = _series(seed, 200, 600)
    assert sharpe_ratio(x) == pytest.approx(oracles.sharpe(list(x)), rel=1e-10)
    assert cvar(x) == pytest.approx(oracles.cvar(list(x)), rel=1e-10)
