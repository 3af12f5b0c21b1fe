"""Market generators, CSV ingestion and feature computation."""

import math

import numpy as np
import pytest

from ecosim.market import (
    ATR_PERIOD,
    Candle,
    CandleSeries,
    CsvParseError,
    ValidationError,
    WindowUnderflowError,
    compute_features,
    gen_correlated_universe,
    gen_factor_universe,
    gen_gbm,
    load_csv,
)


def test_gbm_degenerate_path_is_constant():
    series = gen_gbm(n_steps=10, interval=60, start_price=100.0, drift=0.0,
                     volatility=0.0, seed=1)
    assert np.all(series.closes == 100.0)
    assert np.all(series.opens == 100.0)


def test_gbm_same_seed_bit_identical():
    a = gen_gbm(500, 60, 100.0, 0.0, 0.01, seed=42)
    b = gen_gbm(500, 60, 100.0, 0.0, 0.01, seed=42)
    for field in ("opens", "highs", "lows", "closes", "volumes", "timestamps"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    c = gen_gbm(500, 60, 100.0, 0.0, 0.01, seed=43)
    assert not np.array_equal(a.closes, c.closes)


def test_gbm_log_return_std_matches_volatility():
    series = gen_gbm(100_000, 60, 100.0, 0.0, 0.001, seed=7)
    log_ret = np.diff(np.log(series.closes))
    assert abs(log_ret.std() - 0.001) / 0.001 < 0.02


def test_gbm_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_gbm(0, 60, 100.0, 0.0, 0.01, seed=1)
    with pytest.raises(ValueError):
        gen_gbm(10, 60, -5.0, 0.0, 0.01, seed=1)
    with pytest.raises(ValueError):
        gen_gbm(10, 60, 100.0, 0.0, -0.01, seed=1)


@pytest.mark.parametrize("seed", [1, 2, 3, 11, 99])
def test_gbm_candle_invariants_hold(seed):
    series = gen_gbm(300, 60, 50.0, 0.0002, 0.02, seed=seed)
    series.validate()
    assert np.all(np.diff(series.timestamps) == 60)
    assert series[0].open == 50.0


def test_correlated_identity_cross_correlation_near_zero():
    uni = gen_correlated_universe(2, 10_000, np.eye(2), vol=0.01, seed=5)
    r0 = np.diff(np.log(uni.series[uni.assets[0]].closes))
    r1 = np.diff(np.log(uni.series[uni.assets[1]].closes))
    assert abs(np.corrcoef(r0, r1)[0, 1]) < 0.05


def test_correlated_unit_offdiagonal_gives_identical_paths():
    corr = np.array([[1.0, 1.0], [1.0, 1.0]])
    uni = gen_correlated_universe(2, 500, corr, vol=0.01, seed=3)
    a = uni.series[uni.assets[0]].closes
    b = uni.series[uni.assets[1]].closes
    assert np.allclose(a, b, rtol=1e-9)


def test_correlated_target_point_nine():
    corr = np.array([[1.0, 0.9], [0.9, 1.0]])
    uni = gen_correlated_universe(2, 10_000, corr, vol=0.01, seed=9)
    r0 = np.diff(np.log(uni.series[uni.assets[0]].closes))
    r1 = np.diff(np.log(uni.series[uni.assets[1]].closes))
    assert 0.85 <= np.corrcoef(r0, r1)[0, 1] <= 0.95


def test_correlated_rejects_non_psd_naming_eigenvalue():
    corr = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalue -1
    with pytest.raises(ValueError, match="eigenvalue.*negative"):
        gen_correlated_universe(2, 10, corr, vol=0.01, seed=1)


def test_correlated_rejects_asymmetric_and_bad_diagonal():
    with pytest.raises(ValueError, match="symmetric"):
        gen_correlated_universe(2, 10, np.array([[1.0, 0.5], [0.1, 1.0]]), 0.01, 1)
    with pytest.raises(ValueError, match="unit diagonal"):
        gen_correlated_universe(2, 10, np.array([[2.0, 0.0], [0.0, 2.0]]), 0.01, 1)


def test_factor_universe_correlation_and_seed_coupling():
    hi = gen_factor_universe(4, 10_000, rho=0.9, vol=0.01, seed=11)
    lo = gen_factor_universe(4, 10_000, rho=0.0, vol=0.01, seed=11)
    r = [np.diff(np.log(hi.series[a].closes)) for a in hi.assets]
    c = np.corrcoef(np.stack(r))
    off = c[np.triu_indices(4, 1)]
    assert np.all(np.abs(off - 0.9) < 0.05)
    r0 = [np.diff(np.log(lo.series[a].closes)) for a in lo.assets]
    c0 = np.corrcoef(np.stack(r0))
    assert np.all(np.abs(c0[np.triu_indices(4, 1)]) < 0.05)


def test_factor_universe_tail_bars_widen_factor_moves():
    calm = gen_factor_universe(1, 50_000, rho=1.0, vol=0.01, seed=2, tail_prob=0.0)
    heavy = gen_factor_universe(1, 50_000, rho=1.0, vol=0.01, seed=2,
                                tail_prob=0.02, tail_scale=8.0)
    r_calm = np.diff(np.log(calm.series[calm.assets[0]].closes))
    r_heavy = np.diff(np.log(heavy.series[heavy.assets[0]].closes))
    assert np.sum(np.abs(r_heavy) > 4 * 0.01) > 10 * max(1, np.sum(np.abs(r_calm) > 4 * 0.01))


def _write_csv(tmp_path, rows, header="asset,timestamp,open,high,low,close,volume"):
    path = tmp_path / "data.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return str(path)


def test_load_csv_well_formed(tmp_path):
    rows = [
        "BTC,1000,100,101,99,100.5,3.0",
        "BTC,1060,100.5,102,100,101.0,2.0",
        "BTC,1120,101.0,101.5,100.2,100.7,1.5",
    ]
    uni = load_csv(_write_csv(tmp_path, rows))
    assert uni.assets == ["BTC"]
    assert len(uni.series["BTC"]) == 3
    assert uni.series["BTC"].interval == 60
    assert uni.series["BTC"][1].close == 101.0


def test_load_csv_rejects_high_below_low(tmp_path):
    rows = [
        "BTC,1000,100,101,99,100.5,3.0",
        "BTC,1060,100.5,99.0,100.0,100.6,2.0",
    ]
    with pytest.raises(ValidationError, match="line 3"):
        load_csv(_write_csv(tmp_path, rows))


def test_load_csv_rejects_misaligned_assets(tmp_path):
    rows = [
        "BTC,1000,100,101,99,100.5,3.0",
        "BTC,1060,100.5,102,100,101.0,2.0",
        "ETH,1000,10,11,9,10.5,3.0",
        "ETH,1090,10.5,12,10,11.0,2.0",
    ]
    with pytest.raises(ValidationError):
        load_csv(_write_csv(tmp_path, rows))


def test_load_csv_parse_error_carries_line_number(tmp_path):
    rows = [
        "BTC,1000,100,101,99,100.5,3.0",
        "BTC,not_a_time,1,2,0.5,1.5,1",
    ]
    with pytest.raises(CsvParseError, match="line 3"):
        load_csv(_write_csv(tmp_path, rows))


def test_load_csv_rejects_wrong_header(tmp_path):
    with pytest.raises(CsvParseError, match="header"):
        load_csv(_write_csv(tmp_path, ["1,2,3"], header="time,open,close"))


def _flat_series(n, price=100.0):
    ts = 1000 + 60 * np.arange(n)
    p = np.full(n, price)
    return CandleSeries(ts, p, p, p, p, np.ones(n), 60)


def test_features_constant_series_all_zero():
    series = _flat_series(80)
    window = compute_features(series, 79)
    assert window.values.shape == (60, 3)
    assert np.all(window.values == 0.0)
    assert window.end_timestamp == int(series.timestamps[79])


def test_features_last_log_return_definition():
    n = 61
    closes = np.full(n, 100.0)
    closes[-1] = 110.0
    opens = np.concatenate(([100.0], closes[:-1]))
    highs = np.maximum(opens, closes)
    lows = np.minimum(opens, closes)
    series = CandleSeries(1000 + 60 * np.arange(n), opens, highs, lows, closes,
                          np.ones(n), 60)
    window = compute_features(series, n - 1)
    assert math.isclose(window.values[-1, 1], math.log(1.1), rel_tol=1e-12)


def _brute_true_range(series, i):
    hl = series.highs[i] - series.lows[i]
    if i == 0:
        return hl
    prev = series.closes[i - 1]
    return max(hl, abs(series.highs[i] - prev), abs(series.lows[i] - prev))


def _brute_atr(series, i, period):
    lo = max(0, i - period + 1)
    trs = [_brute_true_range(series, k) for k in range(lo, i + 1)]
    return sum(trs) / len(trs)


def test_features_atr_matches_brute_force_oracle():
    rng = np.random.default_rng(123)
    n = 90
    closes = 100.0 * np.exp(np.cumsum(rng.normal(0, 0.01, n)))
    opens = np.concatenate(([100.0], closes[:-1]))
    spread = np.abs(rng.normal(0, 0.3, n))
    highs = np.maximum(opens, closes) + spread
    lows = np.minimum(opens, closes) - spread
    series = CandleSeries(1000 + 60 * np.arange(n), opens, highs, lows, closes,
                          np.ones(n), 60)
    t = 85
    window = compute_features(series, t)
    for row in (0, 13, 30, 59):
        bar = t - 59 + row
        expected = _brute_atr(series, bar, ATR_PERIOD) / series.closes[bar]
        assert math.isclose(window.values[row, 2], expected, rel_tol=1e-12)


def test_features_window_underflow():
    series = _flat_series(80)
    with pytest.raises(WindowUnderflowError):
        compute_features(series, 10)
    with pytest.raises(WindowUnderflowError):
        compute_features(series, 200)


@pytest.mark.parametrize("seed", [0, 4, 17])
def test_features_always_finite(seed):
    series = gen_gbm(200, 60, 20.0, 0.0, 0.03, seed=seed)
    for t in (59, 100, 199):
        window = compute_features(series, t)
        assert np.all(np.isfinite(window.values))


def test_candle_validation_rejects_bad_bracket():
    with pytest.raises(ValidationError):
        Candle(1000, 100.0, 99.0, 98.0, 100.5, 1.0).validate()
    with pytest.raises(ValidationError):
        Candle(1000, 100.0, 101.0, -1.0, 100.5, 1.0).validate()
