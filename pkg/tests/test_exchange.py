"""Execution, settlement, margining and the ledger identity."""

import math

import numpy as np
import pytest

from ecosim._rng import RngStream
from ecosim.agents import LONG, SHORT, Agent, Genome, OrderIntent, Position, TREND_FOLLOWER
from ecosim.exchange import (
    Fill,
    FrictionConfig,
    Ledger,
    RejectedOrderError,
    close_position,
    execute,
    liquidation_check,
    mark_to_market,
    settle_trade,
)
from ecosim.market import Candle


def candle(close=100.0):
    return Candle(0, close, close, close, close, 1.0)


def intent(side=LONG, margin=20.0, notional=100.0):
    return OrderIntent(agent_id=0, asset=0, side=side, margin=margin, notional=notional)


def agent_with_position(cash=20.0, side=LONG, entry=100.0, qty=1.0, leverage=5.0):
    a = Agent(
        id=0,
        genome=Genome(leverage=leverage, take_profit=0.04, stop_loss=0.04,
                      confidence_threshold=0.55, archetype=TREND_FOLLOWER),
        cash=cash, lifespan=3600.0, bound_asset=0, rng=RngStream(5),
    )
    a.position = Position(asset=0, side=side, quantity=qty, entry_price=entry,
                          leverage=leverage, entry_timestamp=0)
    return a


def test_execute_buy_constant_slippage():
    friction = FrictionConfig(taker_fee=0.0004, slippage_mean=0.0002,
                              slippage_model="constant")
    fill = execute(intent(LONG), candle(100.0), friction, RngStream(1))
    assert math.isclose(fill.fill_price, 100.02, rel_tol=1e-12)
    assert math.isclose(fill.fee_paid, fill.quantity * fill.fill_price * 0.0004, rel_tol=1e-15)
    assert math.isclose(fill.fee_paid, 100.0 * 0.0004, rel_tol=1e-12)


def test_execute_sell_adverse_direction():
    friction = FrictionConfig(slippage_model="constant")
    fill = execute(intent(SHORT), candle(100.0), friction, RngStream(1))
    assert math.isclose(fill.fill_price, 99.98, rel_tol=1e-12)


def test_execute_zero_friction_fills_at_close():
    friction = FrictionConfig(taker_fee=0.0, slippage_mean=0.0)
    fill = execute(intent(LONG), candle(123.45), friction, RngStream(1))
    assert fill.fill_price == 123.45
    assert fill.fee_paid == 0.0


def test_execute_rejects_margin_breach():
    friction = FrictionConfig()
    with pytest.raises(RejectedOrderError):
        execute(intent(margin=50.0), candle(), friction, RngStream(1), cash=20.0)


def test_noisy_slippage_always_adverse_with_target_mean():
    friction = FrictionConfig(slippage_mean=0.0002, slippage_model="noisy")
    stream = RngStream(9)
    buys = [execute(intent(LONG), candle(100.0), friction, stream).fill_price
            for _ in range(4000)]
    buys = np.array(buys)
    assert np.all(buys >= 100.0)
    implied = buys / 100.0 - 1.0
    assert abs(implied.mean() - 0.0002) < 0.00002


def test_liquidation_close_pays_extra_slippage():
    friction = FrictionConfig(slippage_mean=0.0002, slippage_model="constant")
    pos = Position(asset=0, side=LONG, quantity=1.0, entry_price=100.0,
                   leverage=5.0, entry_timestamp=0)
    normal = close_position(pos, candle(100.0), friction, RngStream(1), "stop_loss")
    forced = close_position(pos, candle(100.0), friction, RngStream(1), "liquidation")
    assert math.isclose(normal.fill_price, 100.0 * (1 - 0.0002), rel_tol=1e-12)
    assert math.isclose(forced.fill_price, 100.0 * (1 - 0.0004), rel_tol=1e-12)


def test_settle_green_pnl_illusion():
    # A directionally-won trade that loses money net of both fee legs.
    entry = Fill(0, LONG, 1.0, 100.0, 100.0 * 0.0004, 0, "entry")
    exit_ = Fill(0, SHORT, 1.0, 100.05, 100.05 * 0.0004, 60, "take_profit")
    net = settle_trade(entry, exit_)
    assert math.isclose(net, 0.05 - (0.04 + 0.04002), abs_tol=1e-12)
    assert net < 0


def test_settle_zero_fee_round_trip_at_same_price():
    entry = Fill(0, LONG, 2.0, 100.0, 0.0, 0, "entry")
    exit_ = Fill(0, SHORT, 2.0, 100.0, 0.0, 60, "take_profit")
    assert settle_trade(entry, exit_) == 0.0


def test_settle_short_sign_convention():
    entry = Fill(0, SHORT, 2.0, 100.0, 0.0, 0, "entry")
    exit_ = Fill(0, LONG, 2.0, 99.0, 0.0, 60, "take_profit")
    assert settle_trade(entry, exit_) == pytest.approx(2.0, abs=1e-12)


def test_settle_rejects_mismatches():
    entry = Fill(0, LONG, 1.0, 100.0, 0.0, 0, "entry")
    with pytest.raises(ValueError):
        settle_trade(entry, Fill(1, SHORT, 1.0, 100.0, 0.0, 0, "stop_loss"))
    with pytest.raises(ValueError):
        settle_trade(entry, Fill(0, SHORT, 2.0, 100.0, 0.0, 0, "stop_loss"))
    with pytest.raises(ValueError):
        settle_trade(entry, Fill(0, LONG, 1.0, 100.0, 0.0, 0, "stop_loss"))


def test_mark_to_market_flat_and_long():
    flat = agent_with_position()
    flat.position = None
    flat.cash = 100.0
    assert mark_to_market(flat, 120.0) == (100.0, 0.0)

    a = agent_with_position(cash=20.0, entry=100.0, qty=1.0)
    equity, unreal = mark_to_market(a, 103.0)
    assert unreal == 3.0
    assert equity == 23.0


def test_mark_to_market_floating_green_net_red():
    # Entry fee already out of cash: flat 100 becomes 99.96 plus +0.03 floating.
    a = agent_with_position(cash=100.0 - 0.04, entry=100.0, qty=1.0)
    equity, unreal = mark_to_market(a, 100.03)
    assert math.isclose(unreal, 0.03, abs_tol=1e-12)
    assert equity < 100.0


def test_liquidation_threshold_matches_brute_force_sweep():
    # lev 5, entry 100, maintenance 0.5% of entry notional, margin 20 = cash.
    a = agent_with_position(cash=20.0, entry=100.0, qty=1.0, leverage=5.0)
    prices = np.arange(100.0, 70.0, -0.01)
    brute = next(p for p in prices if (20.0 + (p - 100.0)) <= 0.005 * 100.0)
    checked = next(p for p in prices if liquidation_check(a, p, 0.005))
    assert brute == checked
    assert abs(checked - 80.5) < 0.01


def test_liquidation_no_leverage_never_triggers_on_bounded_path():
    a = agent_with_position(cash=1000.0, entry=100.0, qty=1.0, leverage=1.0)
    for p in np.linspace(1.0, 300.0, 200):
        assert not liquidation_check(a, p, 0.005)


def test_liquidation_boundary_inclusive():
    a = agent_with_position(cash=20.0, entry=100.0, qty=1.0)
    # equity == maintenance exactly: 20 + (p - 100) == 0.5  =>  p == 80.5
    assert liquidation_check(a, 80.5, 0.005)
    assert not liquidation_check(a, 80.51, 0.005)


def test_friction_config_validation():
    with pytest.raises(ValueError):
        FrictionConfig(taker_fee=-0.1).validate()
    with pytest.raises(ValueError):
        FrictionConfig(slippage_model="magic").validate()


def test_ledger_conservation_accounting():
    ledger = Ledger(initial_capital=1000.0)
    ledger.aum = 1000.0
    ledger.assert_conserved()

    # A trade: 2.0 gross gain, 0.5 fee; market lost 2.0 to the agents.
    ledger.record_fee(0.5)
    ledger.record_realized(2.0)
    ledger.aum = 1000.0 + 2.0 - 0.5
    ledger.assert_conserved()

    # An agent dies with 300 equity: moves from aum to retired.
    ledger.record_retirement(300.0)
    ledger.aum -= 300.0
    ledger.assert_conserved()

    # Bailout: 3 grants of 100 printed into new agents.
    ledger.record_bailout(3, 100.0)
    ledger.aum += 300.0
    ledger.assert_conserved()
    assert ledger.group_cash == -300.0
    assert ledger.cumulative_injections == 300.0

    ledger.aum += 1.0   # unbacked money breaks the identity
    with pytest.raises(AssertionError, match="conservation"):
        ledger.assert_conserved()


def test_ledger_monotone_counters():
    ledger = Ledger(initial_capital=100.0)
    ledger.record_fee(0.1)
    ledger.record_fee(0.2)
    assert ledger.cumulative_fees == pytest.approx(0.3)
    ledger.record_bailout(1, 100.0)
    ledger.record_bailout(2, 100.0)
    assert ledger.cumulative_injections == 300.0
    assert ledger.group_cash == -300.0
