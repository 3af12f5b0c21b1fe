"""Friction-aware execution, settlement, margining and the system ledger.

Fills reference bar closes: slippage moves the fill price against the
order (never in its favor), the taker fee is charged per leg on that
leg's own notional, and liquidation closes pay a second slippage draw.
"""

from __future__ import annotations

from dataclasses import dataclass

from ecosim._rng import RngStream
from ecosim.agents import Agent, LONG, OrderIntent, Position, SHORT
from ecosim.market import Candle

REASON_ENTRY = "entry"
REASON_TAKE_PROFIT = "take_profit"
REASON_STOP_LOSS = "stop_loss"
REASON_LIQUIDATION = "liquidation"

DEFAULT_MAINTENANCE_FRACTION = 0.005


class RejectedOrderError(ValueError):
    """Order exceeds the agent's margin capacity."""


@dataclass
class FrictionConfig:
    """Execution cost model: per-leg taker fee and adverse slippage."""

    taker_fee: float = 0.0004
    slippage_mean: float = 0.0002
    slippage_model: str = "constant"      # "constant" | "noisy"
    maintenance_fraction: float = DEFAULT_MAINTENANCE_FRACTION

    def validate(self) -> None:
        if self.taker_fee < 0 or self.slippage_mean < 0:
            raise ValueError("taker_fee and slippage_mean must be >= 0")
        if self.slippage_model not in ("constant", "noisy"):
            raise ValueError(f"unknown slippage model {self.slippage_model!r}")
        if self.maintenance_fraction < 0:
            raise ValueError("maintenance_fraction must be >= 0")

    def draw_slippage(self, rng: RngStream, n_draws: int = 1) -> float:
        """Total slippage fraction.

        Noisy draws are uniform on [0, 2 * slippage_mean]: non-negative
        with the configured mean, and free of transcendentals so the array
        kernels reproduce them bit-for-bit.
        """
        if self.slippage_model == "constant":
            return self.slippage_mean * n_draws
        return sum(2.0 * self.slippage_mean * rng.uniform() for _ in range(n_draws))


@dataclass(frozen=True)
class Fill:
    """Executed order leg.  fee_paid is fill_price * quantity * taker_fee."""

    asset: int
    side: int                # direction of the order leg: LONG buys, SHORT sells
    quantity: float
    fill_price: float
    fee_paid: float
    timestamp: int
    reason: str

    def __post_init__(self):
        if self.fill_price <= 0:
            raise ValueError("fill_price must be positive")


def slipped_price(close: float, order_side: int, slippage: float) -> float:
    """Fill price for an order at the bar close; slippage is always adverse."""
    return close * (1.0 + slippage) if order_side == LONG else close * (1.0 - slippage)


def execute(intent: OrderIntent, candle: Candle, friction: FrictionConfig,
            rng_stream: RngStream, cash: float | None = None,
            reason: str = REASON_ENTRY) -> Fill:
    """Execute an entry intent against the bar close.

    Rejects the order when the intent's margin exceeds available cash.
    Quantity is notional / fill_price, so fee = notional * taker_fee.
    """
    if cash is not None and intent.margin > cash * (1 + 1e-12):
        raise RejectedOrderError(
            f"margin {intent.margin:.6f} exceeds cash {cash:.6f} for agent {intent.agent_id}"
        )
    s = friction.draw_slippage(rng_stream)
    price = slipped_price(candle.close, intent.side, s)
    quantity = intent.notional / price
    fee = quantity * price * friction.taker_fee
    return Fill(asset=intent.asset, side=intent.side, quantity=quantity,
                fill_price=price, fee_paid=fee, timestamp=candle.timestamp,
                reason=reason)


def close_position(position: Position, candle: Candle, friction: FrictionConfig,
                   rng_stream: RngStream, reason: str) -> Fill:
    """Closing leg for an open position (opposite side, adverse slippage).

    Forced liquidations pay one extra slippage draw on top of the normal one.
    """
    order_side = -position.side
    n_draws = 2 if reason == REASON_LIQUIDATION else 1
    s = friction.draw_slippage(rng_stream, n_draws)
    price = slipped_price(candle.close, order_side, s)
    fee = position.quantity * price * friction.taker_fee
    return Fill(asset=position.asset, side=order_side, quantity=position.quantity,
                fill_price=price, fee_paid=fee, timestamp=candle.timestamp,
                reason=reason)


def settle_trade(entry: Fill, exit: Fill) -> float:
    """Net PnL of a round trip: signed gross price move minus both legs' fees.

    Fees are charged per leg on each leg's own notional, which refines the
    symmetric 2 * (P * Q * fee) approximation; the two agree exactly when
    entry and exit prices are equal.
    """
    if entry.asset != exit.asset:
        raise ValueError(f"asset mismatch: {entry.asset} vs {exit.asset}")
    if abs(entry.quantity - exit.quantity) > 1e-9 * max(entry.quantity, 1.0):
        raise ValueError(f"quantity mismatch: {entry.quantity} vs {exit.quantity}")
    if entry.side != -exit.side:
        raise ValueError("entry and exit must have opposite sides")
    gross = entry.side * (exit.fill_price - entry.fill_price) * entry.quantity
    return gross - (entry.fee_paid + exit.fee_paid)


def mark_to_market(agent: Agent, current_price: float) -> tuple[float, float]:
    """(equity, unrealized) at the given price.

    Cash is already net of the entry fee and still holds the margin, so a
    flat agent's equity is just its cash.
    """
    if agent.position is None:
        return agent.cash, 0.0
    pos = agent.position
    unrealized = pos.side * (current_price - pos.entry_price) * pos.quantity
    return agent.cash + unrealized, unrealized


def liquidation_check(agent: Agent, current_price: float,
                      maintenance_fraction: float = DEFAULT_MAINTENANCE_FRACTION) -> bool:
    """True when equity has fallen to the maintenance floor (inclusive).

    The floor is maintenance_fraction of the position's entry notional.
    """
    if agent.position is None:
        raise ValueError(f"agent {agent.id} holds no position")
    equity, _ = mark_to_market(agent, current_price)
    return equity <= maintenance_fraction * agent.position.notional


@dataclass
class Ledger:
    """System-wide accounts.

    group_cash starts at zero and moves only through bailout debits, so it
    equals minus cumulative_injections at all times and goes negative as
    soon as the system prints money to respawn agents.  Dead agents' final
    equity is written off into retired_equity (it leaves the live economy
    but stays on the books), which closes the conservation identity:

        initial_capital + cumulative_injections
            == sum(live agent equity) + retired_equity
               + cumulative_fees + net_pnl_to_market

    where net_pnl_to_market is the cumulative amount lost to (positive) or
    gained from (negative) price moves, i.e. minus the population's gross
    market PnL including unrealized.
    """

    initial_capital: float
    group_cash: float = 0.0
    cumulative_fees: float = 0.0
    cumulative_injections: float = 0.0
    retired_equity: float = 0.0
    realized_pnl: float = 0.0            # cumulative gross realized price PnL
    aum: float = 0.0                     # sum of live agent equities (updated per step)
    unrealized: float = 0.0              # open positions' mark-to-market (updated per step)

    def record_fee(self, fee: float) -> None:
        self.cumulative_fees += fee

    def record_realized(self, gross: float) -> None:
        self.realized_pnl += gross

    def record_retirement(self, final_equity: float) -> None:
        self.retired_equity += final_equity

    def record_bailout(self, n_agents: int, grant: float) -> None:
        amount = n_agents * grant
        self.group_cash -= amount
        self.cumulative_injections += amount

    @property
    def net_pnl_to_market(self) -> float:
        return -(self.realized_pnl + self.unrealized)

    def conservation_residual(self) -> float:
        """Signed gap in the conservation identity; 0 in exact arithmetic."""
        lhs = self.initial_capital + self.cumulative_injections
        rhs = self.aum + self.retired_equity + self.cumulative_fees + self.net_pnl_to_market
        return lhs - rhs

    def assert_conserved(self, rel_tol: float = 1e-6) -> None:
        scale = max(self.initial_capital, abs(self.aum), 1.0)
        residual = self.conservation_residual()
        if abs(residual) > rel_tol * scale:
            raise AssertionError(
                f"ledger conservation violated: residual {residual:.3e} "
                f"exceeds {rel_tol:.1e} * {scale:.3e}"
            )
