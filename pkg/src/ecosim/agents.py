"""Evolvable agents: genome, lifespan metabolism, trading policies, triggers.

These are the readable per-agent reference semantics.  The engine runs the
same rules through the array kernels in `ecosim.kernels`; an equivalence
test holds the two implementations together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ecosim._rng import RngStream
from ecosim.market import Candle, FeatureWindow
from ecosim.perception import Signal

# Archetype codes (order matters: arrays encode archetypes by this index).
TREND_FOLLOWER = 0
GRID_MEAN_REVERTER = 1
SCALPER = 2
CONTRARIAN = 3
ARCHETYPE_NAMES = ("trend_follower", "grid_mean_reverter", "scalper", "contrarian")

LONG = 1
SHORT = -1

# Death causes.
DEATH_NONE = 0
DEATH_LIFESPAN = 1
DEATH_BANKRUPT = 2

DEFAULT_ALPHA_SECONDS = 30.0
DEFAULT_INITIAL_LIFESPAN = 3600.0
DEFAULT_INITIAL_CASH = 100.0
GENE_EPS = 1e-6


@dataclass
class Genome:
    """Evolvable parameters: leverage, exit thresholds, confidence gate, policy.

    take_profit and stop_loss are thresholds on the *leveraged* fractional
    return of a position; confidence_threshold gates entries on signal
    strength.
    """

    leverage: float
    take_profit: float
    stop_loss: float
    confidence_threshold: float
    archetype: int
    max_leverage: float = 10.0

    def validate(self) -> None:
        if not 1.0 <= self.leverage <= self.max_leverage:
            raise ValueError(f"leverage {self.leverage} outside [1, {self.max_leverage}]")
        if not 0.0 < self.take_profit < 0.5:
            raise ValueError(f"take_profit {self.take_profit} outside (0, 0.5)")
        if not 0.0 < self.stop_loss < 0.5:
            raise ValueError(f"stop_loss {self.stop_loss} outside (0, 0.5)")
        if not 0.5 <= self.confidence_threshold < 1.0:
            raise ValueError(f"confidence_threshold {self.confidence_threshold} outside [0.5, 1)")
        if self.archetype not in (TREND_FOLLOWER, GRID_MEAN_REVERTER, SCALPER, CONTRARIAN):
            raise ValueError(f"unknown archetype {self.archetype}")

    def clamped(self) -> "Genome":
        """Copy with every gene pulled back inside its legal bounds."""
        return Genome(
            leverage=min(max(self.leverage, 1.0), self.max_leverage),
            take_profit=min(max(self.take_profit, GENE_EPS), 0.5 - GENE_EPS),
            stop_loss=min(max(self.stop_loss, GENE_EPS), 0.5 - GENE_EPS),
            confidence_threshold=min(max(self.confidence_threshold, 0.5), 1.0 - GENE_EPS),
            archetype=self.archetype,
            max_leverage=self.max_leverage,
        )


@dataclass
class Position:
    """Open leveraged position; notional is quantity * entry_price."""

    asset: int
    side: int                 # LONG or SHORT
    quantity: float
    entry_price: float
    leverage: float
    entry_timestamp: int
    entry_fee: float = 0.0

    @property
    def notional(self) -> float:
        return self.quantity * self.entry_price


@dataclass
class Agent:
    id: int
    genome: Genome
    cash: float
    lifespan: float
    bound_asset: int
    position: Position | None = None
    alive: bool = True
    born_step: int = 0
    death_step: int = -1
    death_cause: int = DEATH_NONE
    generation: int = 0
    bailout_count: int = 0
    # Lifetime stats.
    trades: int = 0
    wins: int = 0
    gross_profit: float = 0.0    # sum of positive gross trade PnL
    gross_realized: float = 0.0  # signed cumulative gross realized PnL
    fees_paid: float = 0.0
    realized_net: float = 0.0
    epoch_realized_net: float = 0.0
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def equity(self, price: float | None = None) -> float:
        if self.position is None:
            return self.cash
        if price is None:
            raise ValueError("price required to value an open position")
        pos = self.position
        return self.cash + pos.side * (price - pos.entry_price) * pos.quantity


@dataclass(frozen=True)
class OrderIntent:
    agent_id: int
    asset: int
    side: int
    margin: float
    notional: float


@dataclass(frozen=True)
class ExitIntent:
    agent_id: int
    reason: str               # "take_profit" | "stop_loss" | "liquidation"


def update_lifespan(agent: Agent, step_seconds: float, profitable_trade_closed: bool,
                    alpha: float = DEFAULT_ALPHA_SECONDS) -> Agent:
    """Metabolic update: lifespan decays with time, profitable closes add alpha.

    Lifespan clamps at zero, and an agent whose clock hits zero dies.
    """
    if not agent.alive:
        raise ValueError(f"agent {agent.id} is not alive")
    tau = agent.lifespan - step_seconds + (alpha if profitable_trade_closed else 0.0)
    agent.lifespan = max(0.0, tau)
    if agent.lifespan == 0.0:
        agent.alive = False
        agent.death_cause = DEATH_LIFESPAN
    return agent


def signal_direction(p_up: float) -> int:
    """Directional read of a probability; 0 means no direction."""
    if p_up > 0.5:
        return LONG
    if p_up < 0.5:
        return SHORT
    return 0


def decide(agent: Agent, signal: Signal, features: FeatureWindow | None,
           position_fraction: float = 1.0) -> OrderIntent | None:
    """Entry decision for a flat agent.

    The confidence gate requires |p_up - 0.5| >= threshold - 0.5.  Trend
    followers and scalpers take the signal's side, contrarians the opposite;
    grid mean-reverters trade against the sign of the last log-return under
    the same gate.  Sizing: margin = cash * position_fraction, notional =
    margin * leverage.
    """
    if not agent.alive or agent.position is not None:
        return None
    gate = agent.genome.confidence_threshold - 0.5
    if abs(signal.p_up - 0.5) < gate:
        return None

    arch = agent.genome.archetype
    if arch in (TREND_FOLLOWER, SCALPER):
        side = signal_direction(signal.p_up)
    elif arch == CONTRARIAN:
        side = -signal_direction(signal.p_up)
    else:  # GRID_MEAN_REVERTER: fade the last move
        if features is None:
            return None
        last_ret = float(features.values[-1, 1])
        side = SHORT if last_ret > 0 else (LONG if last_ret < 0 else 0)
    if side == 0:
        return None

    margin = agent.cash * position_fraction
    if margin <= 0.0:
        return None
    notional = margin * agent.genome.leverage
    return OrderIntent(agent_id=agent.id, asset=agent.bound_asset, side=side,
                       margin=margin, notional=notional)


def check_triggers(agent: Agent, candle: Candle) -> ExitIntent | None:
    """Exit checks on the bar close, stop-loss taking precedence over take-profit.

    The leveraged return is side * (close - entry) / entry * leverage; a
    margin breach is handled separately by the exchange's liquidation check.
    """
    pos = agent.position
    if pos is None:
        raise ValueError(f"agent {agent.id} holds no position")
    r = pos.side * (candle.close - pos.entry_price) / pos.entry_price * pos.leverage
    if r <= -agent.genome.stop_loss:
        return ExitIntent(agent_id=agent.id, reason="stop_loss")
    if r >= agent.genome.take_profit:
        return ExitIntent(agent_id=agent.id, reason="take_profit")
    return None
