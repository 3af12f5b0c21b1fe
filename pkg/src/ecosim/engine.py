"""Simulation engine: the per-bar loop, epoch evolution, and reporting.

Step order within a bar is fixed: advance prices, mark to market, forced
liquidations then stop/take exits, signals for flat agents, entries in
agent-id order, lifespan decay and deaths, epoch-boundary evolution,
report row.  The whole run is a pure function of the scenario config,
master seed included.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, dataclass, field, fields

import numpy as np

from ecosim import kernels
from ecosim._rng import (
    DOMAIN_ASSET_SIGNAL,
    DOMAIN_EVOLUTION,
    DOMAIN_GENOME_INIT,
    DOMAIN_WEIGHTS,
    RngStream,
    derive_key,
    stream_uniform_array,
)
from ecosim.agents import DEATH_LIFESPAN, Agent, Genome, Position
from ecosim.analytics import SimulationReport, breakeven_win_rate, detect_cascades, one_hot_convergence
from ecosim.evolution import (
    GenerationRecord,
    PopulationConfig,
    bailout,
    census_by_archetype,
    cull,
    protect_endangered,
    random_genome,
    reproduce,
    spawn_agent,
)
from ecosim.exchange import FrictionConfig, Ledger
from ecosim.market import LOOKBACK, Universe, compute_features, gen_factor_universe, load_csv
from ecosim.perception import ForwardWeights, load_weights, untrained_forward


@dataclass
class UniverseConfig:
    kind: str = "gbm"                 # "gbm" | "csv"
    n_assets: int = 20
    interval: int = 60
    start_price: float = 100.0
    drift: float = 0.0
    volatility: float = 0.01
    correlation: float = 0.0          # uniform pairwise correlation (one-factor)
    tail_prob: float = 0.0            # per-bar chance of a fat-tailed innovation
    tail_scale: float = 1.0           # sigma multiplier on tail bars
    csv_path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("gbm", "csv"):
            raise ValueError(f"universe.kind must be 'gbm' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.csv_path:
            raise ValueError("universe.csv_path required when kind='csv'")
        if self.kind == "gbm":
            if self.n_assets < 1:
                raise ValueError("universe.n_assets must be >= 1")
            if self.start_price <= 0:
                raise ValueError("universe.start_price must be positive")
            if self.volatility < 0:
                raise ValueError("universe.volatility must be >= 0")
            if not 0.0 <= self.correlation <= 1.0:
                raise ValueError("universe.correlation must be in [0, 1]")
            if not 0.0 <= self.tail_prob < 1.0 or self.tail_scale < 1.0:
                raise ValueError("universe.tail_prob must be in [0, 1) and tail_scale >= 1")
        if self.interval < 1:
            raise ValueError("universe.interval must be >= 1 second")


@dataclass
class PerceptionConfig:
    mode: str = "oracle"              # "oracle" | "lstm" | "attention"
    accuracy: float = 0.512
    strength: float = 0.05
    shared_signal: bool = True
    signal_scope: str = "asset"       # "asset": one stream per asset; "market": one for all
    horizon: int = 1                  # bars ahead the oracle peeks
    hidden_size: int = 8
    n_layers: int = 2
    n_heads: int = 1
    weights_path: str | None = None

    def validate(self) -> None:
        if self.mode not in ("oracle", "lstm", "attention"):
            raise ValueError(f"perception.mode must be oracle/lstm/attention, got {self.mode!r}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("perception.accuracy must be in [0, 1]")
        if not 0.0 <= self.strength <= 0.5:
            raise ValueError("perception.strength must be in [0, 0.5]")
        if self.signal_scope not in ("asset", "market"):
            raise ValueError(f"perception.signal_scope must be 'asset' or 'market', got {self.signal_scope!r}")
        if self.signal_scope == "market" and not self.shared_signal:
            raise ValueError("perception.signal_scope 'market' requires shared_signal")
        if self.horizon < 1:
            raise ValueError("perception.horizon must be >= 1")
        if self.hidden_size < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("perception.hidden_size, n_layers and n_heads must be >= 1")
        if self.hidden_size % self.n_heads != 0:
            raise ValueError("perception.hidden_size must be divisible by n_heads")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 1
    steps: int = 270
    universe: UniverseConfig = field(default_factory=UniverseConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    friction: FrictionConfig = field(default_factory=FrictionConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    report_cadence: int = 1
    cascade_window: int = 3
    cascade_threshold_fraction: float = 0.05
    conservation_rel_tol: float = 1e-6

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.report_cadence < 1:
            raise ValueError("report_cadence must be >= 1")
        self.universe.validate()
        self.population.validate()
        self.friction.validate()
        self.perception.validate()
        interval = self.universe.interval
        if self.population.epoch_seconds % interval != 0:
            raise ValueError(
                f"population.epoch_seconds ({self.population.epoch_seconds}) must be a "
                f"multiple of universe.interval ({interval})"
            )

    def c_trans_price(self) -> float:
        """Round-trip cost as a price fraction: two fee legs plus two slips."""
        return 2.0 * (self.friction.taker_fee + self.friction.slippage_mean)

    def scenario_breakeven(self) -> tuple[float, float, float]:
        """(W_BE, C_ratio, R) implied by frictions and the mean genome risk."""
        lo, hi = self.population.genome_init.risk_price_range
        risk = 0.5 * (lo + hi)
        r = self.population.genome_init.reward_risk
        c_ratio = self.c_trans_price() / risk if risk > 0 else float("inf")
        return breakeven_win_rate(c_ratio, r), c_ratio, r


def _config_to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if hasattr(v, "__dataclass_fields__"):
            out[f.name] = _config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _field_default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _config_from_dict(cls, doc: dict, path: str = ""):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            raise ValueError(f"unknown scenario field {path + key!r}")
        default = _field_default(known[key])
        if isinstance(value, dict):
            if default is None or not hasattr(default, "__dataclass_fields__"):
                raise ValueError(f"scenario field {path + key!r} does not accept a mapping")
            kwargs[key] = _config_from_dict(type(default), value, path=f"{path}{key}.")
        elif isinstance(value, list) and isinstance(default, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    return _config_from_dict(ScenarioConfig, doc)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    return _config_to_dict(config)


def load_scenario(path: str) -> ScenarioConfig:
    """Read a scenario JSON file; unknown keys raise naming the field."""
    with open(path) as fh:
        doc = json.load(fh)
    config = scenario_from_dict(doc)
    config.validate()
    return config


@dataclass
class PopulationArrays:
    """Struct-of-arrays population state consumed by the bar kernels."""

    ids: np.ndarray
    archetype: np.ndarray
    leverage: np.ndarray
    take_profit: np.ndarray
    stop_loss: np.ndarray
    conf_thr: np.ndarray
    bound_asset: np.ndarray
    cash: np.ndarray
    tau: np.ndarray
    alive: np.ndarray
    has_pos: np.ndarray
    side: np.ndarray
    qty: np.ndarray
    entry_price: np.ndarray
    entry_fee: np.ndarray
    entry_step: np.ndarray
    rng_key: np.ndarray
    rng_ctr: np.ndarray
    trades: np.ndarray
    wins: np.ndarray
    gross_pos: np.ndarray
    gross_realized: np.ndarray
    fees_paid: np.ndarray
    realized_net: np.ndarray
    epoch_net: np.ndarray
    death_step: np.ndarray
    death_cause: np.ndarray
    born_step: np.ndarray
    generation: np.ndarray
    bailout_count: np.ndarray
    max_leverage: float = 10.0

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_agents(cls, agents: list[Agent], max_leverage: float) -> "PopulationArrays":
        def f8(vals):
            return np.array(vals, dtype=np.float64)

        return cls(
            ids=np.array([a.id for a in agents], dtype=np.int64),
            archetype=np.array([a.genome.archetype for a in agents], dtype=np.int8),
            leverage=f8([a.genome.leverage for a in agents]),
            take_profit=f8([a.genome.take_profit for a in agents]),
            stop_loss=f8([a.genome.stop_loss for a in agents]),
            conf_thr=f8([a.genome.confidence_threshold for a in agents]),
            bound_asset=np.array([a.bound_asset for a in agents], dtype=np.int64),
            cash=f8([a.cash for a in agents]),
            tau=f8([a.lifespan for a in agents]),
            alive=np.array([a.alive for a in agents], dtype=np.bool_),
            has_pos=np.array([a.position is not None for a in agents], dtype=np.bool_),
            side=np.array([a.position.side if a.position else 0 for a in agents], dtype=np.int8),
            qty=f8([a.position.quantity if a.position else 0.0 for a in agents]),
            entry_price=f8([a.position.entry_price if a.position else 0.0 for a in agents]),
            entry_fee=f8([a.position.entry_fee if a.position else 0.0 for a in agents]),
            entry_step=np.array(
                [a.position.entry_timestamp if a.position else -1 for a in agents], dtype=np.int64),
            rng_key=np.array([a.rng.key for a in agents], dtype=np.uint64),
            rng_ctr=np.array([a.rng.counter for a in agents], dtype=np.uint64),
            trades=np.array([a.trades for a in agents], dtype=np.int64),
            wins=np.array([a.wins for a in agents], dtype=np.int64),
            gross_pos=f8([a.gross_profit for a in agents]),
            gross_realized=f8([a.gross_realized for a in agents]),
            fees_paid=f8([a.fees_paid for a in agents]),
            realized_net=f8([a.realized_net for a in agents]),
            epoch_net=f8([a.epoch_realized_net for a in agents]),
            death_step=np.array([a.death_step for a in agents], dtype=np.int64),
            death_cause=np.array([a.death_cause for a in agents], dtype=np.int64),
            born_step=np.array([a.born_step for a in agents], dtype=np.int64),
            generation=np.array([a.generation for a in agents], dtype=np.int64),
            bailout_count=np.array([a.bailout_count for a in agents], dtype=np.int64),
            max_leverage=max_leverage,
        )

    def to_agents(self) -> list[Agent]:
        out = []
        for i in range(len(self)):
            genome = Genome(
                leverage=float(self.leverage[i]),
                take_profit=float(self.take_profit[i]),
                stop_loss=float(self.stop_loss[i]),
                confidence_threshold=float(self.conf_thr[i]),
                archetype=int(self.archetype[i]),
                max_leverage=self.max_leverage,
            )
            pos = None
            if self.has_pos[i]:
                pos = Position(
                    asset=int(self.bound_asset[i]),
                    side=int(self.side[i]),
                    quantity=float(self.qty[i]),
                    entry_price=float(self.entry_price[i]),
                    leverage=genome.leverage,
                    entry_timestamp=int(self.entry_step[i]),
                    entry_fee=float(self.entry_fee[i]),
                )
            out.append(Agent(
                id=int(self.ids[i]), genome=genome, cash=float(self.cash[i]),
                lifespan=float(self.tau[i]), bound_asset=int(self.bound_asset[i]),
                position=pos, alive=bool(self.alive[i]),
                born_step=int(self.born_step[i]), death_step=int(self.death_step[i]),
                death_cause=int(self.death_cause[i]), generation=int(self.generation[i]),
                bailout_count=int(self.bailout_count[i]), trades=int(self.trades[i]),
                wins=int(self.wins[i]), gross_profit=float(self.gross_pos[i]),
                gross_realized=float(self.gross_realized[i]),
                fees_paid=float(self.fees_paid[i]), realized_net=float(self.realized_net[i]),
                epoch_realized_net=float(self.epoch_net[i]),
                rng=RngStream(int(self.rng_key[i]), int(self.rng_ctr[i])),
            ))
        return out


def build_universe(config: ScenarioConfig) -> Universe:
    uc = config.universe
    if uc.kind == "csv":
        return load_csv(uc.csv_path)
    n_bars = config.steps + config.perception.horizon
    return gen_factor_universe(
        n_assets=uc.n_assets, n_steps=n_bars, rho=uc.correlation,
        vol=uc.volatility, seed=config.seed, interval=uc.interval,
        start_price=uc.start_price, drift=uc.drift,
        tail_prob=uc.tail_prob, tail_scale=uc.tail_scale,
    )


class SimulationState:
    """Mutable run state; `step()` advances one bar in the fixed order."""

    def __init__(self, config: ScenarioConfig, universe: Universe | None = None):
        config.validate()
        self.config = config
        self.universe = universe if universe is not None else build_universe(config)
        self.universe.validate()
        horizon = config.perception.horizon
        need = config.steps + horizon
        if self.universe.n_steps < need:
            raise ValueError(
                f"universe has {self.universe.n_steps} bars; scenario needs "
                f"{need} (steps + perception horizon)"
            )
        self.closes = self.universe.closes_matrix()
        self.n_assets = len(self.universe.assets)
        self.interval = self.universe.interval

        steps = config.steps
        self.realized_up = np.ascontiguousarray(
            self.closes[:, horizon:horizon + steps] > self.closes[:, :steps])
        prev_sign = np.zeros((self.n_assets, steps), dtype=np.int8)
        if steps > 1:
            diffs = self.closes[:, 1:steps] - self.closes[:, :steps - 1]
            prev_sign[:, 1:] = np.sign(diffs).astype(np.int8)
        self.prev_sign = prev_sign

        pc = config.perception
        self.forward_weights = None
        self.p_shared_all = None
        self.market_up = None
        if pc.mode == "oracle":
            self.trade_start = 1
            if pc.shared_signal and pc.signal_scope == "market":
                # One oracle stream calling the cross-asset move direction.
                log_all = np.log(self.closes[:, horizon:horizon + steps]
                                 / self.closes[:, :steps])
                self.market_up = log_all.mean(axis=0) > 0
                key = np.uint64(derive_key(config.seed, DOMAIN_ASSET_SIGNAL, 0))
                u = stream_uniform_array(np.full(steps, key, dtype=np.uint64),
                                         np.arange(steps, dtype=np.uint64))
                correct = u < pc.accuracy
                up = np.where(correct, self.market_up, ~self.market_up)
                p_market = np.where(up, 0.5 + pc.strength, 0.5 - pc.strength)
                self.p_shared_all = np.broadcast_to(
                    p_market, (self.n_assets, steps)).copy()
            elif pc.shared_signal:
                keys = np.array(
                    [derive_key(config.seed, DOMAIN_ASSET_SIGNAL, a) for a in range(self.n_assets)],
                    dtype=np.uint64,
                )
                u = stream_uniform_array(keys[:, None],
                                         np.arange(steps, dtype=np.uint64)[None, :])
                correct = u < pc.accuracy
                up = np.where(correct, self.realized_up, ~self.realized_up)
                self.p_shared_all = np.where(up, 0.5 + pc.strength, 0.5 - pc.strength)
        else:
            self.trade_start = LOOKBACK
            if pc.weights_path:
                self.forward_weights = load_weights(pc.weights_path)
            else:
                wrng = np.random.default_rng(derive_key(config.seed, DOMAIN_WEIGHTS, 0))
                self.forward_weights = ForwardWeights.random(
                    pc.mode, n_features=3, hidden=pc.hidden_size, rng=wrng,
                    n_layers=pc.n_layers, n_heads=pc.n_heads,
                )

        pop_cfg = config.population
        init_rng = np.random.default_rng(derive_key(config.seed, DOMAIN_GENOME_INIT, 0))
        agents = []
        for i in range(pop_cfg.size):
            genome = random_genome(pop_cfg.genome_init, init_rng, pop_cfg.max_leverage)
            agents.append(spawn_agent(i, genome, pop_cfg, config.seed,
                                      bound_asset=i % self.n_assets, born_step=0))
        if pop_cfg.bailout_enabled:
            protect_endangered(agents, pop_cfg)
        self.pop = PopulationArrays.from_agents(agents, pop_cfg.max_leverage)
        self.next_id = pop_cfg.size
        self.next_asset = pop_cfg.size % self.n_assets
        self.evolution_rng = np.random.default_rng(derive_key(config.seed, DOMAIN_EVOLUTION, 0))

        self.ledger = Ledger(initial_capital=pop_cfg.size * pop_cfg.initial_cash)
        # The universe's own bar interval governs the clock (a CSV file may
        # declare a different interval than the config default).
        if pop_cfg.epoch_seconds % self.interval != 0 or pop_cfg.epoch_seconds < self.interval:
            raise ValueError(
                f"population.epoch_seconds ({pop_cfg.epoch_seconds}) must be a "
                f"positive multiple of the universe bar interval ({self.interval})"
            )
        self.epoch_bars = int(pop_cfg.epoch_seconds // self.interval)
        self.t = 0
        self.epoch_index = 0

        # Run-level accumulators for agents removed at epoch compaction.
        self.retired_fees = 0.0
        self.retired_gross = 0.0
        self.retired_gross_pos = 0.0
        self.retired_trades = 0
        self.retired_wins = 0
        self.n_deaths = 0
        self.n_starved = 0
        self.n_starved_on_time = 0
        self._expected_starve_step = int(np.ceil(
            pop_cfg.initial_lifespan / self.interval)) - 1
        self.signals_count = 0.0
        self.signals_correct = 0.0

        self.generation_records: list[GenerationRecord] = []
        self._fill_chunks: list[tuple[np.ndarray, ...]] = []
        self._rows: list[tuple] = []
        self._prev_total_equity = self.ledger.initial_capital

        cap = 3 * pop_cfg.size + 8
        self._ev_agent = np.zeros(cap, dtype=np.int64)
        self._ev_kind = np.zeros(cap, dtype=np.int64)
        self._ev_side = np.zeros(cap, dtype=np.int64)
        self._ev_asset = np.zeros(cap, dtype=np.int64)
        self._ev_qty = np.zeros(cap)
        self._ev_price = np.zeros(cap)
        self._ev_fee = np.zeros(cap)

    @property
    def done(self) -> bool:
        return self.t >= self.config.steps

    def _nn_signals(self, t: int) -> np.ndarray:
        p = np.empty(self.n_assets)
        for a, name in enumerate(self.universe.assets):
            window = compute_features(self.universe.series[name], t)
            p[a] = untrained_forward(self.forward_weights, window).p_up
        return p

    def step(self) -> None:
        if self.done:
            raise StopIteration("simulation complete")
        t = self.t
        cfg = self.config
        pc = cfg.perception
        fr = cfg.friction
        pop = self.pop
        close_t = np.ascontiguousarray(self.closes[:, t])
        allow_entry = t >= self.trade_start

        if pc.mode == "oracle" and not pc.shared_signal:
            signal_mode = kernels.SIGNAL_INDEPENDENT
            p_shared = np.zeros(self.n_assets)
        else:
            signal_mode = kernels.SIGNAL_SHARED
            if pc.mode == "oracle":
                p_shared = np.ascontiguousarray(self.p_shared_all[:, t])
            elif allow_entry:
                p_shared = self._nn_signals(t)
            else:
                p_shared = np.full(self.n_assets, 0.5)

        n_events, sig_n, sig_ok = kernels.bar_step(
            t, float(self.interval), cfg.population.metabolic_reward,
            close_t, np.ascontiguousarray(self.prev_sign[:, t]),
            np.ascontiguousarray(self.realized_up[:, t]), p_shared,
            signal_mode, pc.accuracy, pc.strength, allow_entry,
            fr.taker_fee, fr.slippage_mean, fr.slippage_model == "noisy",
            fr.maintenance_fraction, cfg.population.position_fraction,
            pop.archetype, pop.leverage, pop.take_profit, pop.stop_loss,
            pop.conf_thr, pop.bound_asset,
            pop.cash, pop.tau, pop.alive, pop.has_pos, pop.side, pop.qty,
            pop.entry_price, pop.entry_fee,
            pop.rng_key, pop.rng_ctr,
            pop.trades, pop.wins, pop.gross_pos, pop.gross_realized,
            pop.fees_paid, pop.realized_net, pop.epoch_net,
            pop.death_step, pop.death_cause,
            self._ev_agent, self._ev_kind, self._ev_side, self._ev_asset,
            self._ev_qty, self._ev_price, self._ev_fee,
        )
        forced = 0
        if n_events:
            kinds = self._ev_kind[:n_events]
            entries = kinds == kernels.EV_ENTRY
            pop.entry_step[self._ev_agent[:n_events][entries]] = t
            self._fill_chunks.append((
                np.full(n_events, t, dtype=np.int64),
                pop.ids[self._ev_agent[:n_events]].copy(),
                self._ev_asset[:n_events].copy(),
                self._ev_side[:n_events].copy(),
                self._ev_qty[:n_events].copy(),
                self._ev_price[:n_events].copy(),
                self._ev_fee[:n_events].copy(),
                kinds.copy(),
            ))
            forced = int(np.sum((kinds == kernels.EV_STOP_LOSS)
                                | (kinds == kernels.EV_LIQUIDATION)))

        self.signals_count += sig_n
        self.signals_correct += sig_ok
        if signal_mode == kernels.SIGNAL_SHARED and allow_entry:
            if self.market_up is not None:
                p = p_shared[0]
                up = bool(self.market_up[t])
                self.signals_count += 1.0
                self.signals_correct += (up if p > 0.5 else not up) if p != 0.5 else 0.5
            else:
                up = self.realized_up[:, t]
                score = np.where(p_shared > 0.5, up.astype(np.float64),
                                 np.where(p_shared < 0.5, 1.0 - up, 0.5))
                self.signals_count += float(self.n_assets)
                self.signals_correct += float(score.sum())

        newly_dead = pop.death_step == t
        if np.any(newly_dead):
            self.ledger.record_retirement(float(pop.cash[newly_dead].sum()))

        if (t + 1) % self.epoch_bars == 0:
            self._run_epoch(t)
            pop = self.pop

        # Ledger refresh, conservation check, report row.
        ledger = self.ledger
        agent_close = close_t[pop.bound_asset] if len(pop) else np.array([])
        unreal = np.where(pop.has_pos,
                          pop.side * (agent_close - pop.entry_price) * pop.qty, 0.0) \
            if len(pop) else np.array([])
        alive = pop.alive
        ledger.aum = float((pop.cash + unreal)[alive].sum()) if len(pop) else 0.0
        ledger.unrealized = float(unreal[alive].sum()) if len(pop) else 0.0
        ledger.cumulative_fees = self.retired_fees + float(pop.fees_paid.sum())
        ledger.realized_pnl = self.retired_gross + float(pop.gross_realized.sum())
        ledger.assert_conserved(cfg.conservation_rel_tol)

        total_equity = (ledger.initial_capital + ledger.realized_pnl
                        + ledger.unrealized - ledger.cumulative_fees)
        exposed_mask = alive & pop.has_pos if len(pop) else np.array([], dtype=bool)
        n_exposed = int(exposed_mask.sum())
        if n_exposed:
            signed = pop.side[exposed_mask].astype(np.float64)
            net_counts = np.bincount(pop.bound_asset[exposed_mask], weights=signed,
                                     minlength=self.n_assets)
        else:
            net_counts = np.zeros(self.n_assets)
        conv = one_hot_convergence(net_counts, n_exposed, self.universe.correlation)
        roi = (total_equity - ledger.initial_capital) / ledger.initial_capital
        self._rows.append((
            t, ledger.aum, total_equity, ledger.group_cash, roi,
            total_equity - self._prev_total_equity,
            int(alive.sum()), n_exposed,
            float("nan") if conv is None else conv,
            forced, ledger.cumulative_fees, ledger.cumulative_injections,
            ledger.retired_equity,
        ))
        self._prev_total_equity = total_equity
        self.t += 1

    def _fold_retired(self, agents: list[Agent]) -> None:
        for a in agents:
            self.retired_fees += a.fees_paid
            self.retired_gross += a.gross_realized
            self.retired_gross_pos += a.gross_profit
            self.retired_trades += a.trades
            self.retired_wins += a.wins
            self.n_deaths += 1
            if a.trades == 0 and a.death_cause == DEATH_LIFESPAN:
                self.n_starved += 1
                if a.death_step == self._expected_starve_step:
                    self.n_starved_on_time += 1

    def _run_epoch(self, t: int) -> None:
        cfg = self.config.population
        agents = self.pop.to_agents()
        survivors, dead = cull(agents)
        self._fold_retired(dead)

        n_slots = 0
        if cfg.bailout_enabled:
            n_slots = cfg.size - len(survivors)
            offspring = reproduce(
                survivors, n_slots, cfg, self.evolution_rng, self.config.seed,
                self.next_id, born_step=t + 1, next_asset=self.next_asset,
                n_assets=self.n_assets,
            )
            self.next_id += n_slots
            self.next_asset = (self.next_asset + n_slots) % self.n_assets
            bailout(self.ledger, n_slots, cfg)
            population = survivors + offspring
            if len(population) == cfg.size:
                protect_endangered(population, cfg)
        else:
            population = survivors

        if population:
            close_t = self.closes[:, t]
            equities = np.array([
                a.equity(close_t[a.bound_asset]) if a.position else a.cash
                for a in population
            ])
            mean_eq, median_eq = float(equities.mean()), float(np.median(equities))
        else:
            mean_eq = median_eq = 0.0
        self.generation_records.append(GenerationRecord(
            epoch=self.epoch_index,
            step=t,
            births=n_slots,
            deaths=len(dead),
            bailouts=n_slots if cfg.bailout_enabled else 0,
            census=census_by_archetype(population),
            mean_equity=mean_eq,
            median_equity=median_eq,
            group_cash=self.ledger.group_cash,
        ))
        self.epoch_index += 1
        for a in population:
            a.epoch_realized_net = 0.0
        self.pop = PopulationArrays.from_agents(population, cfg.max_leverage)

    def collect_report(self) -> SimulationReport:
        cfg = self.config
        rows = np.array(self._rows, dtype=np.float64)
        cols = ["step", "aum", "total_equity", "group_cash", "roi", "bar_pnl",
                "population", "exposed", "convergence", "forced_exits",
                "cum_fees", "cum_injections", "retired_equity"]
        series = {name: rows[:, k].copy() for k, name in enumerate(cols)}
        for int_col in ("step", "population", "exposed", "forced_exits"):
            series[int_col] = series[int_col].astype(np.int64)

        if self._fill_chunks:
            names = ("step", "agent_id", "asset", "side", "qty", "price", "fee", "reason")
            fills = {name: np.concatenate([c[k] for c in self._fill_chunks])
                     for k, name in enumerate(names)}
        else:
            fills = {k: np.array([], dtype=np.float64 if k in ("qty", "price", "fee") else np.int64)
                     for k in ("step", "agent_id", "asset", "side", "qty", "price", "fee", "reason")}

        pop = self.pop
        trades_total = self.retired_trades + int(pop.trades.sum())
        gross_wins = self.retired_gross_pos + float(pop.gross_pos.sum())
        # Dead agents not yet removed by an epoch pass still sit in the arrays;
        # count them without touching the retired fee/PnL accumulators.
        dead_uncompacted = ~pop.alive
        n_deaths = self.n_deaths + int(dead_uncompacted.sum())
        starved_uncompacted = dead_uncompacted & (pop.trades == 0) & (pop.death_cause == DEATH_LIFESPAN)
        n_starved = self.n_starved + int(starved_uncompacted.sum())
        n_starved_on_time = self.n_starved_on_time + int(np.sum(
            starved_uncompacted & (pop.death_step == self._expected_starve_step)))
        w_be, c_ratio, r = cfg.scenario_breakeven()

        threshold = max(1, int(np.ceil(cfg.cascade_threshold_fraction * cfg.population.size)))
        cascade_events = detect_cascades(
            fills["step"], fills["reason"], fills["qty"] * fills["price"], cfg.steps,
            window_bars=cfg.cascade_window, threshold=threshold,
        )

        return SimulationReport(
            scenario_name=cfg.name,
            seed=cfg.seed,
            steps=cfg.steps,
            n_assets=self.n_assets,
            initial_capital=self.ledger.initial_capital,
            series=series,
            generation_records=self.generation_records,
            fills=fills,
            signals_count=self.signals_count,
            signals_correct=self.signals_correct,
            n_agents_ever=self.next_id,
            n_deaths=n_deaths,
            n_starved=n_starved,
            n_starved_on_time=n_starved_on_time,
            trades_total=trades_total,
            gross_wins_total=gross_wins,
            fees_total=self.ledger.cumulative_fees,
            injections_total=self.ledger.cumulative_injections,
            retired_total=self.ledger.retired_equity,
            scenario_breakeven=w_be,
            scenario_c_ratio=c_ratio,
            scenario_reward_risk=r,
            cascade_window=cfg.cascade_window,
            cascade_threshold=threshold,
            cascade_events=cascade_events,
            report_cadence=cfg.report_cadence,
            config=scenario_to_dict(cfg),
        )


def run(config: ScenarioConfig, universe: Universe | None = None) -> SimulationReport:
    """Execute a scenario to completion and return its report."""
    state = SimulationState(config, universe)
    while not state.done:
        state.step()
    return state.collect_report()
