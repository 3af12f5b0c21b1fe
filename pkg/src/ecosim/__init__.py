"""Deterministic evolutionary trading-ecosystem simulator.

A population of genome-driven agents trades a synthetic (or CSV-loaded)
multi-asset market through a friction-aware exchange, ages under a
metabolic lifespan rule, and evolves under selection, diversity quotas
and optional bailouts.  Every run is a pure function of its scenario
configuration, master seed included.
"""

from ecosim.market import (
    Candle,
    CandleSeries,
    FeatureWindow,
    Universe,
    compute_features,
    gen_correlated_universe,
    gen_factor_universe,
    gen_gbm,
    load_csv,
)
from ecosim.perception import (
    CellState,
    LstmWeights,
    Signal,
    attention,
    lstm_cell_step,
    oracle_signal,
    untrained_forward,
)
from ecosim.agents import Agent, Genome, Position, check_triggers, decide, update_lifespan
from ecosim.exchange import (
    Fill,
    FrictionConfig,
    Ledger,
    execute,
    liquidation_check,
    mark_to_market,
    settle_trade,
)
from ecosim.evolution import PopulationConfig, bailout, cull, protect_endangered, reproduce
from ecosim.engine import ScenarioConfig, SimulationState, run
from ecosim.analytics import (
    SimulationReport,
    breakeven_win_rate,
    churn_ratio,
    detect_cascades,
    directional_accuracy,
    expected_value,
    phenotypic_convergence,
    starvation_fraction,
)

__version__ = "0.1.0"
