"""Selection, reproduction, diversity quota and soft-budget bailouts.

Runs between simulation steps on epoch boundaries.  Fitness is realized
net PnL over the epoch (floating PnL deliberately excluded): parents come
fitness-proportionally from the top elite fraction, children carry the
parent genome under multiplicative log-normal mutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ecosim._rng import DOMAIN_AGENT, RngStream, derive_key
from ecosim.agents import (
    ARCHETYPE_NAMES,
    CONTRARIAN,
    DEFAULT_INITIAL_CASH,
    DEFAULT_INITIAL_LIFESPAN,
    Agent,
    Genome,
)
from ecosim.exchange import Ledger


@dataclass
class GenomeInitConfig:
    """Initial genome distribution.

    Stops are drawn as a price-move risk and scaled by the drawn leverage
    into the leveraged stop_loss gene; take_profit = reward_risk * stop_loss,
    so reward_risk pins the population's reward-to-risk ratio.
    """

    leverage_range: tuple[float, float] = (2.0, 8.0)
    risk_price_range: tuple[float, float] = (0.008, 0.016)
    reward_risk: float = 1.0
    confidence_threshold_range: tuple[float, float] = (0.5, 0.6)
    archetype_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def validate(self) -> None:
        for lo, hi in (self.leverage_range, self.risk_price_range,
                       self.confidence_threshold_range):
            if lo > hi:
                raise ValueError(f"range ({lo}, {hi}) inverted")
        if self.reward_risk <= 0:
            raise ValueError("reward_risk must be positive")
        if min(self.archetype_weights) < 0 or sum(self.archetype_weights) <= 0:
            raise ValueError("archetype_weights must be non-negative and sum > 0")


@dataclass
class PopulationConfig:
    size: int = 500
    initial_cash: float = DEFAULT_INITIAL_CASH
    initial_lifespan: float = DEFAULT_INITIAL_LIFESPAN
    metabolic_reward: float = 30.0
    protected_quota: float = 0.05
    bailout_enabled: bool = True
    bailout_grant: float = 100.0
    mutation_scale: float = 0.1
    elite_fraction: float = 0.2
    epoch_seconds: float = 300.0
    position_fraction: float = 1.0
    max_leverage: float = 10.0
    genome_init: GenomeInitConfig = field(default_factory=GenomeInitConfig)

    def validate(self) -> None:
        if self.size < 1:
            raise ValueError("population size must be >= 1")
        if not 0.0 <= self.protected_quota <= 1.0:
            raise ValueError("protected_quota must be in [0, 1]")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must be in (0, 1]")
        if not 0.0 < self.position_fraction <= 1.0:
            raise ValueError("position_fraction must be in (0, 1]")
        if self.epoch_seconds <= 0:
            raise ValueError("epoch_seconds must be positive")
        if self.mutation_scale < 0:
            raise ValueError("mutation_scale must be >= 0")
        self.genome_init.validate()


@dataclass
class GenerationRecord:
    """Per-epoch forensics snapshot."""

    epoch: int
    step: int
    births: int
    deaths: int
    bailouts: int
    census: dict[str, int]
    mean_equity: float
    median_equity: float
    group_cash: float


def random_genome(init: GenomeInitConfig, rng: np.random.Generator,
                  max_leverage: float) -> Genome:
    lev = rng.uniform(*init.leverage_range)
    risk = rng.uniform(*init.risk_price_range)
    stop = risk * lev
    arch = int(rng.choice(4, p=np.asarray(init.archetype_weights) / sum(init.archetype_weights)))
    g = Genome(
        leverage=lev,
        take_profit=init.reward_risk * stop,
        stop_loss=stop,
        confidence_threshold=rng.uniform(*init.confidence_threshold_range),
        archetype=arch,
        max_leverage=max_leverage,
    )
    return g.clamped()


def spawn_agent(agent_id: int, genome: Genome, config: PopulationConfig,
                master_seed: int, bound_asset: int, born_step: int,
                cash: float | None = None, generation: int = 0,
                bailout_count: int = 0) -> Agent:
    return Agent(
        id=agent_id,
        genome=genome,
        cash=config.initial_cash if cash is None else cash,
        lifespan=config.initial_lifespan,
        bound_asset=bound_asset,
        born_step=born_step,
        generation=generation,
        bailout_count=bailout_count,
        rng=RngStream(derive_key(master_seed, DOMAIN_AGENT, agent_id)),
    )


def cull(population: list[Agent]) -> tuple[list[Agent], list[Agent]]:
    """Split the population into survivors and dead.

    Dead agents are those with an expired lifespan or non-positive equity;
    the engine has already force-closed their positions and frozen their
    equity, so this is a pure predicate filter.
    """
    survivors = [a for a in population if a.alive and a.lifespan > 0 and a.cash > 0]
    dead = [a for a in population if not (a.alive and a.lifespan > 0 and a.cash > 0)]
    return survivors, dead


def mutate_genome(genome: Genome, scale: float, rng: np.random.Generator) -> Genome:
    """Multiplicative log-normal mutation per continuous gene, clamped to bounds."""
    if scale == 0.0:
        return Genome(**{**genome.__dict__})
    factors = np.exp(rng.normal(0.0, scale, size=4))
    child = Genome(
        leverage=genome.leverage * factors[0],
        take_profit=genome.take_profit * factors[1],
        stop_loss=genome.stop_loss * factors[2],
        confidence_threshold=genome.confidence_threshold * factors[3],
        archetype=genome.archetype,
        max_leverage=genome.max_leverage,
    )
    return child.clamped()


def _elite(survivors: list[Agent], elite_fraction: float) -> list[Agent]:
    ranked = sorted(survivors, key=lambda a: (-a.epoch_realized_net, a.id))
    k = max(1, math.ceil(elite_fraction * len(ranked)))
    return ranked[:k]


def reproduce(survivors: list[Agent], n_slots: int, config: PopulationConfig,
              rng: np.random.Generator, master_seed: int, next_id: int,
              born_step: int, next_asset: int, n_assets: int) -> list[Agent]:
    """Children of the elite, fitness-proportional within the top fraction.

    Fitness weights are epoch PnL shifted to be positive (uniform when the
    elite is flat).  Children inherit the parent's archetype, mutate the
    continuous genes, start with the bailout grant and a fresh lifespan,
    and bind to assets round-robin.
    """
    if n_slots <= 0:
        return []
    offspring: list[Agent] = []
    if survivors:
        elite = _elite(survivors, config.elite_fraction)
        fitness = np.array([a.epoch_realized_net for a in elite])
        weights = fitness - fitness.min() + 1e-9
        weights /= weights.sum()
        parent_idx = rng.choice(len(elite), size=n_slots, p=weights)
        for k in range(n_slots):
            parent = elite[int(parent_idx[k])]
            genome = mutate_genome(parent.genome, config.mutation_scale, rng)
            child = spawn_agent(
                next_id + k, genome, config, master_seed,
                bound_asset=(next_asset + k) % n_assets, born_step=born_step,
                cash=config.bailout_grant, generation=parent.generation + 1,
                bailout_count=parent.bailout_count + 1,
            )
            offspring.append(child)
    else:
        for k in range(n_slots):
            genome = random_genome(config.genome_init, rng, config.max_leverage)
            child = spawn_agent(
                next_id + k, genome, config, master_seed,
                bound_asset=(next_asset + k) % n_assets, born_step=born_step,
                cash=config.bailout_grant, generation=0, bailout_count=1,
            )
            offspring.append(child)
    return offspring


def protect_endangered(population: list[Agent], config: PopulationConfig,
                       rng: np.random.Generator | None = None) -> list[Agent]:
    """Enforce the contrarian floor: at least ceil(quota * N) contrarians.

    Converts the lowest-fitness non-contrarians' archetype gene (other
    genes untouched) until the quota holds.  Deterministic; the rng
    parameter is accepted for interface symmetry but unused.
    """
    n = len(population)
    required = math.ceil(config.protected_quota * n)
    census = sum(1 for a in population if a.genome.archetype == CONTRARIAN)
    if census >= required:
        return population
    candidates = sorted(
        (a for a in population if a.genome.archetype != CONTRARIAN),
        key=lambda a: (a.epoch_realized_net, a.id),
    )
    for agent in candidates[: required - census]:
        agent.genome.archetype = CONTRARIAN
    return population


def bailout(ledger: Ledger, n_dead: int, config: PopulationConfig) -> Ledger:
    """Debit the treasury for replacement grants (the soft budget constraint).

    group_cash may go negative; cumulative_injections records the printed
    amount.  With bailouts disabled the ledger is untouched and the
    population simply shrinks.
    """
    if not config.bailout_enabled or n_dead <= 0:
        return ledger
    ledger.record_bailout(n_dead, config.bailout_grant)
    return ledger


def census_by_archetype(population: list[Agent]) -> dict[str, int]:
    counts = dict.fromkeys(ARCHETYPE_NAMES, 0)
    for a in population:
        counts[ARCHETYPE_NAMES[a.genome.archetype]] += 1
    return counts
