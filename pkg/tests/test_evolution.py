"""Selection, reproduction, diversity quota and bailout accounting."""

import math

import numpy as np
import pytest

from ecosim.agents import CONTRARIAN, SCALPER, TREND_FOLLOWER, Agent, Genome
from ecosim._rng import RngStream
from ecosim.evolution import (
    GenomeInitConfig,
    PopulationConfig,
    bailout,
    census_by_archetype,
    cull,
    mutate_genome,
    protect_endangered,
    random_genome,
    reproduce,
)
from ecosim.exchange import Ledger


def make_agent(agent_id, lifespan=3600.0, cash=100.0, archetype=TREND_FOLLOWER,
               epoch_pnl=0.0, alive=True):
    a = Agent(
        id=agent_id,
        genome=Genome(leverage=5.0, take_profit=0.05, stop_loss=0.05,
                      confidence_threshold=0.55, archetype=archetype),
        cash=cash, lifespan=lifespan, bound_asset=0, rng=RngStream(agent_id),
    )
    a.alive = alive
    a.epoch_realized_net = epoch_pnl
    return a


def config(**overrides):
    overrides.setdefault("size", 10)
    cfg = PopulationConfig(**overrides)
    cfg.validate()
    return cfg


def test_cull_keeps_healthy_population():
    pop = [make_agent(i) for i in range(5)]
    survivors, dead = cull(pop)
    assert len(survivors) == 5 and not dead


def test_cull_removes_expired_agent():
    pop = [make_agent(0), make_agent(1, lifespan=0.0, alive=False), make_agent(2)]
    survivors, dead = cull(pop)
    assert [a.id for a in dead] == [1]
    assert [a.id for a in survivors] == [0, 2]


def test_cull_matches_predicate_filter_oracle():
    rng = np.random.default_rng(0)
    pop = []
    for i in range(200):
        lifespan = float(rng.choice([0.0, 100.0, 3600.0]))
        cash = float(rng.choice([-5.0, 0.0, 50.0, 100.0]))
        alive = lifespan > 0 and cash > 0
        pop.append(make_agent(i, lifespan=lifespan, cash=cash, alive=alive))
    survivors, dead = cull(pop)
    expected_dead = {a.id for a in pop if not (a.lifespan > 0 and a.cash > 0)}
    assert {a.id for a in dead} == expected_dead
    assert {a.id for a in survivors} == {a.id for a in pop} - expected_dead


def test_mutation_scale_zero_copies_genome():
    cfg = config(mutation_scale=0.0)
    parent = make_agent(0)
    rng = np.random.default_rng(1)
    child_genome = mutate_genome(parent.genome, 0.0, rng)
    assert child_genome == parent.genome


def test_reproduce_zero_slots():
    cfg = config()
    rng = np.random.default_rng(1)
    assert reproduce([make_agent(0)], 0, cfg, rng, 1, 10, 0, 0, 4) == []


def test_reproduce_single_survivor_lineage_and_mutation_distribution():
    cfg = config(mutation_scale=0.1)
    parent = make_agent(3)
    rng = np.random.default_rng(2)
    n = 10_000
    children = reproduce([parent], n, cfg, rng, master_seed=1, next_id=100,
                         born_step=5, next_asset=0, n_assets=4)
    assert len(children) == n
    assert all(c.genome.archetype == parent.genome.archetype for c in children)
    assert all(c.cash == cfg.bailout_grant for c in children)
    assert all(c.lifespan == cfg.initial_lifespan for c in children)
    assert [c.id for c in children[:3]] == [100, 101, 102]
    assert [c.bound_asset for c in children[:5]] == [0, 1, 2, 3, 0]
    # Log of the mutation factor should be N(0, 0.1): check both moments.
    logs = np.log([c.genome.leverage / parent.genome.leverage for c in children])
    assert abs(logs.mean()) < 0.005
    assert abs(logs.std() - 0.1) / 0.1 < 0.05


def test_reproduce_prefers_profitable_elite():
    cfg = config(elite_fraction=0.2, mutation_scale=0.0)
    survivors = [make_agent(i, epoch_pnl=float(i)) for i in range(10)]
    rng = np.random.default_rng(3)
    children = reproduce(survivors, 500, cfg, rng, 1, 100, 0, 0, 4)
    # Elite of 10 at fraction 0.2 is the top 2 by epoch PnL: ids 8 and 9.
    assert {c.generation for c in children} == {1}
    levs = {c.genome.leverage for c in children}
    assert levs == {survivors[8].genome.leverage}


def test_reproduce_without_survivors_spawns_random_genomes():
    cfg = config()
    rng = np.random.default_rng(4)
    children = reproduce([], 5, cfg, rng, 1, 0, 0, 2, 4)
    assert len(children) == 5
    for c in children:
        c.genome.validate()
        assert c.bailout_count == 1


def test_protect_quota_already_met():
    cfg = config(protected_quota=0.05, size=100)
    pop = [make_agent(i, archetype=CONTRARIAN if i < 10 else SCALPER)
           for i in range(100)]
    before = census_by_archetype(pop)
    protect_endangered(pop, cfg)
    assert census_by_archetype(pop) == before


def test_protect_converts_exactly_to_ceiling():
    cfg = config(protected_quota=0.05, size=100)
    pop = [make_agent(i, archetype=SCALPER, epoch_pnl=float(i)) for i in range(100)]
    protect_endangered(pop, cfg)
    census = census_by_archetype(pop)
    assert census["contrarian"] == 5
    # The five lowest-fitness agents were converted, genes untouched.
    converted = [a for a in pop if a.genome.archetype == CONTRARIAN]
    assert sorted(a.id for a in converted) == [0, 1, 2, 3, 4]
    assert all(a.genome.leverage == 5.0 for a in converted)


def test_protect_single_agent_ceiling_edge():
    cfg = PopulationConfig(size=1, protected_quota=0.05)
    pop = [make_agent(0, archetype=TREND_FOLLOWER)]
    protect_endangered(pop, cfg)
    assert pop[0].genome.archetype == CONTRARIAN


def test_bailout_ledger_arithmetic():
    cfg = config(bailout_enabled=True, bailout_grant=100.0)
    ledger = Ledger(initial_capital=1000.0)
    bailout(ledger, 0, cfg)
    assert ledger.group_cash == 0.0 and ledger.cumulative_injections == 0.0
    bailout(ledger, 3, cfg)
    assert ledger.group_cash == -300.0
    assert ledger.cumulative_injections == 300.0


def test_bailout_disabled_is_noop():
    cfg = config(bailout_enabled=False)
    ledger = Ledger(initial_capital=1000.0)
    bailout(ledger, 7, cfg)
    assert ledger.group_cash == 0.0
    assert ledger.cumulative_injections == 0.0


def test_random_genome_respects_bounds_and_reward_risk():
    init = GenomeInitConfig(reward_risk=1.0)
    rng = np.random.default_rng(5)
    for _ in range(500):
        g = random_genome(init, rng, max_leverage=10.0)
        g.validate()
        assert math.isclose(g.take_profit, g.stop_loss, rel_tol=1e-12)


def test_population_config_validation():
    with pytest.raises(ValueError):
        PopulationConfig(size=0).validate()
    with pytest.raises(ValueError):
        PopulationConfig(protected_quota=1.5).validate()
    with pytest.raises(ValueError):
        PopulationConfig(epoch_seconds=0).validate()
