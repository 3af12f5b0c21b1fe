"""Benchmark the per-bar population kernel: numba loop vs numpy twin.

Run from the repository root:

    python benchmarks/bench_kernels.py [n_agents] [n_bars]

Both backends process identical populations and markets; the script
verifies that final states agree bit-for-bit before reporting timings.
"""

import sys
import time

import numpy as np

from ecosim import kernels
from ecosim._rng import DOMAIN_AGENT, RngStream, derive_key
from ecosim.agents import Agent
from ecosim.engine import PopulationArrays
from ecosim.evolution import GenomeInitConfig, random_genome

N_ASSETS = 8

STATE_FIELDS = ("cash", "tau", "alive", "has_pos", "side", "qty", "entry_price",
                "entry_fee", "rng_ctr", "trades", "wins", "gross_pos",
                "gross_realized", "fees_paid", "realized_net", "epoch_net",
                "death_step", "death_cause")


def build_population(n, seed):
    rng = np.random.default_rng(seed)
    init = GenomeInitConfig(risk_price_range=(0.004, 0.02),
                            confidence_threshold_range=(0.5, 0.62))
    agents = []
    for i in range(n):
        genome = random_genome(init, rng, max_leverage=10.0)
        agents.append(Agent(
            id=i, genome=genome, cash=100.0,
            lifespan=float(rng.integers(600, 60_000)),
            bound_asset=i % N_ASSETS,
            rng=RngStream(derive_key(seed, DOMAIN_AGENT, i)),
        ))
    return PopulationArrays.from_agents(agents, max_leverage=10.0)


def drive(step_fn, pop, steps, seed):
    rng = np.random.default_rng(seed + 1)
    log_ret = rng.normal(0.0, 0.01, size=(N_ASSETS, steps + 1))
    closes = 100.0 * np.exp(np.cumsum(log_ret, axis=1))
    realized_up = closes[:, 1:] > closes[:, :-1]
    prev_sign = np.zeros((N_ASSETS, steps), dtype=np.int8)
    prev_sign[:, 1:] = np.sign(closes[:, 1:steps] - closes[:, :steps - 1]).astype(np.int8)
    p_shared = np.zeros(N_ASSETS)
    cap = 3 * len(pop) + 8
    ev = [np.zeros(cap, dtype=np.int64) for _ in range(4)]
    evf = [np.zeros(cap) for _ in range(3)]
    for t in range(steps):
        step_fn(
            t, 60.0, 30.0,
            np.ascontiguousarray(closes[:, t]),
            np.ascontiguousarray(prev_sign[:, t]),
            np.ascontiguousarray(realized_up[:, t]),
            p_shared,
            kernels.SIGNAL_INDEPENDENT, 0.512, 0.05, True,
            0.0004, 0.0002, True, 0.005, 1.0,
            pop.archetype, pop.leverage, pop.take_profit, pop.stop_loss,
            pop.conf_thr, pop.bound_asset,
            pop.cash, pop.tau, pop.alive, pop.has_pos, pop.side, pop.qty,
            pop.entry_price, pop.entry_fee,
            pop.rng_key, pop.rng_ctr,
            pop.trades, pop.wins, pop.gross_pos, pop.gross_realized,
            pop.fees_paid, pop.realized_net, pop.epoch_net,
            pop.death_step, pop.death_cause,
            ev[0], ev[1], ev[2], ev[3], evf[0], evf[1], evf[2],
        )


def time_backend(name, n_agents, n_bars, repeats=3):
    fn = kernels.get_backend(name)
    pop = build_population(n_agents, seed=1)
    drive(fn, pop, min(n_bars, 20), 1)    # warm-up: jit compile / caches
    best = float("inf")
    for _ in range(repeats):
        pop = build_population(n_agents, seed=1)
        t0 = time.perf_counter()
        drive(fn, pop, n_bars, 1)
        best = min(best, time.perf_counter() - t0)
    return best, pop


def main():
    n_agents = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    n_bars = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

    print(f"population {n_agents}, bars {n_bars}")
    t_numpy, pop_numpy = time_backend("numpy", n_agents, n_bars)
    print(f"numpy : {t_numpy:8.3f}s  ({n_agents * n_bars / t_numpy / 1e6:6.1f} M agent-bars/s)")
    try:
        t_numba, pop_numba = time_backend("numba", n_agents, n_bars)
    except ImportError:
        print("numba : unavailable")
        return
    print(f"numba : {t_numba:8.3f}s  ({n_agents * n_bars / t_numba / 1e6:6.1f} M agent-bars/s)")
    print(f"speedup: {t_numpy / t_numba:.2f}x")

    mismatch = [f for f in STATE_FIELDS
                if not np.array_equal(getattr(pop_numpy, f), getattr(pop_numba, f))]
    print("state check:", "bit-identical" if not mismatch else f"MISMATCH in {mismatch}")


if __name__ == "__main__":
    main()
