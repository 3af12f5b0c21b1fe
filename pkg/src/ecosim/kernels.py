"""Hot per-bar population kernels: numba-jitted loop with a numpy twin.

The simulation's inner loop updates every agent once per bar: mark to
market, forced liquidation, stop/take exits, signal draw, entry, lifespan
decay, death.  Two implementations share exact semantics and RNG streams:

* a scalar loop compiled with numba (fast path), and
* a vectorized pure-numpy twin (fallback, and the portability baseline).

Selection: environment variable ``ECOSIM_BACKEND`` = ``numba`` | ``numpy``
(default: numba when importable, numpy otherwise).  Both paths are run
against each other and against the object-level reference semantics in
the test suite.

Event kinds in the fill buffers: 0 entry, 1 take_profit, 2 stop_loss,
3 liquidation.  Phases run phase-major (all exits, then all entries, then
lifespan/deaths) in ascending agent order, so event logs are identical
across backends.
"""

from __future__ import annotations

import os

import numpy as np

from ecosim._rng import GAMMA, MIX_A, MIX_B, stream_uniform_array

EV_ENTRY = 0
EV_TAKE_PROFIT = 1
EV_STOP_LOSS = 2
EV_LIQUIDATION = 3

SIGNAL_INDEPENDENT = 0
SIGNAL_SHARED = 1

_U64_GAMMA = np.uint64(GAMMA)
_U64_MIX_A = np.uint64(MIX_A)
_U64_MIX_B = np.uint64(MIX_B)
_U64_1 = np.uint64(1)
_U64_11 = np.uint64(11)
_U64_27 = np.uint64(27)
_U64_30 = np.uint64(30)
_U64_31 = np.uint64(31)
_INV_2_53 = 1.0 / 9007199254740992.0


def _bar_step_loop(
    t, interval, alpha,
    close_t, prev_sign, realized_up, p_shared,
    signal_mode, accuracy, strength, allow_entry,
    taker_fee, slip_mean, slip_noisy, maint_frac, pos_frac,
    archetype, leverage, take_profit, stop_loss, conf_thr, bound_asset,
    cash, tau, alive, has_pos, side, qty, entry_price, entry_fee,
    rng_key, rng_ctr,
    trades, wins, gross_pos, gross_realized, fees_paid, realized_net, epoch_net,
    death_step, death_cause,
    ev_agent, ev_kind, ev_side, ev_asset, ev_qty, ev_price, ev_fee,
):
    """Scalar per-bar update (numba-compiled); see module docstring."""
    n = cash.shape[0]
    n_events = 0
    sig_count = 0.0
    sig_correct = 0.0
    profit_close = np.zeros(n, dtype=np.bool_)

    # Phase 1: exits (liquidation first, then stop before take) on the close.
    for i in range(n):
        if not alive[i] or not has_pos[i]:
            continue
        a = bound_asset[i]
        close = close_t[a]
        unreal = side[i] * (close - entry_price[i]) * qty[i]
        equity = cash[i] + unreal
        reason = -1
        if equity <= maint_frac * (qty[i] * entry_price[i]):
            reason = EV_LIQUIDATION
        else:
            r = side[i] * (close - entry_price[i]) / entry_price[i] * leverage[i]
            if r <= -stop_loss[i]:
                reason = EV_STOP_LOSS
            elif r >= take_profit[i]:
                reason = EV_TAKE_PROFIT
        if reason < 0:
            continue
        s = 0.0
        n_draws = 2 if reason == EV_LIQUIDATION else 1
        if slip_noisy:
            for _ in range(n_draws):
                z = rng_key[i] + (rng_ctr[i] + _U64_1) * _U64_GAMMA
                z = (z ^ (z >> _U64_30)) * _U64_MIX_A
                z = (z ^ (z >> _U64_27)) * _U64_MIX_B
                z = z ^ (z >> _U64_31)
                u = np.float64(z >> _U64_11) * _INV_2_53
                rng_ctr[i] = rng_ctr[i] + _U64_1
                s += 2.0 * slip_mean * u
        else:
            s = slip_mean * n_draws
        order_side = -side[i]
        price = close * (1.0 + s) if order_side == 1 else close * (1.0 - s)
        fee = qty[i] * price * taker_fee
        gross = side[i] * (price - entry_price[i]) * qty[i]
        net = gross - fee - entry_fee[i]
        cash[i] += gross - fee
        fees_paid[i] += fee
        gross_realized[i] += gross
        if gross > 0.0:
            gross_pos[i] += gross
        realized_net[i] += net
        epoch_net[i] += net
        trades[i] += 1
        if net > 0.0:
            wins[i] += 1
            profit_close[i] = True
        ev_agent[n_events] = i
        ev_kind[n_events] = reason
        ev_side[n_events] = order_side
        ev_asset[n_events] = a
        ev_qty[n_events] = qty[i]
        ev_price[n_events] = price
        ev_fee[n_events] = fee
        n_events += 1
        has_pos[i] = False
        qty[i] = 0.0
        entry_price[i] = 0.0
        entry_fee[i] = 0.0
        side[i] = 0

    # Phase 2: signals and entries for flat agents.
    if allow_entry:
        for i in range(n):
            if not alive[i] or has_pos[i] or cash[i] <= 0.0:
                continue
            a = bound_asset[i]
            if signal_mode == SIGNAL_SHARED:
                p = p_shared[a]
            else:
                z = rng_key[i] + (rng_ctr[i] + _U64_1) * _U64_GAMMA
                z = (z ^ (z >> _U64_30)) * _U64_MIX_A
                z = (z ^ (z >> _U64_27)) * _U64_MIX_B
                z = z ^ (z >> _U64_31)
                u = np.float64(z >> _U64_11) * _INV_2_53
                rng_ctr[i] = rng_ctr[i] + _U64_1
                correct = u < accuracy
                up = realized_up[a] if correct else not realized_up[a]
                p = 0.5 + strength if up else 0.5 - strength
                sig_count += 1.0
                if p > 0.5:
                    sig_correct += 1.0 if realized_up[a] else 0.0
                elif p < 0.5:
                    sig_correct += 0.0 if realized_up[a] else 1.0
                else:
                    sig_correct += 0.5
            if abs(p - 0.5) < conf_thr[i] - 0.5:
                continue
            sig_dir = 1 if p > 0.5 else (-1 if p < 0.5 else 0)
            arch = archetype[i]
            if arch == 0 or arch == 2:
                trade_side = sig_dir
            elif arch == 3:
                trade_side = -sig_dir
            else:
                trade_side = -prev_sign[a]
            if trade_side == 0:
                continue
            margin = cash[i] * pos_frac
            notional = margin * leverage[i]
            s = slip_mean
            if slip_noisy:
                z = rng_key[i] + (rng_ctr[i] + _U64_1) * _U64_GAMMA
                z = (z ^ (z >> _U64_30)) * _U64_MIX_A
                z = (z ^ (z >> _U64_27)) * _U64_MIX_B
                z = z ^ (z >> _U64_31)
                u = np.float64(z >> _U64_11) * _INV_2_53
                rng_ctr[i] = rng_ctr[i] + _U64_1
                s = 2.0 * slip_mean * u
            close = close_t[a]
            price = close * (1.0 + s) if trade_side == 1 else close * (1.0 - s)
            q = notional / price
            fee = q * price * taker_fee
            cash[i] -= fee
            fees_paid[i] += fee
            has_pos[i] = True
            side[i] = trade_side
            qty[i] = q
            entry_price[i] = price
            entry_fee[i] = fee
            ev_agent[n_events] = i
            ev_kind[n_events] = EV_ENTRY
            ev_side[n_events] = trade_side
            ev_asset[n_events] = a
            ev_qty[n_events] = q
            ev_price[n_events] = price
            ev_fee[n_events] = fee
            n_events += 1

    # Phase 3: lifespan decay, then deaths (expired clock or wiped equity).
    for i in range(n):
        if not alive[i]:
            continue
        new_tau = tau[i] - interval
        if profit_close[i]:
            new_tau += alpha
        tau[i] = new_tau if new_tau > 0.0 else 0.0
        cause = 0
        if tau[i] == 0.0:
            cause = 1
        else:
            a = bound_asset[i]
            equity = cash[i]
            if has_pos[i]:
                equity += side[i] * (close_t[a] - entry_price[i]) * qty[i]
            if equity <= 0.0:
                cause = 2
        if cause == 0:
            continue
        if has_pos[i]:
            a = bound_asset[i]
            close = close_t[a]
            s = 0.0
            if slip_noisy:
                for _ in range(2):
                    z = rng_key[i] + (rng_ctr[i] + _U64_1) * _U64_GAMMA
                    z = (z ^ (z >> _U64_30)) * _U64_MIX_A
                    z = (z ^ (z >> _U64_27)) * _U64_MIX_B
                    z = z ^ (z >> _U64_31)
                    u = np.float64(z >> _U64_11) * _INV_2_53
                    rng_ctr[i] = rng_ctr[i] + _U64_1
                    s += 2.0 * slip_mean * u
            else:
                s = slip_mean * 2
            order_side = -side[i]
            price = close * (1.0 + s) if order_side == 1 else close * (1.0 - s)
            fee = qty[i] * price * taker_fee
            gross = side[i] * (price - entry_price[i]) * qty[i]
            net = gross - fee - entry_fee[i]
            cash[i] += gross - fee
            fees_paid[i] += fee
            gross_realized[i] += gross
            if gross > 0.0:
                gross_pos[i] += gross
            realized_net[i] += net
            epoch_net[i] += net
            trades[i] += 1
            if net > 0.0:
                wins[i] += 1
            ev_agent[n_events] = i
            ev_kind[n_events] = EV_LIQUIDATION
            ev_side[n_events] = order_side
            ev_asset[n_events] = a
            ev_qty[n_events] = qty[i]
            ev_price[n_events] = price
            ev_fee[n_events] = fee
            n_events += 1
            has_pos[i] = False
            qty[i] = 0.0
            entry_price[i] = 0.0
            entry_fee[i] = 0.0
            side[i] = 0
        alive[i] = False
        death_step[i] = t
        death_cause[i] = cause

    return n_events, sig_count, sig_correct


def _uniform_batch(rng_key, rng_ctr, idx):
    """Next uniform for each stream in idx, advancing their counters."""
    u = stream_uniform_array(rng_key[idx], rng_ctr[idx])
    rng_ctr[idx] = rng_ctr[idx] + _U64_1
    return u


def _bar_step_numpy(
    t, interval, alpha,
    close_t, prev_sign, realized_up, p_shared,
    signal_mode, accuracy, strength, allow_entry,
    taker_fee, slip_mean, slip_noisy, maint_frac, pos_frac,
    archetype, leverage, take_profit, stop_loss, conf_thr, bound_asset,
    cash, tau, alive, has_pos, side, qty, entry_price, entry_fee,
    rng_key, rng_ctr,
    trades, wins, gross_pos, gross_realized, fees_paid, realized_net, epoch_net,
    death_step, death_cause,
    ev_agent, ev_kind, ev_side, ev_asset, ev_qty, ev_price, ev_fee,
):
    """Vectorized twin of _bar_step_loop with identical draws and events."""
    n = cash.shape[0]
    n_events = 0
    sig_count = 0.0
    sig_correct = 0.0
    profit_close = np.zeros(n, dtype=np.bool_)
    agent_close = close_t[bound_asset]

    def _emit(idx, kind, order_side, price, fee, start):
        k = len(idx)
        ev_agent[start:start + k] = idx
        ev_kind[start:start + k] = kind
        ev_side[start:start + k] = order_side
        ev_asset[start:start + k] = bound_asset[idx]
        ev_qty[start:start + k] = qty[idx]
        ev_price[start:start + k] = price
        ev_fee[start:start + k] = fee
        return start + k

    def _settle(idx, price, fee):
        gross = side[idx] * (price - entry_price[idx]) * qty[idx]
        net = gross - fee - entry_fee[idx]
        cash[idx] += gross - fee
        fees_paid[idx] += fee
        gross_realized[idx] += gross
        gross_pos[idx] += np.where(gross > 0.0, gross, 0.0)
        realized_net[idx] += net
        epoch_net[idx] += net
        trades[idx] += 1
        wins[idx] += (net > 0.0)
        return net

    def _clear(idx):
        has_pos[idx] = False
        qty[idx] = 0.0
        entry_price[idx] = 0.0
        entry_fee[idx] = 0.0
        side[idx] = 0

    # Phase 1: exits.
    open_mask = alive & has_pos
    if np.any(open_mask):
        unreal = side * (agent_close - entry_price) * qty
        equity = cash + unreal
        liq = open_mask & (equity <= maint_frac * (qty * entry_price))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = side * (agent_close - entry_price) / np.where(entry_price == 0.0, 1.0, entry_price) * leverage
        stop = open_mask & ~liq & (r <= -stop_loss)
        take = open_mask & ~liq & ~stop & (r >= take_profit)
        exit_mask = liq | stop | take
        idx = np.nonzero(exit_mask)[0]
        if len(idx):
            is_liq = liq[idx]
            if slip_noisy:
                u1 = _uniform_batch(rng_key, rng_ctr, idx)
                s = 2.0 * slip_mean * u1
                liq_idx = idx[is_liq]
                if len(liq_idx):
                    u2 = _uniform_batch(rng_key, rng_ctr, liq_idx)
                    s = s.copy()
                    s[is_liq] = s[is_liq] + 2.0 * slip_mean * u2
            else:
                s = np.where(is_liq, slip_mean * 2, slip_mean * 1)
            order_side = -side[idx]
            close = agent_close[idx]
            price = np.where(order_side == 1, close * (1.0 + s), close * (1.0 - s))
            fee = qty[idx] * price * taker_fee
            net = _settle(idx, price, fee)
            profit_close[idx] = net > 0.0
            kind = np.where(liq[idx], EV_LIQUIDATION,
                            np.where(stop[idx], EV_STOP_LOSS, EV_TAKE_PROFIT))
            n_events = _emit(idx, kind, order_side, price, fee, n_events)
            _clear(idx)

    # Phase 2: signals and entries.
    if allow_entry:
        flat = alive & ~has_pos & (cash > 0.0)
        idx = np.nonzero(flat)[0]
        if len(idx):
            assets = bound_asset[idx]
            if signal_mode == SIGNAL_SHARED:
                p = p_shared[assets]
            else:
                u = _uniform_batch(rng_key, rng_ctr, idx)
                correct = u < accuracy
                up = np.where(correct, realized_up[assets], ~realized_up[assets])
                p = np.where(up, 0.5 + strength, 0.5 - strength)
                sig_count = float(len(idx))
                matches = np.where(
                    p > 0.5, realized_up[assets].astype(np.float64),
                    np.where(p < 0.5, 1.0 - realized_up[assets], 0.5),
                )
                sig_correct = float(matches.sum())
            gate_ok = np.abs(p - 0.5) >= conf_thr[idx] - 0.5
            sig_dir = np.sign(p - 0.5).astype(np.int8)
            arch = archetype[idx]
            trade_side = np.where(
                (arch == 0) | (arch == 2), sig_dir,
                np.where(arch == 3, -sig_dir, -prev_sign[assets]),
            ).astype(np.int8)
            enter = gate_ok & (trade_side != 0)
            eidx = idx[enter]
            if len(eidx):
                eside = trade_side[enter]
                margin = cash[eidx] * pos_frac
                notional = margin * leverage[eidx]
                if slip_noisy:
                    s = 2.0 * slip_mean * _uniform_batch(rng_key, rng_ctr, eidx)
                else:
                    s = np.full(len(eidx), slip_mean)
                close = agent_close[eidx]
                price = np.where(eside == 1, close * (1.0 + s), close * (1.0 - s))
                q = notional / price
                fee = q * price * taker_fee
                cash[eidx] -= fee
                fees_paid[eidx] += fee
                has_pos[eidx] = True
                side[eidx] = eside
                qty[eidx] = q
                entry_price[eidx] = price
                entry_fee[eidx] = fee
                n_events = _emit(eidx, EV_ENTRY, eside, price, fee, n_events)

    # Phase 3: lifespan and deaths.
    live = np.nonzero(alive)[0]
    if len(live):
        new_tau = tau[live] - interval + np.where(profit_close[live], alpha, 0.0)
        tau[live] = np.where(new_tau > 0.0, new_tau, 0.0)
        expired = tau[live] == 0.0
        equity = cash[live] + np.where(
            has_pos[live],
            side[live] * (agent_close[live] - entry_price[live]) * qty[live],
            0.0,
        )
        cause = np.where(expired, 1, np.where(equity <= 0.0, 2, 0))
        dying = live[cause != 0]
        if len(dying):
            close_idx = dying[has_pos[dying]]
            if len(close_idx):
                if slip_noisy:
                    s = 2.0 * slip_mean * _uniform_batch(rng_key, rng_ctr, close_idx)
                    s = s + 2.0 * slip_mean * _uniform_batch(rng_key, rng_ctr, close_idx)
                else:
                    s = np.full(len(close_idx), slip_mean * 2)
                order_side = -side[close_idx]
                close = agent_close[close_idx]
                price = np.where(order_side == 1, close * (1.0 + s), close * (1.0 - s))
                fee = qty[close_idx] * price * taker_fee
                _settle(close_idx, price, fee)
                n_events = _emit(close_idx, EV_LIQUIDATION, order_side, price, fee, n_events)
                _clear(close_idx)
            alive[dying] = False
            death_step[dying] = t
            death_cause[dying] = cause[cause != 0]

    return n_events, sig_count, sig_correct


def _resolve_backend() -> tuple[str, object]:
    requested = os.environ.get("ECOSIM_BACKEND", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"ECOSIM_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", _bar_step_numpy
    try:
        import numba
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", _bar_step_numpy
    jitted = numba.njit(cache=True)(_bar_step_loop)
    return "numba", jitted


BACKEND, bar_step = _resolve_backend()


def get_backend(name: str):
    """Explicit backend lookup (used by the equivalence tests and benchmark)."""
    if name == "numpy":
        return _bar_step_numpy
    if name == "numba":
        import numba

        return numba.njit(cache=True)(_bar_step_loop)
    raise ValueError(f"unknown backend {name!r}")
