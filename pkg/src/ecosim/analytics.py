"""Financial-engineering formulas, forensic metrics and report assembly.

The per-trade expectation formulas anchor the whole experiment suite: a
population whose win rate sits below the breakeven line must bleed value
into fees, one above it must grow, and the simulator's job is to exhibit
both regimes.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ecosim.evolution import GenerationRecord

REASON_NAMES = ("entry", "take_profit", "stop_loss", "liquidation")
FORCED_REASONS = (2, 3)          # stop_loss, liquidation event codes


def expected_value(w: float, r: float, risk: float, c_trans: float) -> float:
    """Per-trade expected fractional return: W*(R*risk) - (1-W)*risk - C."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"win rate {w} outside [0, 1]")
    if r <= 0 or risk < 0 or c_trans < 0:
        raise ValueError("r must be > 0, risk and c_trans >= 0")
    return w * (r * risk) - (1.0 - w) * risk - c_trans


def breakeven_win_rate(c_ratio: float, r: float) -> float:
    """Minimum win rate with zero expected value: (1 + C_ratio) / (1 + R).

    Strictly increasing in C_ratio and decreasing in R.  Values above 1
    mean no win rate can overcome the costs (infeasible game).
    """
    if r <= 0:
        raise ValueError(f"reward-to-risk ratio must be > 0, got {r}")
    if c_ratio < 0:
        raise ValueError(f"cost ratio must be >= 0, got {c_ratio}")
    return (1.0 + c_ratio) / (1.0 + r)


def directional_accuracy(signals, realized) -> float:
    """Fraction of signals whose direction matches the realized move.

    `signals` are p_up probabilities, `realized` booleans (or signs) of the
    move; a signal exactly at 0.5 counts as half a match so a constant-0.5
    stream scores exactly 0.5.
    """
    p = np.asarray(signals, dtype=np.float64)
    up = np.asarray(realized)
    if up.dtype != np.bool_:
        up = up > 0
    if p.size == 0 or p.shape != up.shape:
        raise ValueError("signals and realized must be equal-length and non-empty")
    score = np.where(p > 0.5, up.astype(np.float64),
                     np.where(p < 0.5, 1.0 - up, 0.5))
    return float(score.mean())


def phenotypic_convergence(exposures: np.ndarray,
                           correlation: np.ndarray | None = None) -> float | None:
    """Mean pairwise similarity of signed exposure vectors, in [-1, 1].

    Rows are per-agent signed exposures over assets (notional * side /
    equity); zero rows (flat agents) are excluded.  With a correlation
    matrix the inner product is taken in return-correlation space, so
    one-hot exposures on two assets with correlation rho score rho; with
    the default identity metric this is the plain cosine.  Returns None
    when fewer than two agents are exposed (undefined, not an error).
    """
    x = np.asarray(exposures, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("exposures must be a 2-D (agents x assets) array")
    norms = np.linalg.norm(x, axis=1)
    x = x[norms > 0]
    n = x.shape[0]
    if n < 2:
        return None
    c = np.eye(x.shape[1]) if correlation is None else np.asarray(correlation, dtype=np.float64)
    xc = x @ c
    quad = np.einsum("ij,ij->i", xc, x)
    quad = np.maximum(quad, 1e-300)
    xn = x / np.sqrt(quad)[:, None]
    sims = xn @ c @ xn.T
    total = sims.sum() - np.trace(sims)
    return float(total / (n * (n - 1)))


def one_hot_convergence(net_signed_counts: np.ndarray, n_exposed: int,
                        correlation: np.ndarray | None = None) -> float | None:
    """Fast path of phenotypic_convergence for one-asset-per-agent exposures.

    `net_signed_counts[a]` is (longs - shorts) on asset a; the pairwise sum
    collapses to u' C u - n for unit one-hot rows.
    """
    if n_exposed < 2:
        return None
    u = np.asarray(net_signed_counts, dtype=np.float64)
    c = np.eye(len(u)) if correlation is None else correlation
    total = float(u @ c @ u) - n_exposed
    return total / (n_exposed * (n_exposed - 1))


@dataclass(frozen=True)
class CascadeEvent:
    """Cluster of forced exits: peak bar, total count, total notional."""

    bar: int
    count: int
    notional: float


def detect_cascades(fill_steps, fill_reasons, fill_notionals, n_bars: int,
                    window_bars: int = 3, threshold: int = 25) -> list[CascadeEvent]:
    """Find clusters of forced exits (stop-loss or liquidation fills).

    A window of `window_bars` consecutive bars qualifies when it holds at
    least `threshold` forced exits; overlapping qualifying windows merge
    into one event spanning their union, reported at the bar with the most
    forced exits inside the span.
    """
    steps = np.asarray(fill_steps, dtype=np.int64)
    reasons = np.asarray(fill_reasons, dtype=np.int64)
    notionals = np.asarray(fill_notionals, dtype=np.float64)
    forced = np.isin(reasons, FORCED_REASONS)
    if not np.any(forced) or n_bars <= 0:
        return []
    per_bar = np.bincount(steps[forced], minlength=n_bars).astype(np.int64)
    per_bar_notional = np.bincount(steps[forced], weights=notionals[forced], minlength=n_bars)

    window = max(1, int(window_bars))
    csum = np.concatenate(([0], np.cumsum(per_bar)))
    n_starts = max(1, n_bars - window + 1)
    starts = np.arange(n_starts)
    counts = csum[np.minimum(starts + window, n_bars)] - csum[starts]
    qualifying = counts >= threshold

    events: list[CascadeEvent] = []
    i = 0
    while i < n_starts:
        if not qualifying[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_starts and qualifying[j + 1]:
            j += 1
        lo, hi = i, min(j + window, n_bars)        # union span [lo, hi)
        span_counts = per_bar[lo:hi]
        peak = lo + int(np.argmax(span_counts))
        events.append(CascadeEvent(
            bar=peak,
            count=int(span_counts.sum()),
            notional=float(per_bar_notional[lo:hi].sum()),
        ))
        i = j + window
    return events


@dataclass
class FrictionMath:
    """Inputs of the per-trade expectation identity."""

    win_rate: float
    reward_risk: float
    risk: float
    c_trans: float

    @property
    def c_ratio(self) -> float:
        return self.c_trans / self.risk

    def expected_value(self) -> float:
        return expected_value(self.win_rate, self.reward_risk, self.risk, self.c_trans)

    def breakeven(self) -> float:
        return breakeven_win_rate(self.c_ratio, self.reward_risk)


@dataclass
class SimulationReport:
    """Full run output: per-step series, epoch records, fills, final metrics."""

    scenario_name: str
    seed: int
    steps: int
    n_assets: int
    initial_capital: float
    series: dict[str, np.ndarray]
    generation_records: list[GenerationRecord]
    fills: dict[str, np.ndarray]
    signals_count: float
    signals_correct: float
    n_agents_ever: int
    n_deaths: int
    n_starved: int
    n_starved_on_time: int
    trades_total: int
    gross_wins_total: float
    fees_total: float
    injections_total: float
    retired_total: float
    scenario_breakeven: float
    scenario_c_ratio: float
    scenario_reward_risk: float
    cascade_window: int = 3
    cascade_threshold: int = 25
    cascade_events: list[CascadeEvent] = field(default_factory=list)
    report_cadence: int = 1
    config: dict = field(default_factory=dict)

    @property
    def final_total_equity(self) -> float:
        return float(self.series["total_equity"][-1])

    @property
    def final_aum(self) -> float:
        return float(self.series["aum"][-1])

    @property
    def final_roi(self) -> float:
        return float(self.series["roi"][-1])

    @property
    def final_group_cash(self) -> float:
        return float(self.series["group_cash"][-1])

    @property
    def achieved_accuracy(self) -> float:
        if self.signals_count == 0:
            return float("nan")
        return self.signals_correct / self.signals_count

    def churn(self) -> float | None:
        return churn_ratio(self)

    def starvation(self) -> float:
        return starvation_fraction(self)

    def convergence_mean(self) -> float:
        conv = self.series["convergence"]
        defined = conv[~np.isnan(conv)]
        return float(defined.mean()) if len(defined) else float("nan")

    def summary_dict(self) -> dict:
        churn = self.churn()
        return {
            "config": self.config,
            "scenario": self.scenario_name,
            "seed": self.seed,
            "steps": self.steps,
            "initial_capital": self.initial_capital,
            "final_total_equity": self.final_total_equity,
            "final_aum": self.final_aum,
            "final_roi": self.final_roi,
            "final_group_cash": self.final_group_cash,
            "cumulative_fees": self.fees_total,
            "cumulative_injections": self.injections_total,
            "retired_equity": self.retired_total,
            "trades_total": self.trades_total,
            "agents_ever": self.n_agents_ever,
            "deaths": self.n_deaths,
            "starvation_fraction": self.starvation(),
            "achieved_accuracy": self.achieved_accuracy,
            "scenario_breakeven_win_rate": self.scenario_breakeven,
            "scenario_c_ratio": self.scenario_c_ratio,
            "scenario_reward_risk": self.scenario_reward_risk,
            "churn_ratio": None if churn is None else (churn if math.isfinite(churn) else "inf"),
            "convergence_mean": _nan_to_none(self.convergence_mean()),
            "cascade_events": [
                {"bar": e.bar, "count": e.count, "notional": e.notional}
                for e in self.cascade_events
            ],
        }

    def write(self, out_dir: str) -> list[str]:
        """Emit all report artifacts into out_dir (atomic writes)."""
        os.makedirs(out_dir, exist_ok=True)
        written = []
        written.append(_write_json(os.path.join(out_dir, "report.json"), self.summary_dict()))

        # report_cadence thins emitted series rows; the final bar always stays.
        keep = np.zeros(self.steps, dtype=bool)
        keep[::self.report_cadence] = True
        keep[-1] = True
        series_cols = ["step", "aum", "total_equity", "group_cash", "roi", "bar_pnl",
                       "population", "exposed", "convergence", "forced_exits",
                       "cum_fees", "cum_injections", "retired_equity"]
        written.append(_write_csv(os.path.join(out_dir, "series.csv"), series_cols,
                                  [self.series[c][keep] for c in series_cols]))

        gen_cols = ["epoch", "step", "births", "deaths", "bailouts",
                    "census_trend_follower", "census_grid_mean_reverter",
                    "census_scalper", "census_contrarian",
                    "mean_equity", "median_equity", "group_cash"]
        gen_rows = [
            [g.epoch, g.step, g.births, g.deaths, g.bailouts,
             g.census["trend_follower"], g.census["grid_mean_reverter"],
             g.census["scalper"], g.census["contrarian"],
             g.mean_equity, g.median_equity, g.group_cash]
            for g in self.generation_records
        ]
        written.append(_write_csv_rows(os.path.join(out_dir, "generations.csv"), gen_cols, gen_rows))

        fill_cols = ["step", "agent_id", "asset", "side", "qty", "price", "fee", "reason"]
        reason_names = np.array(REASON_NAMES)[self.fills["reason"]] if len(self.fills["reason"]) else np.array([], dtype=object)
        written.append(_write_csv(os.path.join(out_dir, "fills.csv"), fill_cols,
                                  [self.fills["step"], self.fills["agent_id"], self.fills["asset"],
                                   self.fills["side"], self.fills["qty"], self.fills["price"],
                                   self.fills["fee"], reason_names]))

        panels = [
            ("fig1a_aum_vs_equity.csv", ["step", "aum", "total_equity"]),
            ("fig1b_group_cash.csv", ["step", "group_cash"]),
            ("fig1c_roi.csv", ["step", "roi"]),
            ("fig1d_bar_pnl.csv", ["step", "bar_pnl"]),
        ]
        for fname, cols in panels:
            written.append(_write_csv(os.path.join(out_dir, fname), cols,
                                      [self.series[c][keep] for c in cols]))
        return written


def churn_ratio(report: SimulationReport) -> float | None:
    """Cumulative fees over cumulative gross positive trade PnL.

    A value above 1 means fees ate more than every winning trade's gross
    gain combined.  None when no trade ever closed (undefined); +inf when
    trades closed but none won gross.
    """
    if report.trades_total == 0:
        return None
    if report.gross_wins_total <= 0.0:
        return float("inf")
    return report.fees_total / report.gross_wins_total


def starvation_fraction(report: SimulationReport) -> float:
    """Share of all agents ever alive that never traded and starved out."""
    if report.n_agents_ever == 0:
        return 0.0
    return report.n_starved / report.n_agents_ever


def _nan_to_none(x: float):
    return None if (isinstance(x, float) and math.isnan(x)) else x


def _format_cell(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return str(v)


def _atomic_write(path: str, payload: str) -> str:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def _write_json(path: str, doc: dict) -> str:
    return _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: str, cols: list[str], arrays: list) -> str:
    n = len(arrays[0]) if arrays else 0
    lines = [",".join(cols)]
    for i in range(n):
        lines.append(",".join(_format_cell(a[i]) for a in arrays))
    return _atomic_write(path, "\n".join(lines) + "\n")


def _write_csv_rows(path: str, cols: list[str], rows: list[list]) -> str:
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_format_cell(v) for v in row))
    return _atomic_write(path, "\n".join(lines) + "\n")
