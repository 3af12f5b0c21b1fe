"""Synthetic price universes, OHLCV ingestion and observation features.

Prices come either from a seeded geometric-Brownian generator (optionally
cross-correlated across assets) or from a validated CSV file.  Features
computed over a trailing window are what downstream perception sees.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ecosim._rng import DOMAIN_MARKET, derive_key

LOOKBACK = 60
ATR_PERIOD = 14
DEFAULT_START_TIMESTAMP = 1_700_000_000


class CsvParseError(ValueError):
    """Malformed CSV row; carries the 1-based line number."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    """A structural invariant of a candle series or universe failed."""


class WindowUnderflowError(ValueError):
    """Not enough history before index t to fill the feature window."""


@dataclass(frozen=True)
class Candle:
    """One OHLCV bar. Prices positive, low/high bracket open/close."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValidationError(f"non-positive price at timestamp {self.timestamp}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValidationError(f"high/low do not bracket open/close at timestamp {self.timestamp}")
        if self.volume < 0:
            raise ValidationError(f"negative volume at timestamp {self.timestamp}")


class CandleSeries:
    """Column-oriented candle sequence with constant bar interval."""

    __slots__ = ("timestamps", "opens", "highs", "lows", "closes", "volumes", "interval")

    def __init__(self, timestamps, opens, highs, lows, closes, volumes, interval: int):
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.opens = np.asarray(opens, dtype=np.float64)
        self.highs = np.asarray(highs, dtype=np.float64)
        self.lows = np.asarray(lows, dtype=np.float64)
        self.closes = np.asarray(closes, dtype=np.float64)
        self.volumes = np.asarray(volumes, dtype=np.float64)
        self.interval = int(interval)

    def __len__(self) -> int:
        return len(self.closes)

    def __getitem__(self, i: int) -> Candle:
        return Candle(
            timestamp=int(self.timestamps[i]),
            open=float(self.opens[i]),
            high=float(self.highs[i]),
            low=float(self.lows[i]),
            close=float(self.closes[i]),
            volume=float(self.volumes[i]),
        )

    def validate(self) -> None:
        if len(self) == 0:
            raise ValidationError("empty candle series")
        if np.any(self.lows <= 0) or np.any(self.closes <= 0):
            bad = int(np.argmax((self.lows <= 0) | (self.closes <= 0)))
            raise ValidationError(f"non-positive price at timestamp {self.timestamps[bad]}")
        oc_min = np.minimum(self.opens, self.closes)
        oc_max = np.maximum(self.opens, self.closes)
        bad_mask = (self.lows > oc_min) | (self.highs < oc_max)
        if np.any(bad_mask):
            bad = int(np.argmax(bad_mask))
            raise ValidationError(f"high/low do not bracket open/close at timestamp {self.timestamps[bad]}")
        if np.any(self.volumes < 0):
            bad = int(np.argmax(self.volumes < 0))
            raise ValidationError(f"negative volume at timestamp {self.timestamps[bad]}")
        if len(self) > 1:
            gaps = np.diff(self.timestamps)
            if np.any(gaps != self.interval):
                bad = int(np.argmax(gaps != self.interval))
                raise ValidationError(
                    f"timestamp gap {gaps[bad]} != interval {self.interval} "
                    f"after timestamp {self.timestamps[bad]}"
                )


@dataclass
class Universe:
    """Aligned multi-asset candle panel plus its generation-time correlation."""

    assets: list[str]
    series: dict[str, CandleSeries]
    correlation: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.series[self.assets[0]])

    @property
    def interval(self) -> int:
        return self.series[self.assets[0]].interval

    def closes_matrix(self) -> np.ndarray:
        """(n_assets, n_steps) close prices in asset order."""
        return np.stack([self.series[a].closes for a in self.assets])

    def validate(self) -> None:
        if not self.assets:
            raise ValidationError("universe has no assets")
        ref = self.series[self.assets[0]].timestamps
        for name in self.assets:
            s = self.series[name]
            s.validate()
            if len(s.timestamps) != len(ref) or np.any(s.timestamps != ref):
                raise ValidationError(f"asset {name!r} timestamps misaligned with {self.assets[0]!r}")
        if self.correlation is not None:
            c = self.correlation
            if c.shape != (len(self.assets), len(self.assets)):
                raise ValidationError("correlation shape does not match asset count")
            if not np.allclose(c, c.T) or not np.allclose(np.diag(c), 1.0):
                raise ValidationError("correlation must be symmetric with unit diagonal")


@dataclass
class FeatureWindow:
    """Trailing observation block: LOOKBACK rows by 3 feature columns.

    Columns: z-scored close (window-local mean/std), one-bar log-return,
    trailing true-range average normalized by that bar's close.
    """

    values: np.ndarray
    end_timestamp: int

    def validate(self) -> None:
        if self.values.shape[0] != LOOKBACK:
            raise ValidationError(f"feature window has {self.values.shape[0]} rows, expected {LOOKBACK}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature window contains non-finite values")


def _make_candles(closes: np.ndarray, start_price: float, half_ranges: np.ndarray,
                  interval: int, start_timestamp: int) -> CandleSeries:
    """Assemble OHLCV bars around a close path.

    Open of bar k is close of bar k-1; high/low extend beyond the open/close
    bracket by a non-negative amount (cosmetic: execution references closes).
    """
    n = len(closes)
    opens = np.empty(n)
    opens[0] = start_price
    opens[1:] = closes[:-1]
    oc_max = np.maximum(opens, closes)
    oc_min = np.minimum(opens, closes)
    highs = oc_max * (1.0 + np.abs(half_ranges))
    lows = oc_min / (1.0 + np.abs(half_ranges))
    ts = start_timestamp + interval * np.arange(n, dtype=np.int64)
    volumes = np.ones(n)
    return CandleSeries(ts, opens, highs, lows, closes, volumes, interval)


def gen_gbm(n_steps: int, interval: int, start_price: float, drift: float,
            volatility: float, seed: int,
            start_timestamp: int = DEFAULT_START_TIMESTAMP) -> CandleSeries:
    """Geometric-Brownian close path as an OHLCV series.

    Per-bar log-return is drift - vol^2/2 + vol * z.  Deterministic for a
    fixed seed; zero drift and volatility give a constant path.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if start_price <= 0:
        raise ValueError(f"start_price must be positive, got {start_price}")
    if volatility < 0:
        raise ValueError(f"volatility must be >= 0, got {volatility}")
    rng = np.random.default_rng(derive_key(seed, DOMAIN_MARKET, 0))
    z = rng.standard_normal(n_steps)
    log_returns = (drift - 0.5 * volatility**2) + volatility * z
    closes = start_price * np.exp(np.cumsum(log_returns))
    half_ranges = 0.5 * volatility * np.abs(rng.standard_normal(n_steps))
    return _make_candles(closes, start_price, half_ranges, interval, start_timestamp)


def gen_correlated_universe(n_assets: int, n_steps: int, correlation: np.ndarray,
                            vol: float, seed: int, interval: int = 60,
                            start_price: float = 100.0, drift: float = 0.0,
                            start_timestamp: int = DEFAULT_START_TIMESTAMP) -> Universe:
    """Multi-asset GBM panel with target cross-correlation of log-returns.

    The correlation matrix must be symmetric PSD with unit diagonal; paths
    are built from one shared matrix of independent normals pushed through
    the symmetric square root of the correlation, so two universes generated
    from the same seed but different correlations share their driving noise.
    """
    if n_assets < 1 or n_steps < 1:
        raise ValueError("n_assets and n_steps must be >= 1")
    correlation = np.asarray(correlation, dtype=np.float64)
    if correlation.shape != (n_assets, n_assets):
        raise ValueError(f"correlation shape {correlation.shape} != ({n_assets}, {n_assets})")
    if not np.allclose(correlation, correlation.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(correlation), 1.0, atol=1e-12):
        raise ValueError("correlation matrix must have unit diagonal")
    eigvals, eigvecs = np.linalg.eigh(correlation)
    if eigvals.min() < -1e-10:
        raise ValueError(
            f"correlation matrix is not positive semi-definite: "
            f"eigenvalue {eigvals.min():.3e} is negative"
        )
    root = eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T

    rng = np.random.default_rng(derive_key(seed, DOMAIN_MARKET, 1))
    z = rng.standard_normal((n_assets, n_steps))
    corr_z = root @ z
    log_returns = (drift - 0.5 * vol**2) + vol * corr_z
    closes = start_price * np.exp(np.cumsum(log_returns, axis=1))
    half = 0.5 * vol * np.abs(rng.standard_normal((n_assets, n_steps)))

    assets = [f"A{str(i).zfill(2)}" for i in range(n_assets)]
    series = {
        assets[i]: _make_candles(closes[i], start_price, half[i], interval, start_timestamp)
        for i in range(n_assets)
    }
    uni = Universe(assets=assets, series=series, correlation=correlation)
    uni.validate()
    return uni


def gen_factor_universe(n_assets: int, n_steps: int, rho: float, vol: float,
                        seed: int, interval: int = 60, start_price: float = 100.0,
                        drift: float = 0.0, tail_prob: float = 0.0,
                        tail_scale: float = 1.0,
                        start_timestamp: int = DEFAULT_START_TIMESTAMP) -> Universe:
    """One-factor universe: z_a = sqrt(rho) * F + sqrt(1-rho) * e_a.

    F is the systemic factor, e_a idiosyncratic gaussians.  The factor
    draws from a gaussian scale mixture that widens to `tail_scale` sigma
    with probability `tail_prob` per bar: systemic crash bars hit all
    assets together exactly to the extent their factor loading (rho) says
    they should, and vanish entirely at rho = 0.  With the same seed, two
    universes at different rho share all driving noise; only the mixing
    weights differ.
    """
    if n_assets < 1 or n_steps < 1:
        raise ValueError("n_assets and n_steps must be >= 1")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"factor model needs rho in [0, 1], got {rho}")
    if not 0.0 <= tail_prob < 1.0 or tail_scale < 1.0:
        raise ValueError("tail_prob must be in [0, 1), tail_scale >= 1")
    rng = np.random.default_rng(derive_key(seed, DOMAIN_MARKET, 2))
    factor = rng.standard_normal(n_steps)
    idio = rng.standard_normal((n_assets, n_steps))
    if tail_prob > 0.0:
        factor = np.where(rng.random(n_steps) < tail_prob, factor * tail_scale, factor)
    z = np.sqrt(rho) * factor[None, :] + np.sqrt(1.0 - rho) * idio
    log_returns = (drift - 0.5 * vol**2) + vol * z
    closes = start_price * np.exp(np.cumsum(log_returns, axis=1))
    half = 0.5 * vol * np.abs(rng.standard_normal((n_assets, n_steps)))

    correlation = np.full((n_assets, n_assets), rho)
    np.fill_diagonal(correlation, 1.0)
    assets = [f"A{str(i).zfill(2)}" for i in range(n_assets)]
    series = {
        assets[i]: _make_candles(closes[i], start_price, half[i], interval, start_timestamp)
        for i in range(n_assets)
    }
    uni = Universe(assets=assets, series=series, correlation=correlation)
    uni.validate()
    return uni


CSV_HEADER = ["asset", "timestamp", "open", "high", "low", "close", "volume"]


def load_csv(path: str) -> Universe:
    """Load a universe from `asset,timestamp,open,high,low,close,volume` rows.

    Rows for each asset are kept in file order; timestamps must strictly
    increase with one constant interval, and all assets must share the same
    timestamp vector.  Malformed rows and invariant breaches raise with the
    offending line number or timestamp.
    """
    per_asset: dict[str, list[tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(1, "empty file") from None
        if [h.strip().lower() for h in header] != CSV_HEADER:
            raise CsvParseError(1, f"header must be {','.join(CSV_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 7:
                raise CsvParseError(line_no, f"expected 7 fields, got {len(row)}")
            asset = row[0].strip()
            try:
                ts = int(row[1])
                o, h, l, c, v = (float(x) for x in row[2:7])
            except ValueError as exc:
                raise CsvParseError(line_no, f"unparseable numeric field ({exc})") from None
            candle = Candle(ts, o, h, l, c, v)
            try:
                candle.validate()
            except ValidationError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
            per_asset.setdefault(asset, []).append((ts, o, h, l, c, v))

    if not per_asset:
        raise ValidationError("file contains no data rows")
    assets = list(per_asset)
    series: dict[str, CandleSeries] = {}
    interval = None
    for name in assets:
        rows = per_asset[name]
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        if len(ts) > 1:
            gaps = np.diff(ts)
            if np.any(gaps <= 0):
                raise ValidationError(f"asset {name!r}: timestamps not strictly increasing")
            if interval is None:
                interval = int(gaps[0])
            if np.any(gaps != interval):
                raise ValidationError(f"asset {name!r}: non-constant bar interval")
        cols = list(zip(*rows))
        series[name] = CandleSeries(ts, cols[1], cols[2], cols[3], cols[4], cols[5],
                                    interval if interval is not None else 60)
    uni = Universe(assets=assets, series=series)
    uni.validate()
    return uni


def true_range(series: CandleSeries) -> np.ndarray:
    """Per-bar true range: max(h-l, |h-prev_close|, |l-prev_close|)."""
    hl = series.highs - series.lows
    tr = hl.copy()
    if len(series) > 1:
        prev = series.closes[:-1]
        tr[1:] = np.maximum(hl[1:], np.maximum(np.abs(series.highs[1:] - prev),
                                               np.abs(series.lows[1:] - prev)))
    return tr


def average_true_range(series: CandleSeries, period: int = ATR_PERIOD) -> np.ndarray:
    """Trailing mean of true range over `period` bars (expanding at the start)."""
    tr = true_range(series)
    csum = np.concatenate(([0.0], np.cumsum(tr)))
    idx = np.arange(len(tr))
    lo = np.maximum(idx - period + 1, 0)
    return (csum[idx + 1] - csum[lo]) / (idx - lo + 1)


def compute_features(series: CandleSeries, t: int, lookback: int = LOOKBACK,
                     atr_period: int = ATR_PERIOD) -> FeatureWindow:
    """Observation window ending at bar t.

    Rows run oldest to newest.  The z-score column normalizes the window's
    closes against the window's own mean and standard deviation (zero when
    the window is flat); log-return of the first bar in history is 0 by
    convention.
    """
    if t < lookback - 1 or t < atr_period:
        raise WindowUnderflowError(
            f"need t >= {max(lookback - 1, atr_period)} for a full window, got {t}"
        )
    if t >= len(series):
        raise WindowUnderflowError(f"t={t} beyond series of length {len(series)}")

    closes = series.closes[t - lookback + 1: t + 1]
    mean = closes.mean()
    std = closes.std()
    z = (closes - mean) / std if std > 1e-15 else np.zeros(lookback)

    first = t - lookback + 1
    logret = np.empty(lookback)
    if first == 0:
        logret[0] = 0.0
        logret[1:] = np.log(closes[1:] / closes[:-1])
    else:
        window_with_prev = series.closes[first - 1: t + 1]
        logret[:] = np.log(window_with_prev[1:] / window_with_prev[:-1])

    atr = average_true_range(series, atr_period)[first: t + 1] / closes

    values = np.column_stack([z, logret, atr])
    window = FeatureWindow(values=values, end_timestamp=int(series.timestamps[t]))
    window.validate()
    return window
