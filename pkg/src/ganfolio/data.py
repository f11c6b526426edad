"""Price ingestion, window features, category labels, synthetic markets.

Trading time is an integer index.  CSV files may carry either integer
indices or ISO-8601 dates; ISO dates are mapped onto a single global
calendar built from every distinct date in the file, so cross-asset
windows line up.  Missing observations are never interpolated: a gap in
an asset's dates simply invalidates every window that would span it.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, ParameterError, ParseError, WindowError

CATEGORIES = ("c_minus", "c_zero", "c_plus")

PRICE_HEADER = ["date", "asset_id", "close"]
MANIFEST_HEADER = ["asset_id", "kind"]


@dataclass
class PriceSeries:
    """One asset's dated close-price history."""

    asset_id: str
    dates: np.ndarray   # int64, strictly increasing trading-day indices
    closes: np.ndarray  # float64, > 0, aligned with dates

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype=np.int64)
        self.closes = np.asarray(self.closes, dtype=np.float64)
        if self.dates.shape != self.closes.shape or self.dates.ndim != 1:
            raise DataError(f"{self.asset_id}: dates and closes must be aligned 1-D arrays")
        if len(self.dates) and np.any(np.diff(self.dates) <= 0):
            raise DataError(f"{self.asset_id}: dates must be strictly increasing")
        if np.any(self.closes <= 0) or not np.isfinite(self.closes).all():
            raise DataError(f"{self.asset_id}: closes must be positive and finite")

    def __len__(self) -> int:
        return len(self.dates)

    def position(self, t: int) -> int:
        """Index of date t, or raises WindowError."""
        p = int(np.searchsorted(self.dates, t))
        if p >= len(self.dates) or self.dates[p] != t:
            raise WindowError(f"{self.asset_id}: no observation at time {t}")
        return p


@dataclass
class FeatureVector:
    """Lag-window of relative returns anchored at time t.

    values[j] = (P(t-1-j) - P(t)) / P(t) for j = 0 .. T_i - 1.
    """

    values: np.ndarray
    anchor_time: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DataError("feature values must be 1-D")
        if not np.isfinite(self.values).all():
            raise DataError("feature values must be finite")


@dataclass
class Category:
    """Discretized return bucket with its one-hot encoding."""

    tag: str
    one_hot: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.tag not in CATEGORIES:
            raise DataError(f"unknown category tag {self.tag!r}")
        expected = np.zeros(3)
        expected[CATEGORIES.index(self.tag)] = 1.0
        if self.one_hot is None:
            self.one_hot = expected
        else:
            self.one_hot = np.asarray(self.one_hot, dtype=np.float64)
            if not np.array_equal(self.one_hot, expected):
                raise DataError(f"one_hot inconsistent with tag {self.tag!r}")

    @property
    def index(self) -> int:
        return CATEGORIES.index(self.tag)


@dataclass
class TrainingPair:
    """(feature window, category) sample plus bookkeeping fields."""

    x: FeatureVector
    c: Category
    raw_return: float
    asset_id: str
    label_time: int


def build_features(series: PriceSeries, t: int, t_i: int) -> FeatureVector:
    """Relative-return window of length t_i anchored at time t.

    Requires observations at every date t - t_i .. t (no gaps).
    """
    if t_i < 1:
        raise ParameterError("t_i must be >= 1")
    p = series.position(t)
    if p < t_i or series.dates[p - t_i] != t - t_i:
        raise WindowError(
            f"{series.asset_id}: insufficient contiguous history for t={t}, T_i={t_i}"
        )
    anchor = series.closes[p]
    window = series.closes[p - t_i:p]          # prices at t-T_i .. t-1
    values = (window[::-1] - anchor) / anchor  # lag 1 first
    return FeatureVector(values=values, anchor_time=t)


def build_label(series: PriceSeries, t: int, t_o: int) -> float:
    """Forward relative return (P(t+t_o) - P(t)) / P(t).

    Requires observations at every date t .. t + t_o (no gaps).
    """
    if t_o < 1:
        raise ParameterError("t_o must be >= 1")
    p = series.position(t)
    q = p + t_o
    if q >= len(series.dates) or series.dates[q] != t + t_o:
        raise WindowError(
            f"{series.asset_id}: insufficient contiguous future for t={t}, T_o={t_o}"
        )
    return float((series.closes[q] - series.closes[p]) / series.closes[p])


def discretize(r: float, th_l: float, th_u: float) -> Category:
    """Bucket a return: c_minus below th_l, c_plus at or above th_u.

    Boundary rule: th_l <= r < th_u maps to c_zero.
    """
    if not th_l < th_u:
        raise ParameterError(f"need th_l < th_u, got {th_l} >= {th_u}")
    if r < th_l:
        return Category("c_minus")
    if r < th_u:
        return Category("c_zero")
    return Category("c_plus")


@dataclass
class SkipReport:
    """Counts of (asset, time) combinations dropped during assembly."""

    attempted: int = 0
    emitted: int = 0
    insufficient_history: int = 0
    insufficient_future: int = 0

    def as_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "emitted": self.emitted,
            "insufficient_history": self.insufficient_history,
            "insufficient_future": self.insufficient_future,
        }


def build_dataset(
    universe: Dict[str, PriceSeries],
    sample_times: Sequence[int],
    t_i: int,
    t_o: int,
    th_l: float,
    th_u: float,
) -> Tuple[List[TrainingPair], SkipReport]:
    """One TrainingPair per (asset, time) with full history and future.

    Pairs are returned sorted by (asset_id, time); combinations lacking
    data are skipped and counted, never interpolated.
    """
    if list(sample_times) != sorted(sample_times):
        raise ParameterError("sample_times must be sorted")
    report = SkipReport()
    pairs: List[TrainingPair] = []
    for asset_id in sorted(universe):
        series = universe[asset_id]
        for t in sample_times:
            report.attempted += 1
            try:
                x = build_features(series, t, t_i)
            except WindowError:
                report.insufficient_history += 1
                continue
            try:
                r = build_label(series, t, t_o)
            except WindowError:
                report.insufficient_future += 1
                continue
            pairs.append(
                TrainingPair(
                    x=x,
                    c=discretize(r, th_l, th_u),
                    raw_return=r,
                    asset_id=asset_id,
                    label_time=t,
                )
            )
            report.emitted += 1
    if not pairs:
        raise DataError("no training pairs could be built from the inputs")
    return pairs, report


def _parse_date_token(token: str, line_no: int) -> Tuple[bool, int, Optional[_dt.date]]:
    """Returns (is_iso, int_value_or_0, date_or_None)."""
    token = token.strip()
    try:
        return False, int(token), None
    except ValueError:
        pass
    try:
        return True, 0, _dt.date.fromisoformat(token)
    except ValueError:
        raise ParseError(f"line {line_no}: date {token!r} is neither an index nor ISO-8601")


def load_prices(path) -> Dict[str, PriceSeries]:
    """Load the `date,asset_id,close` CSV into per-asset series.

    Rows with an empty close are dropped (they become gaps).  Dates may be
    integer indices or ISO dates, not a mix; ISO dates share one global
    calendar across assets.  Result is keyed and ordered by asset_id.
    """
    rows: List[Tuple[object, str, float, int]] = []
    iso_seen = False
    int_seen = False
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        if [h.strip() for h in header] != PRICE_HEADER:
            raise ParseError(f"{path}: expected header {','.join(PRICE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"line {line_no}: expected 3 fields, got {len(row)}")
            date_tok, asset_id, close_tok = (c.strip() for c in row)
            if not asset_id:
                raise ParseError(f"line {line_no}: empty asset_id")
            is_iso, int_val, date_val = _parse_date_token(date_tok, line_no)
            iso_seen |= is_iso
            int_seen |= not is_iso
            if iso_seen and int_seen:
                raise ParseError(f"line {line_no}: mixed integer and ISO dates in one file")
            if close_tok == "":
                continue  # missing observation -> gap
            try:
                close = float(close_tok)
            except ValueError:
                raise ParseError(f"line {line_no}: close {close_tok!r} is not a number")
            if not np.isfinite(close) or close <= 0:
                raise DataError(f"line {line_no}: asset {asset_id}: non-positive close {close!r}")
            rows.append((date_val if is_iso else int_val, asset_id, close, line_no))

    if not rows:
        raise DataError(f"{path}: no usable price rows")

    if iso_seen:
        calendar = {d: i for i, d in enumerate(sorted({r[0] for r in rows}))}
        indexed = [(calendar[d], a, c, ln) for d, a, c, ln in rows]
    else:
        indexed = [(int(d), a, c, ln) for d, a, c, ln in rows]  # type: ignore[arg-type]

    by_asset: Dict[str, List[Tuple[int, float, int]]] = {}
    for t, asset_id, close, line_no in indexed:
        by_asset.setdefault(asset_id, []).append((t, close, line_no))

    out: Dict[str, PriceSeries] = {}
    for asset_id in sorted(by_asset):
        entries = sorted(by_asset[asset_id], key=lambda e: e[0])  # stable
        for (t1, _, _), (t2, _, ln2) in zip(entries, entries[1:]):
            if t1 == t2:
                raise ParseError(f"line {ln2}: asset {asset_id}: duplicate date index {t2}")
        out[asset_id] = PriceSeries(
            asset_id=asset_id,
            dates=np.array([e[0] for e in entries], dtype=np.int64),
            closes=np.array([e[1] for e in entries], dtype=np.float64),
        )
    return out


def save_prices(path, universe: Dict[str, PriceSeries]) -> None:
    """Write the price CSV (integer date indices, full float precision)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRICE_HEADER)
        for asset_id in sorted(universe):
            series = universe[asset_id]
            for t, close in zip(series.dates, series.closes):
                writer.writerow([int(t), asset_id, repr(float(close))])


@dataclass
class SynthConfig:
    """Synthetic-market recipe: a mix of predictable and pure-noise assets."""

    n_signal_assets: int
    n_noise_assets: int
    n_days: int
    rng_seed: int
    signal_strength: float = 1.0
    noise_sigma: float = 0.008
    t_i: int = 16
    t_o: int = 5

    def __post_init__(self):
        if self.n_signal_assets < 0 or self.n_noise_assets < 0:
            raise ConfigError("asset counts must be non-negative")
        if self.n_signal_assets + self.n_noise_assets < 1:
            raise ConfigError("need at least one asset")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be > 0")
        if self.n_days <= self.t_i + self.t_o:
            raise ConfigError("n_days must exceed t_i + t_o")


def _walk(
    rng: np.random.Generator,
    n_days: int,
    sigma: float,
    amplitude: float,
    stat_window: int,
    scale: float,
) -> np.ndarray:
    """Log-price walk whose drift leans against the trailing mean return.

    The statistic is the mean return over the last stat_window days; the
    next day's drift is -amplitude * tanh(statistic / scale), a
    saturating contrarian response that makes the walk oscillate between
    up and down regimes readable from the recent window.  amplitude == 0
    gives a pure random walk, which is exactly how noise assets are
    generated, so strength-zero signal assets are
    distribution-identical to noise assets.
    """
    eps = rng.standard_normal(n_days - 1)
    rets = np.empty(n_days - 1)
    rolling_sum = 0.0
    for u in range(n_days - 1):
        if u >= stat_window:
            trailing_mean = rolling_sum / stat_window
            drift = -amplitude * np.tanh(trailing_mean / scale)
        else:
            drift = 0.0
        r = drift + sigma * eps[u]
        rets[u] = r
        rolling_sum += r
        if u >= stat_window:
            rolling_sum -= rets[u - stat_window]
    log_price = np.log(100.0) + np.concatenate([[0.0], np.cumsum(rets)])
    return np.exp(log_price)


def synth_market(config: SynthConfig) -> Tuple[Dict[str, PriceSeries], List[Tuple[str, str]]]:
    """Deterministic synthetic universe plus a (asset_id, kind) manifest.

    Signal assets mean-revert against their trailing return, so the
    t_o-ahead return is partially predictable from the feature window;
    predictability grows with signal_strength.  Noise assets are pure
    random walks with the same volatility.  At strength 1 the cumulative
    t_o-day drift (~0.15) dwarfs both the +-0.03 default buckets and the
    t_o-day noise, giving roughly a 27/46/27 category split.
    """
    seeds = np.random.SeedSequence(config.rng_seed).spawn(
        config.n_signal_assets + config.n_noise_assets
    )
    amplitude = config.signal_strength * 0.15 / config.t_o
    stat_window = max(2, config.t_i // 2)
    scale = 0.02 * config.noise_sigma / np.sqrt(stat_window)
    universe: Dict[str, PriceSeries] = {}
    manifest: List[Tuple[str, str]] = []
    for k in range(config.n_signal_assets):
        asset_id = f"SIG{k:03d}"
        closes = _walk(np.random.default_rng(seeds[k]), config.n_days,
                       config.noise_sigma, amplitude, stat_window, scale)
        universe[asset_id] = PriceSeries(asset_id, np.arange(config.n_days), closes)
        manifest.append((asset_id, "signal"))
    for k in range(config.n_noise_assets):
        asset_id = f"NOI{k:03d}"
        closes = _walk(np.random.default_rng(seeds[config.n_signal_assets + k]),
                       config.n_days, config.noise_sigma, 0.0, stat_window, scale)
        universe[asset_id] = PriceSeries(asset_id, np.arange(config.n_days), closes)
        manifest.append((asset_id, "noise"))
    return universe, manifest


def save_manifest(path, manifest: List[Tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for asset_id, kind in manifest:
            writer.writerow([asset_id, kind])


def load_manifest(path) -> List[Tuple[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ParseError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or row[1] not in ("signal", "noise"):
                raise ParseError(f"line {line_no}: bad manifest row {row!r}")
            out.append((row[0], row[1]))
    return out


def save_dataset_csv(path, pairs: List[TrainingPair]) -> None:
    """Optional flat export: feature columns, raw return, category tag."""
    if not pairs:
        raise DataError("no pairs to export")
    t_i = len(pairs[0].x.values)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["asset_id", "label_time"]
            + [f"x_{j}" for j in range(t_i)]
            + ["raw_return", "category"]
        )
        for pair in pairs:
            writer.writerow(
                [pair.asset_id, pair.label_time]
                + [repr(float(v)) for v in pair.x.values]
                + [repr(float(pair.raw_return)), pair.c.tag]
            )
