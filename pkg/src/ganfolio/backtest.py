"""Walk-forward evaluation with the standard performance metric suite.

At each rebalance date the engine builds feature windows from data at or
before that date, predicts the universe, weights the book, and realizes
the forward return.  Nothing downstream of a rebalance can influence it:
features, noise streams and selection all derive from the rebalance
date, the asset identity and the master seed.

Metric conventions, echoed into the report metadata: risk-free rate 0;
yearly Sharpe is monthly Sharpe times sqrt(12); the information-ratio
benchmark defaults to the equal-weight long-only universe return; zero
variance yields an explicit undefined marker (None / "undefined"), never
an infinity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import PriceSeries, build_features, build_label
from .errors import ConfigError, DataError, WindowError
from .nn import Network
from .portfolio import PortfolioWeights, SelectionParams, save_weights_csv, weight_portfolio
from .predict import AssetPrediction, predict_universe, save_predictions_csv

METRIC_ORDER = ("mmd", "ir", "sharpe_monthly", "sharpe_yearly", "ret_monthly", "ret_yearly")

PERIODS_PER_YEAR = 12
UNDEFINED = "undefined"


@dataclass
class BacktestConfig:
    train_end: int
    eval_start: int
    eval_end: int
    rng_seed: int
    rebalance_stride: int = 21
    th_p: float = 0.1
    th_r: float = 0.0
    i_samples: int = 101
    t_i: int = 16
    t_o: int = 5
    benchmark: str = "universe"  # "universe" | "zero"
    threads: int = 1

    def __post_init__(self):
        if not self.train_end < self.eval_start <= self.eval_end:
            raise ConfigError(
                f"need train_end < eval_start <= eval_end, got "
                f"{self.train_end}, {self.eval_start}, {self.eval_end}"
            )
        if self.rebalance_stride < 1:
            raise ConfigError("rebalance_stride must be >= 1")
        if self.benchmark not in ("universe", "zero"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")


@dataclass
class MetricSet:
    """None marks a metric that is undefined for this run (zero variance)."""

    mmd: Optional[float]
    ir: Optional[float]
    sharpe_monthly: Optional[float]
    sharpe_yearly: Optional[float]
    ret_monthly: Optional[float]
    ret_yearly: Optional[float]

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_ORDER}


@dataclass
class BacktestReport:
    period_returns: List[Tuple[int, float]]
    equity_curve: np.ndarray            # cumulative, starts at 1.0
    metrics: MetricSet
    weights_history: List[PortfolioWeights]
    benchmark_returns: List[float]
    yearly_returns: List[float]
    trailing_partial_year: Optional[float]
    degenerate_periods: int
    skipped_assets: Dict[int, int]      # rebalance time -> assets without history
    th_p: float
    th_r: float
    # shared across strategy variants: the single upstream prediction pass
    predictions_by_time: Dict[int, List[AssetPrediction]] = field(default_factory=dict)


def max_drawdown(equity_curve: Sequence[float]) -> float:
    """Worst peak-to-trough relative decline; 0 for a monotone rise."""
    curve = np.asarray(equity_curve, dtype=np.float64)
    if curve.size == 0:
        raise DataError("empty equity curve")
    if np.any(curve <= 0):
        raise DataError("equity curve must stay positive")
    worst = 0.0
    peak = curve[0]
    for value in curve:
        if value > peak:
            peak = value
        dd = (value - peak) / peak
        if dd < worst:
            worst = dd
    return float(worst)


def sharpe(period_returns: Sequence[float], annualization_factor: float = 1.0) -> Optional[float]:
    """mean/std(sample) * sqrt(factor); None when variance is zero."""
    r = np.asarray(period_returns, dtype=np.float64)
    if r.size < 2:
        return None
    std = r.std(ddof=1)
    if std == 0.0:
        return None
    return float(r.mean() / std * np.sqrt(annualization_factor))


def information_ratio(
    period_returns: Sequence[float],
    benchmark_returns: Sequence[float],
) -> Optional[float]:
    """Sharpe of the active return against the benchmark; None if flat."""
    r = np.asarray(period_returns, dtype=np.float64)
    b = np.asarray(benchmark_returns, dtype=np.float64)
    if r.shape != b.shape:
        raise DataError("portfolio and benchmark series must be aligned")
    return sharpe(r - b, 1.0)


def aggregate_yearly(period_returns: Sequence[float]) -> Tuple[List[float], Optional[float]]:
    """Compound each block of 12 periods; trailing partial kept separate."""
    r = list(period_returns)
    yearly: List[float] = []
    i = 0
    while i + PERIODS_PER_YEAR <= len(r):
        block = r[i:i + PERIODS_PER_YEAR]
        yearly.append(float(np.prod([1.0 + x for x in block]) - 1.0))
        i += PERIODS_PER_YEAR
    trailing = None
    if i < len(r):
        trailing = float(np.prod([1.0 + x for x in r[i:]]) - 1.0)
    return yearly, trailing


def realize_return(
    weights: Dict[str, float],
    universe: Dict[str, PriceSeries],
    t: int,
    t_o: int,
) -> float:
    """Weighted forward return of a book fixed at time t."""
    total = 0.0
    for asset_id, w in weights.items():
        if w == 0.0:
            continue
        try:
            total += w * build_label(universe[asset_id], t, t_o)
        except WindowError as exc:
            raise DataError(
                f"cannot realize return for {asset_id} at t={t}: {exc}"
            ) from exc
    return total


def rebalance_times(config: BacktestConfig) -> List[int]:
    times = list(range(config.eval_start, config.eval_end + 1, config.rebalance_stride))
    if not times:
        raise ConfigError("empty evaluation window")
    return times


def predict_evaluation(
    g: Network,
    universe: Dict[str, PriceSeries],
    config: BacktestConfig,
) -> Tuple[Dict[int, List[AssetPrediction]], Dict[int, int]]:
    """Ensemble predictions for every (rebalance time, asset) once.

    Assets without a full feature window at a date are skipped and
    counted.  The result is reused across th_p/th_r variations so that
    strategy comparisons share identical predictions.
    """
    predictions: Dict[int, List[AssetPrediction]] = {}
    skipped: Dict[int, int] = {}
    for t in rebalance_times(config):
        conditions = []
        n_skipped = 0
        for asset_id in sorted(universe):
            try:
                x = build_features(universe[asset_id], t, config.t_i)
            except WindowError:
                n_skipped += 1
                continue
            conditions.append(((asset_id, t), x.values))
        predictions[t] = predict_universe(
            g, conditions, config.i_samples, config.rng_seed, threads=config.threads
        )
        skipped[t] = n_skipped
    return predictions, skipped


def evaluate_strategy(
    predictions_by_time: Dict[int, List[AssetPrediction]],
    skipped: Dict[int, int],
    universe: Dict[str, PriceSeries],
    config: BacktestConfig,
    th_p: Optional[float] = None,
    th_r: Optional[float] = None,
) -> BacktestReport:
    """Weight, realize and score one (th_p, th_r) strategy variant."""
    th_p = config.th_p if th_p is None else th_p
    th_r = config.th_r if th_r is None else th_r
    params = SelectionParams(th_p=th_p, th_r=th_r)

    period_returns: List[Tuple[int, float]] = []
    benchmark_returns: List[float] = []
    books: List[PortfolioWeights] = []
    degenerate = 0
    for t in sorted(predictions_by_time):
        preds = predictions_by_time[t]
        if len(preds) < 2:
            book = PortfolioWeights(
                weights={p.asset_id: 0.0 for p in preds},
                rebalance_time=t, n_long=0, n_short=0,
                degenerate_flag=True, selections=[],
            )
        else:
            book = weight_portfolio(preds, params, rebalance_time=t)
        if book.degenerate_flag:
            degenerate += 1
        books.append(book)
        period_returns.append((t, realize_return(book.weights, universe, t, config.t_o)))
        if config.benchmark == "universe" and preds:
            bench = float(np.mean([
                build_label(universe[p.asset_id], t, config.t_o) for p in preds
            ]))
        else:
            bench = 0.0
        benchmark_returns.append(bench)

    returns = [r for _, r in period_returns]
    equity = np.concatenate([[1.0], np.cumprod([1.0 + r for r in returns])])
    yearly, trailing = aggregate_yearly(returns)
    metrics = MetricSet(
        mmd=max_drawdown(equity),
        ir=information_ratio(returns, benchmark_returns),
        sharpe_monthly=sharpe(returns, 1.0),
        sharpe_yearly=sharpe(returns, float(PERIODS_PER_YEAR)),
        ret_monthly=float(np.mean(returns)) if returns else None,
        ret_yearly=float(np.mean(yearly)) if yearly else None,
    )
    return BacktestReport(
        period_returns=period_returns,
        equity_curve=equity,
        metrics=metrics,
        weights_history=books,
        benchmark_returns=benchmark_returns,
        yearly_returns=yearly,
        trailing_partial_year=trailing,
        degenerate_periods=degenerate,
        skipped_assets=skipped,
        th_p=th_p,
        th_r=th_r,
        predictions_by_time=predictions_by_time,
    )


def run_backtest(
    g: Network,
    universe: Dict[str, PriceSeries],
    config: BacktestConfig,
) -> BacktestReport:
    """Predict once, then weight and realize the configured strategy."""
    predictions, skipped = predict_evaluation(g, universe, config)
    return evaluate_strategy(predictions, skipped, universe, config)


@dataclass
class GridResult:
    """Reports for every (th_p, th_r) pair over one shared prediction pass."""

    reports: Dict[Tuple[float, float], BacktestReport]
    predictions_by_time: Dict[int, List[AssetPrediction]]
    th_p_values: List[float]
    th_r_values: List[float]


def run_thr_grid(
    g: Network,
    universe: Dict[str, PriceSeries],
    config: BacktestConfig,
    th_r_values: Sequence[float],
    th_p_values: Optional[Sequence[float]] = None,
) -> GridResult:
    if not th_r_values:
        raise ConfigError("th_r grid must not be empty")
    th_ps = list(th_p_values) if th_p_values else [config.th_p]
    predictions, skipped = predict_evaluation(g, universe, config)
    reports = {}
    for th_p in th_ps:
        for th_r in th_r_values:
            reports[(th_p, th_r)] = evaluate_strategy(
                predictions, skipped, universe, config, th_p=th_p, th_r=th_r
            )
    return GridResult(
        reports=reports,
        predictions_by_time=predictions,
        th_p_values=th_ps,
        th_r_values=list(th_r_values),
    )


def _fmt(value: Optional[float]) -> str:
    return UNDEFINED if value is None else repr(float(value))


def save_equity_csv(path, report: BacktestReport) -> None:
    """time,equity,period_return; the first row is the 1.0 starting point."""
    times = [t for t, _ in report.period_returns]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("time,equity,period_return\n")
        start = times[0] if times else ""
        fh.write(f"{start},{1.0!r},\n")
        for (t, r), equity in zip(report.period_returns, report.equity_curve[1:]):
            fh.write(f"{t},{float(equity)!r},{float(r)!r}\n")


def save_comparison_csv(path, grid: GridResult) -> None:
    """Metric rows per th_p block, one column per th_r (grid layout)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = ["th_p", "metric"] + [f"th_r={v:g}" for v in grid.th_r_values]
        fh.write(",".join(header) + "\n")
        for th_p in grid.th_p_values:
            for metric in METRIC_ORDER:
                cells = [f"{th_p:g}", metric]
                for th_r in grid.th_r_values:
                    value = getattr(grid.reports[(th_p, th_r)].metrics, metric)
                    cells.append(_fmt(value))
                fh.write(",".join(cells) + "\n")


def metrics_payload(report: BacktestReport, config: BacktestConfig) -> dict:
    return {
        "format_version": 1,
        "metrics": report.metrics.as_dict(),
        "yearly_returns": report.yearly_returns,
        "trailing_partial_year": report.trailing_partial_year,
        "degenerate_periods": report.degenerate_periods,
        "periods": len(report.period_returns),
        "config": {
            "train_end": config.train_end,
            "eval_start": config.eval_start,
            "eval_end": config.eval_end,
            "rebalance_stride": config.rebalance_stride,
            "th_p": report.th_p,
            "th_r": report.th_r,
            "i_samples": config.i_samples,
            "t_i": config.t_i,
            "t_o": config.t_o,
            "rng_seed": config.rng_seed,
            "benchmark": config.benchmark,
        },
        "conventions": {
            "risk_free_rate": 0.0,
            "sharpe_yearly": "monthly sharpe scaled by sqrt(12)",
            "ret_monthly": "arithmetic mean of period returns",
            "ret_yearly": "arithmetic mean of compounded 12-period blocks",
            "benchmark": "equal-weight long-only universe return"
            if config.benchmark == "universe" else "zero",
            "undefined_metrics": "null when variance or data is insufficient",
        },
    }


def save_metrics_json(path, report: BacktestReport, config: BacktestConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_payload(report, config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_report_bundle(
    out_dir,
    report: BacktestReport,
    config: BacktestConfig,
    grid: Optional[GridResult] = None,
) -> List[str]:
    """Write the delimited report set; returns the paths written."""
    paths = [os.path.join(out_dir, "metrics.json")]
    save_metrics_json(paths[-1], report, config)

    paths.append(os.path.join(out_dir, "equity.csv"))
    save_equity_csv(paths[-1], report)

    paths.append(os.path.join(out_dir, "weights.csv"))
    save_weights_csv(paths[-1], report.weights_history)

    paths.append(os.path.join(out_dir, "predictions.csv"))
    flat = [
        p
        for t in sorted(report.predictions_by_time)
        for p in report.predictions_by_time[t]
    ]
    save_predictions_csv(paths[-1], flat)

    if grid is not None:
        paths.append(os.path.join(out_dir, "comparison.csv"))
        save_comparison_csv(paths[-1], grid)
    return paths
