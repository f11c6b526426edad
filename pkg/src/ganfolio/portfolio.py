"""Score-ranked long/short selection with risk-threshold elimination.

Assets are sorted ascending by score; the bottom floor(N*th_p) ranks are
short candidates and ranks floor(N*(1-th_p))..N are long candidates (the
long block can hold one more asset when N*th_p is integral — kept as
specified rather than symmetrized).  A candidate survives only if its
risk is strictly below th_r.  Survivors share each side's unit weight
equally; if either side ends up empty the whole book is zeroed and
flagged, keeping the market-neutral invariant.

At th_p = 0.5 the two rank blocks share their boundary rank.  The long
block takes precedence there (mirroring the assignment order of the
selection rules, where the long assignment overwrites the short one),
and the shared rank is excluded from the short count so the book still
nets to zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import DataError, ParameterError
from .predict import AssetPrediction

WEIGHTS_HEADER = [
    "rebalance_time", "asset_id", "weight", "side", "score", "risk_U", "eliminated",
]

# guards floor() against decimal th_p values that land a hair under an integer
_FLOOR_EPS = 1e-9


@dataclass
class SelectionParams:
    th_p: float  # fraction of the universe per side, in (0, 0.5]
    th_r: float  # risk threshold, <= 0; survivors need risk < th_r

    def __post_init__(self):
        if not 0.0 < self.th_p <= 0.5:
            raise ParameterError(f"th_p must be in (0, 0.5], got {self.th_p}")
        if self.th_r > 0.0:
            raise ParameterError(f"th_r must be <= 0, got {self.th_r}")


@dataclass
class SelectionRecord:
    """Per-asset audit row for one rebalance."""

    asset_id: str
    rank: int              # 1-based ascending-score rank
    score: float
    risk: float
    side: str              # "long" | "short" | "none"
    candidate: bool
    eliminated: bool       # candidate that failed the risk test
    weight: float


@dataclass
class PortfolioWeights:
    """Market-neutral book for one rebalance."""

    weights: Dict[str, float]
    rebalance_time: Optional[int]
    n_long: int
    n_short: int
    degenerate_flag: bool
    selections: List[SelectionRecord] = field(default_factory=list)

    def gross(self) -> float:
        return float(sum(abs(w) for w in self.weights.values()))

    def net(self) -> float:
        return float(sum(self.weights.values()))


def weight_portfolio(
    predictions: Sequence[AssetPrediction],
    params: SelectionParams,
    rebalance_time: Optional[int] = None,
    allow_one_sided: bool = False,
) -> PortfolioWeights:
    """Apply the selection rules to one universe of predictions.

    Sorting is stable with asset_id breaking score ties.  With
    allow_one_sided the surviving side is still weighted when the other
    side is empty (the flag stays raised); by default the book is zeroed.
    """
    n = len(predictions)
    if n < 2:
        raise DataError(f"need at least 2 assets, got {n}")
    ids = [p.asset_id for p in predictions]
    if len(set(ids)) != n:
        raise DataError("duplicate asset_id in predictions")

    ranked = sorted(predictions, key=lambda p: (p.score, p.asset_id))
    short_end = math.floor(n * params.th_p + _FLOOR_EPS)          # ranks 1..short_end
    long_start = math.floor(n * (1.0 - params.th_p) + _FLOOR_EPS)  # ranks long_start..n

    long_ranks = set(range(long_start, n + 1))
    short_ranks = set(range(1, short_end + 1)) - long_ranks  # long side wins overlap

    short_survivors: List[str] = []
    long_survivors: List[str] = []
    meta: List[Tuple[AssetPrediction, int, str, bool, bool]] = []
    for rank0, pred in enumerate(ranked):
        rank = rank0 + 1
        if rank in long_ranks:
            side = "long"
        elif rank in short_ranks:
            side = "short"
        else:
            side = "none"
        candidate = side != "none"
        survives = candidate and pred.risk < params.th_r
        if survives:
            (long_survivors if side == "long" else short_survivors).append(pred.asset_id)
        meta.append((pred, rank, side, candidate, candidate and not survives))

    n_short = len(short_survivors)
    n_long = len(long_survivors)
    degenerate = n_short == 0 or n_long == 0

    weights = {p.asset_id: 0.0 for p in predictions}
    if not degenerate or allow_one_sided:
        if n_short > 0 and (n_long > 0 or allow_one_sided):
            for asset_id in short_survivors:
                weights[asset_id] = -1.0 / n_short
        if n_long > 0 and (n_short > 0 or allow_one_sided):
            for asset_id in long_survivors:
                weights[asset_id] = 1.0 / n_long

    selections = [
        SelectionRecord(
            asset_id=pred.asset_id,
            rank=rank,
            score=pred.score,
            risk=pred.risk,
            side=side,
            candidate=candidate,
            eliminated=eliminated,
            weight=weights[pred.asset_id],
        )
        for pred, rank, side, candidate, eliminated in meta
    ]
    return PortfolioWeights(
        weights=weights,
        rebalance_time=rebalance_time,
        n_long=n_long,
        n_short=n_short,
        degenerate_flag=degenerate,
        selections=selections,
    )


def turnover(prev: PortfolioWeights, nxt: PortfolioWeights) -> float:
    """Half the L1 distance between consecutive books on one universe."""
    if set(prev.weights) != set(nxt.weights):
        raise DataError("turnover requires the same universe on both sides")
    return 0.5 * float(sum(abs(nxt.weights[a] - prev.weights[a]) for a in prev.weights))


def save_weights_csv(path, books: Sequence[PortfolioWeights]) -> None:
    """Audit export, one row per (rebalance, asset), sorted for determinism."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEIGHTS_HEADER)
        for book in books:
            for rec in sorted(book.selections, key=lambda r: r.asset_id):
                writer.writerow([
                    "" if book.rebalance_time is None else book.rebalance_time,
                    rec.asset_id,
                    repr(float(rec.weight)),
                    rec.side,
                    repr(float(rec.score)),
                    repr(float(rec.risk)),
                    str(rec.eliminated).lower(),
                ])
