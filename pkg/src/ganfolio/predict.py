"""Probabilistic prediction from a trained generator.

For one condition the generator is sampled many times with fresh noise;
the resulting set of category distributions is aggregated into a point
prediction (mean, and an elementwise median for reference), a modal
category, a long-short score, and a confidence measure: the negated
symmetric KL divergence between the modal-category probability and its
complement, summed over all samples.  More negative means more
confident; 0 means every sample sat at exactly 0.5.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import CATEGORIES
from .errors import DataError, GanfolioError, ParameterError, ShapeError
from .gan import generator_inputs, sample_noise
from .nn import Network, forward

PROB_CLAMP = 1e-7
REFERENCE_SAMPLE_COUNT = 101  # risk thresholds are calibrated at this I

ConditionId = Union[str, Tuple[str, int]]

PREDICTIONS_HEADER = [
    "asset_id", "timestamp", "p_minus", "p_zero", "p_plus",
    "c_m", "score", "risk_U", "I",
]


def _id_parts(condition_id: ConditionId) -> Tuple[str, Optional[int]]:
    if isinstance(condition_id, tuple):
        asset, t = condition_id
        return str(asset), int(t)
    return str(condition_id), None


@dataclass
class PredictionEnsemble:
    """I generator outputs for one condition, order preserved."""

    samples: np.ndarray  # (I, 3) rows on the probability simplex
    condition_id: ConditionId

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(CATEGORIES):
            raise DataError("ensemble samples must be (I, 3)")
        if self.samples.shape[0] < 1:
            raise DataError("ensemble needs at least one sample")
        if np.any(self.samples < 0):
            raise DataError("ensemble rows must be nonnegative")
        if np.any(np.abs(self.samples.sum(axis=1) - 1.0) > 1e-9):
            raise DataError("ensemble rows must sum to 1")

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]


@dataclass
class AssetPrediction:
    """Aggregated view of one ensemble."""

    condition_id: ConditionId
    mean_probs: np.ndarray     # arithmetic mean over samples
    median_probs: np.ndarray   # per-category median, renormalized
    c_m: str                   # modal category tag
    score: float               # mean p_plus - mean p_minus
    risk: float                # <= 0, see risk_measure
    sample_count: int

    @property
    def c_m_index(self) -> int:
        return CATEGORIES.index(self.c_m)

    @property
    def asset_id(self) -> str:
        return _id_parts(self.condition_id)[0]

    @property
    def timestamp(self) -> Optional[int]:
        return _id_parts(self.condition_id)[1]


def ensemble_predict(
    g: Network,
    x: np.ndarray,
    sample_count: int,
    rng: "int | np.random.Generator",
    condition_id: ConditionId = "",
) -> PredictionEnsemble:
    """Sample the generator sample_count times with fresh noise, fixed x."""
    if sample_count < 1:
        raise ParameterError("sample_count must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    declared = g.meta.get("condition_width")
    if declared is not None and x.shape[0] != declared:
        raise ShapeError(
            f"condition length {x.shape[0]} does not match the generator's "
            f"declared condition width {declared}"
        )
    noise_dim = g.input_dim - x.shape[0]
    if noise_dim < 1:
        raise ShapeError(
            f"condition length {x.shape[0]} leaves no noise inputs "
            f"(generator input dim {g.input_dim})"
        )
    z = sample_noise(sample_count, noise_dim, rng)
    outputs, _ = forward(g, generator_inputs(z, np.tile(x, (sample_count, 1))))
    return PredictionEnsemble(samples=outputs["out"], condition_id=condition_id)


def risk_measure(ensemble: PredictionEnsemble, c_m: str) -> float:
    """Negated symmetric KL sum between p(c_m) and 1-p(c_m) over samples.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    result is <= 0, equal to 0 only when every clamped p is 0.5, and
    scales linearly with the number of samples.
    """
    idx = CATEGORIES.index(c_m)
    p = np.clip(ensemble.samples[:, idx], PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = 1.0 - p
    return float(-(p * np.log(p / q)).sum() - (q * np.log(q / p)).sum())


def aggregate(ensemble: PredictionEnsemble) -> AssetPrediction:
    """Mean/median aggregation, modal category, score and risk.

    The modal category maximizes the summed probability; ties resolve to
    the earliest tag in (c_minus, c_zero, c_plus).  The median aggregate
    is renormalized because per-category medians need not sum to one.
    """
    mean_probs = ensemble.samples.mean(axis=0)
    median_raw = np.median(ensemble.samples, axis=0)
    total = median_raw.sum()
    median_probs = median_raw / total if total > 0 else np.full(3, 1.0 / 3.0)
    c_idx = int(np.argmax(ensemble.samples.sum(axis=0)))
    c_m = CATEGORIES[c_idx]
    score = float(mean_probs[2] - mean_probs[0])
    return AssetPrediction(
        condition_id=ensemble.condition_id,
        mean_probs=mean_probs,
        median_probs=median_probs,
        c_m=c_m,
        score=score,
        risk=risk_measure(ensemble, c_m),
        sample_count=ensemble.sample_count,
    )


def _condition_rng(master_seed: int, condition_id: ConditionId) -> np.random.Generator:
    """Stream keyed by the condition identity, not by evaluation order."""
    asset, t = _id_parts(condition_id)
    key = f"{asset}|{'' if t is None else t}".encode("utf-8")
    digest = hashlib.sha256(key).digest()
    words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *words]))


def predict_universe(
    g: Network,
    conditions: Sequence[Tuple[ConditionId, np.ndarray]],
    sample_count: int,
    master_seed: int,
    threads: int = 1,
) -> List[AssetPrediction]:
    """One AssetPrediction per condition, order preserved.

    Each condition gets its own noise stream derived from (master_seed,
    condition id), so results do not depend on evaluation order or on the
    number of worker threads.
    """

    def one(item: Tuple[ConditionId, np.ndarray]) -> AssetPrediction:
        condition_id, x = item
        try:
            ensemble = ensemble_predict(
                g, x, sample_count, _condition_rng(master_seed, condition_id),
                condition_id=condition_id,
            )
            return aggregate(ensemble)
        except GanfolioError as exc:
            raise type(exc)(f"condition {condition_id!r}: {exc}") from exc

    if threads > 1 and len(conditions) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, conditions))
    return [one(item) for item in conditions]


def save_predictions_csv(path, predictions: Sequence[AssetPrediction]) -> None:
    """Flat dump; float fields use repr for lossless round-trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for pred in predictions:
            t = pred.timestamp
            writer.writerow([
                pred.asset_id,
                "" if t is None else t,
                repr(float(pred.mean_probs[0])),
                repr(float(pred.mean_probs[1])),
                repr(float(pred.mean_probs[2])),
                pred.c_m,
                repr(float(pred.score)),
                repr(float(pred.risk)),
                pred.sample_count,
            ])
