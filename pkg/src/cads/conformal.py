"""Adaptive prediction sets: nonconformity scores, calibration, set construction.

The nonconformity score of a labelled sample is the cumulative probability
mass of the classes ranked at or above the true class (descending
probability, ties broken by ascending class index).  Calibration picks the
conservative empirical quantile

    level = min(ceil((n + 1) * (1 - zeta)) / n, 1)

of the calibration scores, i.e. the ``ceil(level * n)``-th smallest score.
A test point's prediction set is the smallest descending-probability prefix
whose cumulative mass reaches that quantile; the crossing class is included,
so sets are never empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ValidationError


class Measure(str, Enum):
    """Routing uncertainty sources.  APS is the primary mechanism; the rest
    exist for the ablation harness."""

    APS = "aps"
    MAX_SOFTMAX = "max_softmax"
    ENTROPY = "entropy"
    MARGIN = "margin"


@dataclass(frozen=True)
class ConformalCalibration:
    """Per-expert calibrated quantile at non-coverage rate zeta."""

    expert_id: int
    zeta: float
    q_hat: float
    n_calibration: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.q_hat <= 1.0:
            raise ValidationError(f"q_hat must be in [0, 1], got {self.q_hat}")
        if self.n_calibration < 1:
            raise ValidationError("n_calibration must be >= 1")

    def to_dict(self) -> dict:
        return {
            "expert": self.expert_id,
            "zeta": self.zeta,
            "q_hat": self.q_hat,
            "n": self.n_calibration,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConformalCalibration":
        return cls(
            expert_id=int(doc["expert"]),
            zeta=float(doc["zeta"]),
            q_hat=float(doc["q_hat"]),
            n_calibration=int(doc["n"]),
        )


@dataclass(frozen=True)
class PredictionSet:
    """Class indices ordered by descending probability of the generating expert."""

    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)


def _descending_order(probs: np.ndarray) -> np.ndarray:
    # stable sort on the negated vector: descending probability, ties by
    # ascending class index
    return np.argsort(-probs, kind="stable")


def aps_score(probs: np.ndarray, true_label: int) -> float:
    """Cumulative sorted probability mass up to and including the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_label < probs.shape[0]:
        raise ValidationError(f"true_label {true_label} out of range")
    order = _descending_order(probs)
    total = 0.0
    for cls in order:
        total += probs[cls]
        if cls == true_label:
            return total
    raise AssertionError("unreachable: true label not in ranking")


def aps_scores(rows: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Vectorized `aps_score` over an N x C matrix.

    Matches the scalar function bit for bit: the cumulative sum accumulates
    in the same descending-probability order.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(-rows, axis=1, kind="stable")
    sorted_rows = np.take_along_axis(rows, order, axis=1)
    cumsum = np.cumsum(sorted_rows, axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(rows.shape[1])[None, :], axis=1)
    true_rank = ranks[np.arange(rows.shape[0]), labels]
    return cumsum[np.arange(rows.shape[0]), true_rank]


def calibrate(scores, zeta: float, expert_id: int = 0) -> ConformalCalibration:
    """Calibrate the conservative score quantile on held-out scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValidationError("calibrate needs a non-empty 1-D score vector")
    if not 0.0 < zeta < 1.0:
        raise ValidationError(f"zeta must be in (0, 1), got {zeta}")
    n = scores.size
    q_hat = quantile_from_sorted(np.sort(scores), zeta)
    return ConformalCalibration(
        expert_id=expert_id, zeta=zeta, q_hat=float(q_hat), n_calibration=n
    )


def quantile_from_sorted(sorted_scores: np.ndarray, zeta: float) -> float:
    """Conservative quantile from pre-sorted scores: the k-th smallest with
    ``k = min(ceil((n + 1) * (1 - zeta)), n)``."""
    n = sorted_scores.shape[0]
    k = min(int(math.ceil((n + 1) * (1.0 - zeta))), n)
    return float(sorted_scores[k - 1])


def prediction_set(probs: np.ndarray, calibration: ConformalCalibration | float) -> PredictionSet:
    """Smallest descending-probability class prefix reaching the quantile."""
    q_hat = calibration.q_hat if isinstance(calibration, ConformalCalibration) else float(calibration)
    probs = np.asarray(probs, dtype=np.float64)
    order = _descending_order(probs)
    total = 0.0
    for j, cls in enumerate(order):
        total += probs[cls]
        if total >= q_hat:
            return PredictionSet(members=tuple(int(c) for c in order[: j + 1]))
    # cumulative mass never crossed (q_hat at or above the full row sum)
    return PredictionSet(members=tuple(int(c) for c in order))


def set_size_from_cumsum(cumsum_row: np.ndarray, q_hat: float) -> int:
    """Prediction-set size given the precomputed sorted cumulative row."""
    j = int(np.searchsorted(cumsum_row, q_hat, side="left"))
    return min(j, cumsum_row.shape[0] - 1) + 1


def alternative_uncertainty(probs: np.ndarray, measure: Measure) -> float:
    """Scalar uncertainty in [0, 1] for the non-conformal routing ablations."""
    values = batch_uncertainty(np.asarray(probs, dtype=np.float64)[None, :], measure)
    return float(values[0])


def batch_uncertainty(rows: np.ndarray, measure: Measure) -> np.ndarray:
    """Vectorized uncertainty over an N x C matrix; higher means less certain."""
    rows = np.asarray(rows, dtype=np.float64)
    c = rows.shape[1]
    if measure is Measure.MAX_SOFTMAX:
        return 1.0 - rows.max(axis=1)
    if measure is Measure.MARGIN:
        part = np.partition(rows, c - 2, axis=1)
        top, second = part[:, -1], part[:, -2]
        return 1.0 - (top - second)
    if measure is Measure.ENTROPY:
        # accumulate class by class so scalar and batch paths agree exactly;
        # 0 * ln 0 is treated as 0
        acc = np.zeros(rows.shape[0], dtype=np.float64)
        for j in range(c):
            col = rows[:, j]
            term = np.where(col > 0.0, col * np.log(np.where(col > 0.0, col, 1.0)), 0.0)
            acc = acc - term
        return acc / math.log(c)
    if measure is Measure.APS:
        raise ValidationError("APS has no scalar uncertainty; use prediction sets")
    raise ValidationError(f"unknown measure {measure!r}")


def empirical_coverage(
    eval_rows: np.ndarray, eval_labels: np.ndarray, calibration: ConformalCalibration
) -> float:
    """Fraction of evaluation samples whose true label lands in the set.

    The true class at rank r is a member iff the cumulative mass strictly
    below it is under q_hat (the crossing class is included), or r is the
    top rank (sets are never empty).
    """
    rows = np.asarray(eval_rows, dtype=np.float64)
    labels = np.asarray(eval_labels, dtype=np.int64)
    idx = np.arange(rows.shape[0])
    order = np.argsort(-rows, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(rows.shape[1])[None, :], axis=1)
    true_rank = ranks[idx, labels]
    sorted_rows = np.take_along_axis(rows, order, axis=1)
    cumsum = np.cumsum(sorted_rows, axis=1)
    mass_below = cumsum[idx, true_rank] - rows[idx, labels]
    member = (true_rank == 0) | (mass_below < calibration.q_hat)
    return float(np.mean(member))
