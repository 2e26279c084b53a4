"""Expert profiles, class difficulty, and error-rectification tables.

All statistics are measured on the calibration split only.  An expert's
profile holds its global accuracy, per-class accuracy, and efficiency
(accuracy divided by per-sample GFLOPs).  The complementarity tables
estimate, globally and per ordered class pair, the probability that
expert B answers correctly on samples where expert A is wrong.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PredictionPool, ValidationError

# Pairwise cells estimated from fewer calibration samples than this are
# flagged unsupported and the router falls back to the global table.
MIN_PAIR_SUPPORT = 5


@dataclass(frozen=True)
class ExpertProfile:
    expert_id: int
    cost_gflops: float
    accuracy: float
    per_class_accuracy: np.ndarray
    per_class_support: np.ndarray
    efficiency: float

    @property
    def unsupported_classes(self) -> np.ndarray:
        """Classes with no calibration samples; their accuracy entries are 0."""
        return self.per_class_support == 0

    def to_dict(self) -> dict:
        return {
            "expert": self.expert_id,
            "cost_gflops": self.cost_gflops,
            "accuracy": self.accuracy,
            "efficiency": self.efficiency,
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "per_class_support": self.per_class_support.tolist(),
        }


@dataclass(frozen=True)
class ClassDifficulty:
    """Historical per-class difficulty: one minus the expert-pool mean of
    per-class accuracy, clamped to [0, 1]."""

    difficulty: np.ndarray

    def to_dict(self) -> dict:
        return {"difficulty": self.difficulty.tolist()}


@dataclass(frozen=True)
class ComplementarityTable:
    """Global K x K and pairwise (class-pair keyed) rectification tables.

    ``global_comp[a, b]`` is P[expert b correct | expert a wrong] on the
    calibration split; rows where expert a made no errors carry 0 and are
    flagged unsupported.  ``pairwise_comp[c1, c2, a, b]`` conditions on the
    ordered event (true class c1, expert a predicted c2); its denominator
    count is ``pairwise_support[c1, c2, a]``.  The diagonal (a == b) is
    never consulted by the router.
    """

    global_comp: np.ndarray
    global_support: np.ndarray
    pairwise_comp: np.ndarray
    pairwise_support: np.ndarray
    min_pair_support: int = MIN_PAIR_SUPPORT

    @property
    def n_experts(self) -> int:
        return self.global_comp.shape[0]

    @property
    def n_classes(self) -> int:
        return self.pairwise_support.shape[0]

    def global_supported(self, a: int) -> bool:
        return bool(self.global_support[a] > 0)

    def pair_supported(self, c1: int, c2: int, a: int) -> bool:
        return bool(self.pairwise_support[c1, c2, a] >= self.min_pair_support)

    def pairwise(self, c1: int, c2: int) -> tuple[np.ndarray, np.ndarray]:
        """K x K matrix and per-A support counts for one ordered class pair."""
        return self.pairwise_comp[c1, c2], self.pairwise_support[c1, c2]

    def to_dict(self) -> dict:
        pairs = []
        c = self.n_classes
        for c1 in range(c):
            for c2 in range(c):
                support = self.pairwise_support[c1, c2]
                if support.max(initial=0) > 0:
                    pairs.append(
                        {
                            "c1": c1,
                            "c2": c2,
                            "support": support.tolist(),
                            "comp": self.pairwise_comp[c1, c2].tolist(),
                        }
                    )
        return {
            "global": self.global_comp.tolist(),
            "global_support": self.global_support.tolist(),
            "min_pair_support": self.min_pair_support,
            "pairwise": pairs,
        }


def build_profiles(
    matrices, labels: np.ndarray, costs, calibration_ids: np.ndarray
) -> list[ExpertProfile]:
    """Profile every expert on the calibration split.

    ``matrices`` may be PredictionMatrix objects or plain N x C arrays
    spanning the full dataset; rows are restricted to ``calibration_ids``.
    """
    calibration_ids = np.asarray(calibration_ids, dtype=np.int64)
    if calibration_ids.size == 0:
        raise ValidationError("calibration set is empty")
    labels = np.asarray(labels, dtype=np.int64)[calibration_ids]
    costs = np.asarray(costs, dtype=np.float64)
    profiles = []
    for k, mat in enumerate(matrices):
        rows = getattr(mat, "rows", mat)
        rows = np.asarray(rows, dtype=np.float64)[calibration_ids]
        n_classes = rows.shape[1]
        preds = np.argmax(rows, axis=1)
        correct = preds == labels
        accuracy = float(np.mean(correct))
        support = np.bincount(labels, minlength=n_classes).astype(np.int64)
        hits = np.bincount(labels[correct], minlength=n_classes).astype(np.int64)
        per_class = np.zeros(n_classes, dtype=np.float64)
        nonzero = support > 0
        per_class[nonzero] = hits[nonzero] / support[nonzero]
        per_class.flags.writeable = False
        support.flags.writeable = False
        profiles.append(
            ExpertProfile(
                expert_id=k,
                cost_gflops=float(costs[k]),
                accuracy=accuracy,
                per_class_accuracy=per_class,
                per_class_support=support,
                efficiency=accuracy / float(costs[k]),
            )
        )
    return profiles


def build_class_difficulty(profiles: list[ExpertProfile]) -> ClassDifficulty:
    if not profiles:
        raise ValidationError("need at least one profile")
    acc = np.stack([p.per_class_accuracy for p in profiles], axis=0)
    difficulty = np.clip(1.0 - acc.mean(axis=0), 0.0, 1.0)
    difficulty.flags.writeable = False
    return ClassDifficulty(difficulty=difficulty)


def build_complementarity(
    matrices, labels: np.ndarray, calibration_ids: np.ndarray,
    min_pair_support: int = MIN_PAIR_SUPPORT,
) -> ComplementarityTable:
    """Count-based rectification tables on the calibration split.

    Zero-denominator cells are 0 and unsupported rather than errors, so a
    flawless expert never blocks table construction.
    """
    calibration_ids = np.asarray(calibration_ids, dtype=np.int64)
    if calibration_ids.size == 0:
        raise ValidationError("calibration set is empty")
    y = np.asarray(labels, dtype=np.int64)[calibration_ids]
    preds = []
    n_classes = 0
    for mat in matrices:
        rows = np.asarray(getattr(mat, "rows", mat), dtype=np.float64)
        n_classes = rows.shape[1]
        preds.append(np.argmax(rows[calibration_ids], axis=1))
    preds = np.stack(preds, axis=0)
    k_experts = preds.shape[0]
    correct = preds == y[None, :]

    global_comp = np.zeros((k_experts, k_experts), dtype=np.float64)
    global_support = np.zeros(k_experts, dtype=np.int64)
    pairwise_comp = np.zeros((n_classes, n_classes, k_experts, k_experts), dtype=np.float64)
    pairwise_support = np.zeros((n_classes, n_classes, k_experts), dtype=np.int64)

    pair_index_size = n_classes * n_classes
    for a in range(k_experts):
        wrong_a = ~correct[a]
        n_wrong = int(wrong_a.sum())
        global_support[a] = n_wrong
        pair_idx = y * n_classes + preds[a]
        den = np.bincount(pair_idx, minlength=pair_index_size).reshape(n_classes, n_classes)
        pairwise_support[:, :, a] = den
        for b in range(k_experts):
            if n_wrong > 0:
                global_comp[a, b] = float((wrong_a & correct[b]).sum()) / n_wrong
            num = np.bincount(pair_idx[correct[b]], minlength=pair_index_size)
            num = num.reshape(n_classes, n_classes)
            cell = np.zeros((n_classes, n_classes), dtype=np.float64)
            nz = den > 0
            cell[nz] = num[nz] / den[nz]
            pairwise_comp[:, :, a, b] = cell

    for arr in (global_comp, global_support, pairwise_comp, pairwise_support):
        arr.flags.writeable = False
    return ComplementarityTable(
        global_comp=global_comp,
        global_support=global_support,
        pairwise_comp=pairwise_comp,
        pairwise_support=pairwise_support,
        min_pair_support=min_pair_support,
    )
