"""Sequential cascade engine: categorization, expert selection, hybrid
ensembling, and adaptive exit logic.

This module is the readable per-sample reference.  The batch kernels in
``kernels_numpy``/``kernels_numba`` replicate it and must agree bit for
bit, so the accumulation order here is canonical:

* all sums over consulted experts run in consultation order;
* the consensus class is the argmax (first maximum) of the globally
  weighted vote;
* scalar powers use float64 ``**``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .conformal import ConformalCalibration, Measure, PredictionSet, prediction_set, alternative_uncertainty
from .core import ValidationError
from .profiling import ClassDifficulty, ComplementarityTable, ExpertProfile

# Fixed constants of the aggregation and exit rules (not hyperparameters).
LOCAL_WEIGHT_EPSILON = 0.01
GLOBAL_MIX = 0.6
LOCAL_MIX = 0.4
CONSENSUS_AGREEMENT = 0.8
THRESHOLD_CAP = 0.98
DIFFICULTY_SLOPE = 0.1
# Uncertainty bucket edges used only when routing on a scalar measure
# instead of prediction-set sizes (ablation harness; edges are arbitrary).
MEASURE_SINGLETON_EDGE = 0.1
MEASURE_BINARY_EDGE = 0.35


class Category(IntEnum):
    SINGLETON = 0
    BINARY = 1
    DIFFICULT = 2


class ExitReason(IntEnum):
    CONFIDENCE_EXIT = 0
    ALL_EXPERTS_USED = 1

    @property
    def label(self) -> str:
        return "confidence_exit" if self is ExitReason.CONFIDENCE_EXIT else "all_experts_used"


@dataclass(frozen=True)
class PolicyConfig:
    """The routing policy hyperparameter vector.

    The three base thresholds must be ordered singleton >= binary >=
    difficult; the search space repairs samples into that ordering before
    construction.
    """

    zeta: float = 0.1
    alpha_singleton: float = 0.9
    alpha_binary: float = 0.8
    alpha_difficult: float = 0.7
    w: float = 0.5
    gamma: float = 2.0
    beta: float = 2.0
    delta: float = 0.03
    delta_max: float = 0.05
    min_experts: int = 1
    start_expert: int = 0
    epsilon: float = LOCAL_WEIGHT_EPSILON

    def __post_init__(self) -> None:
        if not 0.0 < self.zeta < 1.0:
            raise ValidationError(f"zeta must be in (0, 1), got {self.zeta}")
        for name in ("alpha_singleton", "alpha_binary", "alpha_difficult"):
            v = getattr(self, name)
            if not 0.5 <= v <= 0.98:
                raise ValidationError(f"{name} must be in [0.5, 0.98], got {v}")
        if not (self.alpha_singleton >= self.alpha_binary >= self.alpha_difficult):
            raise ValidationError(
                "thresholds must satisfy singleton >= binary >= difficult, got "
                f"{self.alpha_singleton}/{self.alpha_binary}/{self.alpha_difficult}"
            )
        if not 0.0 <= self.w <= 1.0:
            raise ValidationError(f"w must be in [0, 1], got {self.w}")
        if self.gamma < 1.0:
            raise ValidationError(f"gamma must be >= 1, got {self.gamma}")
        if self.beta <= 0.0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        if self.delta < 0.0 or self.delta_max < 0.0:
            raise ValidationError("delta and delta_max must be >= 0")
        if self.min_experts < 1:
            raise ValidationError(f"min_experts must be >= 1, got {self.min_experts}")
        if self.start_expert < 0:
            raise ValidationError("start_expert must be a valid expert index")
        if self.epsilon != LOCAL_WEIGHT_EPSILON:
            raise ValidationError(f"epsilon is fixed at {LOCAL_WEIGHT_EPSILON}")

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "alpha_singleton": self.alpha_singleton,
            "alpha_binary": self.alpha_binary,
            "alpha_difficult": self.alpha_difficult,
            "w": self.w,
            "gamma": self.gamma,
            "beta": self.beta,
            "delta": self.delta,
            "delta_max": self.delta_max,
            "min_experts": self.min_experts,
            "start_expert": self.start_expert,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})

    def with_fixed_exit(self) -> "PolicyConfig":
        """Variant with the consensus boost disabled (fixed-threshold ablation)."""
        return replace(self, delta=0.0, delta_max=0.0)


@dataclass(frozen=True)
class CascadeTrace:
    """Per-sample record of one cascade run."""

    sample_id: int
    consulted: tuple[int, ...]
    exit_reason: ExitReason
    category_history: tuple[Category, ...]
    final_distribution: np.ndarray
    predicted_class: int
    cost_gflops: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "consulted": list(self.consulted),
            "exit_reason": self.exit_reason.label,
            "categories": [int(c) for c in self.category_history],
            "final_distribution": [float(v) for v in self.final_distribution],
            "predicted_class": self.predicted_class,
            "cost_gflops": self.cost_gflops,
        }


def categorize(set_size: int, config: PolicyConfig) -> tuple[Category, float]:
    """Map a prediction-set size to its category and base exit threshold."""
    if set_size < 1:
        raise ValidationError("prediction sets are never empty")
    if set_size == 1:
        return Category.SINGLETON, config.alpha_singleton
    if set_size == 2:
        return Category.BINARY, config.alpha_binary
    return Category.DIFFICULT, config.alpha_difficult


def categorize_uncertainty(value: float, config: PolicyConfig) -> tuple[Category, float]:
    """Bucket a scalar uncertainty into the same three categories."""
    if value < MEASURE_SINGLETON_EDGE:
        return Category.SINGLETON, config.alpha_singleton
    if value < MEASURE_BINARY_EDGE:
        return Category.BINARY, config.alpha_binary
    return Category.DIFFICULT, config.alpha_difficult


def _argmax(values: np.ndarray) -> int:
    # first maximum, i.e. lowest index among ties
    return int(np.argmax(values))


def efficiency_normalizer(profiles: Sequence[ExpertProfile]) -> float:
    return max(p.efficiency for p in profiles)


def select_next_expert(
    current: int,
    latest_set: PredictionSet | Sequence[int],
    unused: Sequence[int],
    tables: ComplementarityTable,
    profiles: Sequence[ExpertProfile],
    config: PolicyConfig,
) -> int:
    """Pick the unused expert maximizing
    ``w * Comp(current, candidate) + (1 - w) * eff_norm(candidate)``.

    When the latest prediction set is binary the pairwise table is
    consulted for both class orders (max over supported cells), falling
    back to the global table when neither order has enough support.
    Ties break toward the lower expert id.
    """
    unused = sorted(unused)
    if not unused:
        raise ValidationError("no unused experts to select from")
    members = latest_set.members if isinstance(latest_set, PredictionSet) else tuple(latest_set)
    eff_max = efficiency_normalizer(profiles)
    best, best_score = -1, -np.inf
    for b in unused:
        comp = float(tables.global_comp[current, b])
        if len(members) == 2:
            c1, c2 = members[0], members[1]
            s1 = tables.pair_supported(c1, c2, current)
            s2 = tables.pair_supported(c2, c1, current)
            if s1 and s2:
                comp = max(
                    float(tables.pairwise_comp[c1, c2, current, b]),
                    float(tables.pairwise_comp[c2, c1, current, b]),
                )
            elif s1:
                comp = float(tables.pairwise_comp[c1, c2, current, b])
            elif s2:
                comp = float(tables.pairwise_comp[c2, c1, current, b])
        eff_norm = profiles[b].efficiency / eff_max
        score = config.w * comp + (1.0 - config.w) * eff_norm
        if score > best_score:
            best, best_score = b, score
    return best


def ensemble(
    consulted: Sequence[int],
    per_expert_probs: Sequence[np.ndarray],
    profiles: Sequence[ExpertProfile],
    config: PolicyConfig,
) -> tuple[np.ndarray, int, np.ndarray]:
    """Hybrid-weighted aggregate of the consulted experts.

    Returns the ensemble distribution, the consensus class (argmax of the
    global-weight-only vote, which anchors the local weights), and the
    final per-expert weights.
    """
    if len(consulted) == 0:
        raise ValidationError("ensemble needs at least one consulted expert")
    n_classes = np.asarray(per_expert_probs[0]).shape[0]
    w_global = [profiles[k].accuracy ** config.gamma for k in consulted]

    vote = np.zeros(n_classes, dtype=np.float64)
    for j, k in enumerate(consulted):
        vote = vote + w_global[j] * np.asarray(per_expert_probs[j], dtype=np.float64)
    c_star = _argmax(vote)

    local_raw = []
    local_sum = 0.0
    for j, k in enumerate(consulted):
        # scalar float pow; the batch kernels use tables built the same way
        lw = (float(profiles[k].per_class_accuracy[c_star]) + config.epsilon) ** config.beta
        local_raw.append(lw)
        local_sum += lw

    weights = np.empty(len(consulted), dtype=np.float64)
    numerator = np.zeros(n_classes, dtype=np.float64)
    denominator = 0.0
    for j, k in enumerate(consulted):
        wk = GLOBAL_MIX * w_global[j] + LOCAL_MIX * (local_raw[j] / local_sum)
        weights[j] = wk
        numerator = numerator + wk * np.asarray(per_expert_probs[j], dtype=np.float64)
        denominator += wk
    p_ens = numerator / denominator
    return p_ens, c_star, weights


def exit_threshold(
    category_alpha: float,
    n_consulted: int,
    agreement_fraction: float,
    d_cstar: float,
    config: PolicyConfig,
) -> float:
    """Final exit threshold after the consensus boost and the difficulty shift.

    The boost applies only with strictly more than 80% agreement; the
    difficulty term shifts the threshold by (d - 0.5) * 0.1 and the result
    is capped at 0.98 (no lower clamp).
    """
    if agreement_fraction > CONSENSUS_AGREEMENT:
        alpha_boosted = category_alpha - min(
            config.delta * (n_consulted - 1), config.delta_max
        )
    else:
        alpha_boosted = category_alpha
    return min(alpha_boosted + (d_cstar - 0.5) * DIFFICULTY_SLOPE, THRESHOLD_CAP)


def run_cascade(
    sample_id: int,
    sample_probs,
    calibrations: Sequence[ConformalCalibration],
    profiles: Sequence[ExpertProfile],
    tables: ComplementarityTable,
    difficulty: ClassDifficulty,
    config: PolicyConfig,
    costs: Sequence[float] | None = None,
    measure: Measure = Measure.APS,
) -> CascadeTrace:
    """Run the full sequential cascade for one sample.

    ``sample_probs`` maps an expert id to its probability row and is only
    consulted for experts that actually enter the cascade (pass a callable
    or an indexable; an instrumented wrapper can verify laziness).
    """
    fetch: Callable[[int], np.ndarray]
    if callable(sample_probs):
        fetch = sample_probs
    else:
        fetch = sample_probs.__getitem__
    n_experts = len(profiles)
    if costs is None:
        costs = [p.cost_gflops for p in profiles]

    consulted: list[int] = []
    consulted_probs: list[np.ndarray] = []
    categories: list[Category] = []
    argmaxes: list[int] = []
    next_expert = config.start_expert
    exit_reason = ExitReason.ALL_EXPERTS_USED
    p_ens = None

    while True:
        k = next_expert
        probs_k = np.asarray(fetch(k), dtype=np.float64)
        consulted.append(k)
        consulted_probs.append(probs_k)
        argmaxes.append(_argmax(probs_k))

        if measure is Measure.APS:
            latest_set = prediction_set(probs_k, calibrations[k])
            category, alpha_base = categorize(latest_set.size, config)
        else:
            u = alternative_uncertainty(probs_k, measure)
            category, alpha_base = categorize_uncertainty(u, config)
            order = np.argsort(-probs_k, kind="stable")
            latest_set = PredictionSet(members=tuple(int(c) for c in order[:2])) \
                if category is Category.BINARY else PredictionSet(members=(int(order[0]),))
        categories.append(category)

        p_ens, c_star, _ = ensemble(consulted, consulted_probs, profiles, config)

        counts = np.bincount(np.asarray(argmaxes), minlength=probs_k.shape[0])
        agreement = float(counts.max()) / len(consulted)
        alpha_final = exit_threshold(
            alpha_base, len(consulted), agreement, float(difficulty.difficulty[c_star]), config
        )

        last_two_agree = len(consulted) == 1 or argmaxes[-1] == argmaxes[-2]
        confidence = float(np.max(p_ens))
        if (
            len(consulted) >= config.min_experts
            and confidence >= alpha_final
            and last_two_agree
        ):
            exit_reason = ExitReason.CONFIDENCE_EXIT
            break
        if len(consulted) == n_experts:
            exit_reason = ExitReason.ALL_EXPERTS_USED
            break
        unused = [b for b in range(n_experts) if b not in consulted]
        next_expert = select_next_expert(k, latest_set, unused, tables, profiles, config)

    cost = 0.0
    for k in consulted:
        cost += float(costs[k])
    return CascadeTrace(
        sample_id=sample_id,
        consulted=tuple(consulted),
        exit_reason=exit_reason,
        category_history=tuple(categories),
        final_distribution=p_ens,
        predicted_class=_argmax(p_ens),
        cost_gflops=cost,
    )
