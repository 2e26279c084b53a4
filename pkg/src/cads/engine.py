"""Packed runtime for batch cascade evaluation.

``CascadeEngine.build`` performs every policy-independent precomputation
once per (pool, split): stacked probability tensors, per-expert argmaxes,
descending-sorted cumulative rows (for prediction-set sizes by binary
search), sorted calibration scores (for quantiles at any zeta), profiles,
class difficulty, and the complementarity tables.  ``run`` then evaluates
one policy over a set of sample ids through the selected kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import conformal
from .backend import get_cascade_batch
from .conformal import ConformalCalibration, Measure
from .core import PredictionPool, SplitIndex, Tier, TIERS_BY_RANK, ValidationError
from .profiling import (
    ClassDifficulty,
    ComplementarityTable,
    ExpertProfile,
    build_class_difficulty,
    build_complementarity,
    build_profiles,
)
from .router import CascadeTrace, Category, ExitReason, PolicyConfig


@dataclass
class BatchResult:
    """Packed traces for one policy evaluation over a set of sample ids."""

    ids: np.ndarray
    consulted: np.ndarray
    n_consulted: np.ndarray
    categories: np.ndarray
    exit_reason: np.ndarray
    distributions: np.ndarray
    predicted: np.ndarray
    cost: np.ndarray
    labels: np.ndarray
    tiers: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.ids.shape[0])

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.predicted == self.labels))

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.cost))

    def tier_usage(self) -> dict[str, float]:
        """Fraction of all expert calls landing in each tier."""
        flat = self.consulted[self.consulted >= 0]
        total = flat.size
        counts = np.bincount(self.tiers[flat], minlength=3)
        return {
            tier.value: (float(counts[tier.rank]) / total if total else 0.0)
            for tier in TIERS_BY_RANK
        }

    def tier_reach(self) -> dict[str, float]:
        """Fraction of samples that consulted at least one expert of each tier."""
        reach = {}
        for tier in TIERS_BY_RANK:
            members = np.flatnonzero(self.tiers == tier.rank)
            if members.size == 0:
                reach[tier.value] = 0.0
                continue
            hit = np.isin(self.consulted, members) & (self.consulted >= 0)
            reach[tier.value] = float(np.mean(hit.any(axis=1)))
        return reach

    def cost_summary(self) -> dict[str, float]:
        return {
            "min": float(self.cost.min()),
            "median": float(np.median(self.cost)),
            "mean": float(self.cost.mean()),
            "max": float(self.cost.max()),
        }

    def traces(self) -> Iterator[CascadeTrace]:
        for row in range(self.n_samples):
            nc = int(self.n_consulted[row])
            yield CascadeTrace(
                sample_id=int(self.ids[row]),
                consulted=tuple(int(k) for k in self.consulted[row, :nc]),
                exit_reason=ExitReason(int(self.exit_reason[row])),
                category_history=tuple(Category(int(c)) for c in self.categories[row, :nc]),
                final_distribution=self.distributions[row],
                predicted_class=int(self.predicted[row]),
                cost_gflops=float(self.cost[row]),
            )

    def to_jsonl(self, path) -> None:
        import json

        with open(path, "w") as fh:
            for trace in self.traces():
                fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")


@dataclass
class CascadeEngine:
    pool: PredictionPool
    split: SplitIndex
    profiles: list[ExpertProfile]
    difficulty: ClassDifficulty
    table: ComplementarityTable
    probs: np.ndarray
    preds: np.ndarray
    sorted_cumsum: np.ndarray
    top2: np.ndarray
    cal_scores_sorted: np.ndarray
    acc: np.ndarray
    acc_class: np.ndarray
    eff_norm: np.ndarray
    costs: np.ndarray
    tiers: np.ndarray
    labels: np.ndarray
    _uncertainty_cache: dict = field(default_factory=dict)

    @classmethod
    def build(cls, pool: PredictionPool, split: SplitIndex) -> "CascadeEngine":
        n_experts = pool.n_experts
        labels = pool.labels.labels
        probs = np.stack([m.rows for m in pool.matrices], axis=0)
        preds = np.argmax(probs, axis=2).astype(np.int32)
        order = np.argsort(-probs, axis=2, kind="stable")
        sorted_rows = np.take_along_axis(probs, order, axis=2)
        sorted_cumsum = np.cumsum(sorted_rows, axis=2)
        top2 = order[:, :, :2].astype(np.int32)

        cal_ids = split.calibration_ids
        profiles = build_profiles(pool.matrices, labels, pool.costs, cal_ids)
        difficulty = build_class_difficulty(profiles)
        table = build_complementarity(pool.matrices, labels, cal_ids)

        cal_scores = np.empty((n_experts, cal_ids.size), dtype=np.float64)
        for k in range(n_experts):
            cal_scores[k] = conformal.aps_scores(probs[k, cal_ids], labels[cal_ids])
        cal_scores_sorted = np.sort(cal_scores, axis=1)

        acc = np.array([p.accuracy for p in profiles], dtype=np.float64)
        acc_class = np.stack([p.per_class_accuracy for p in profiles], axis=0)
        eff = np.array([p.efficiency for p in profiles], dtype=np.float64)
        eff_norm = eff / eff.max()

        return cls(
            pool=pool,
            split=split,
            profiles=profiles,
            difficulty=difficulty,
            table=table,
            probs=probs,
            preds=preds,
            sorted_cumsum=sorted_cumsum,
            top2=top2,
            cal_scores_sorted=cal_scores_sorted,
            acc=acc,
            acc_class=acc_class,
            eff_norm=eff_norm,
            costs=pool.costs,
            tiers=pool.tiers,
            labels=labels,
        )

    # ------------------------------------------------------------------
    # Conformal calibration artifacts
    # ------------------------------------------------------------------

    def q_hats(self, zeta: float) -> np.ndarray:
        if not 0.0 < zeta < 1.0:
            raise ValidationError(f"zeta must be in (0, 1), got {zeta}")
        out = np.empty(self.pool.n_experts, dtype=np.float64)
        for k in range(self.pool.n_experts):
            out[k] = conformal.quantile_from_sorted(self.cal_scores_sorted[k], zeta)
        return out

    def calibrations(self, zeta: float) -> list[ConformalCalibration]:
        qs = self.q_hats(zeta)
        n_cal = self.split.calibration_ids.size
        return [
            ConformalCalibration(expert_id=k, zeta=zeta, q_hat=float(qs[k]), n_calibration=n_cal)
            for k in range(self.pool.n_experts)
        ]

    def uncertainty(self, measure: Measure) -> np.ndarray:
        """Per (expert, sample) scalar uncertainty, cached per measure."""
        if measure is Measure.APS:
            raise ValidationError("APS routes on prediction sets, not a scalar")
        if measure not in self._uncertainty_cache:
            k_experts, n, _ = self.probs.shape
            u = np.empty((k_experts, n), dtype=np.float64)
            for k in range(k_experts):
                u[k] = conformal.batch_uncertainty(self.probs[k], measure)
            self._uncertainty_cache[measure] = u
        return self._uncertainty_cache[measure]

    # ------------------------------------------------------------------
    # Policy evaluation
    # ------------------------------------------------------------------

    def _weight_tables(self, gamma: float, beta: float, epsilon: float):
        """Policy weight powers via scalar libm pow.

        The per-sample reference computes these as Python-float powers; array
        pow can differ in the last ulp, so the kernels receive precomputed
        tables built the same scalar way.
        """
        k_experts, n_classes = self.acc_class.shape
        wg = np.empty(k_experts, dtype=np.float64)
        lw = np.empty((k_experts, n_classes), dtype=np.float64)
        for k in range(k_experts):
            wg[k] = float(self.acc[k]) ** gamma
            row = self.acc_class[k]
            for c in range(n_classes):
                lw[k, c] = (float(row[c]) + epsilon) ** beta
        return wg, lw

    def scout_ids(self) -> tuple[int, ...]:
        return self.pool.scout_ids()

    def default_policy(self) -> PolicyConfig:
        """Paper-style default thresholds with the highest-efficiency scout."""
        scouts = self.scout_ids()
        if not scouts:
            raise ValidationError("pool has no Scout-tier expert to start the cascade")
        start = max(scouts, key=lambda k: (self.profiles[k].efficiency, -k))
        return PolicyConfig(start_expert=start)

    def validate_policy(self, config: PolicyConfig) -> None:
        if config.start_expert >= self.pool.n_experts:
            raise ValidationError(
                f"start_expert {config.start_expert} out of range "
                f"(pool has {self.pool.n_experts} experts)"
            )
        if self.tiers[config.start_expert] != Tier.SCOUT.rank:
            raise ValidationError(
                f"start_expert {config.start_expert} is not Scout-tier"
            )

    def run(
        self,
        config: PolicyConfig,
        ids: np.ndarray,
        measure: Measure = Measure.APS,
        backend: str | None = None,
        difficulty_override: np.ndarray | None = None,
    ) -> BatchResult:
        """Evaluate one policy over ``ids`` with the batch kernel."""
        self.validate_policy(config)
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        if measure is Measure.APS:
            aps_mode = True
            q = self.q_hats(config.zeta)
            # never read in APS mode; zero-size keeps kernel typing happy
            u = _EMPTY_U.reshape(0, 0)
        else:
            aps_mode = False
            q = np.zeros(self.pool.n_experts, dtype=np.float64)
            u = self.uncertainty(measure)
        difficulty = (
            self.difficulty.difficulty if difficulty_override is None else np.asarray(difficulty_override, dtype=np.float64)
        )
        wg, lw_table = self._weight_tables(float(config.gamma), float(config.beta), float(config.epsilon))
        kernel = get_cascade_batch(backend)
        out = kernel(
            ids,
            self.probs,
            self.preds,
            self.sorted_cumsum,
            self.top2,
            q,
            u,
            aps_mode,
            wg,
            lw_table,
            self.eff_norm,
            difficulty,
            self.table.global_comp,
            self.table.pairwise_comp,
            self.table.pairwise_support,
            self.table.min_pair_support,
            self.costs,
            float(config.w),
            float(config.alpha_singleton),
            float(config.alpha_binary),
            float(config.alpha_difficult),
            float(config.delta),
            float(config.delta_max),
            int(config.min_experts),
            int(config.start_expert),
        )
        consulted, n_consulted, categories, exit_reason, dists, predicted, cost = out
        return BatchResult(
            ids=ids,
            consulted=consulted,
            n_consulted=n_consulted,
            categories=categories,
            exit_reason=exit_reason,
            distributions=dists,
            predicted=predicted,
            cost=cost,
            labels=self.labels[ids],
            tiers=self.tiers,
        )


_EMPTY_U = np.zeros((0, 0), dtype=np.float64)
