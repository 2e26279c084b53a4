"""Seeded synthetic expert pools for desk-scale verification.

Labels are uniform over the classes.  Each expert's row is a
temperature-scaled softmax of standard-normal logits with a +3 offset on
the expert's chosen class, so the argmax matches the truth exactly with
the expert's (class-dependent) accuracy.  "Easy" samples get a 10x lower
temperature from every expert, i.e. near one-hot outputs.  Error targets
are uniform over the other classes unless a confusion directive routes
all errors on one true class toward a specific wrong class.

Generated pools round-trip through the standard on-disk formats and load
through the manifest validator unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    LabelVector,
    Manifest,
    ExpertManifestEntry,
    PredictionMatrix,
    PredictionPool,
    Tier,
    TIERS_BY_RANK,
    ValidationError,
    load_manifest,
    write_labels,
    write_prediction_file,
)

EASY_TEMPERATURE_SCALE = 0.1
DEFAULT_SHARPNESS = 3.0


@dataclass(frozen=True)
class SyntheticExpertSpec:
    name: str
    tier: Tier
    cost_gflops: float
    base_accuracy: float
    strong_classes: tuple[int, ...] = ()
    strong_accuracy: float | None = None
    params_millions: float = 1.0
    confusion: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SyntheticPoolSpec:
    n_classes: int
    n_samples: int
    easy_fraction: float
    noise_temperature: float
    seed: int
    experts: tuple[SyntheticExpertSpec, ...]
    dataset_name: str = "synthetic"
    # logit offset of the chosen class; larger means more confident experts
    sharpness: float = DEFAULT_SHARPNESS
    # fraction of recorded labels resampled away from the class the experts
    # actually see: irreducible error shared by every method
    label_noise: float = 0.0

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.n_samples < 1:
            raise ValidationError("need at least 1 sample")
        if not 0.0 <= self.easy_fraction <= 1.0:
            raise ValidationError("easy_fraction must be in [0, 1]")
        if self.noise_temperature <= 0.0:
            raise ValidationError("noise_temperature must be positive")
        if not 0.0 <= self.label_noise <= 0.5:
            raise ValidationError("label_noise must be in [0, 0.5]")
        if not self.experts:
            raise ValidationError("need at least 1 expert")
        chance = 1.0 / self.n_classes
        for e in self.experts:
            for acc in (e.base_accuracy, e.strong_accuracy):
                if acc is not None and not chance < acc < 1.0:
                    raise ValidationError(
                        f"expert '{e.name}': accuracy {acc} must be in (1/C, 1)"
                    )
            for c in e.strong_classes:
                if not 0 <= c < self.n_classes:
                    raise ValidationError(f"expert '{e.name}': strong class {c} out of range")
            for c1, c2 in e.confusion.items():
                if not (0 <= c1 < self.n_classes and 0 <= c2 < self.n_classes) or c1 == c2:
                    raise ValidationError(f"expert '{e.name}': bad confusion pair {c1}->{c2}")
        # costs must increase strictly from tier to tier
        by_tier = {t: [e.cost_gflops for e in self.experts if e.tier is t] for t in TIERS_BY_RANK}
        prev_max = 0.0
        for t in TIERS_BY_RANK:
            if not by_tier[t]:
                continue
            if min(by_tier[t]) <= prev_max:
                raise ValidationError(
                    f"tier {t.value} costs must exceed every lower tier's costs"
                )
            prev_max = max(by_tier[t])


def _expert_rows(
    spec: SyntheticPoolSpec,
    expert: SyntheticExpertSpec,
    labels: np.ndarray,
    easy: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    n, c = spec.n_samples, spec.n_classes
    p_correct = np.full(n, expert.base_accuracy)
    if expert.strong_classes:
        strong_acc = expert.strong_accuracy
        if strong_acc is None:
            raise ValidationError(f"expert '{expert.name}': strong classes need strong_accuracy")
        p_correct[np.isin(labels, np.asarray(expert.strong_classes))] = strong_acc
    correct = rng.random(n) < p_correct
    chosen = labels.copy()
    wrong = ~correct
    offsets = rng.integers(1, c, size=n)
    chosen[wrong] = (labels[wrong] + offsets[wrong]) % c
    for c1, c2 in expert.confusion.items():
        chosen[wrong & (labels == c1)] = c2

    z = rng.normal(0.0, 1.0, size=(n, c))
    z[np.arange(n), chosen] += spec.sharpness
    tau = spec.noise_temperature * np.where(easy, EASY_TEMPERATURE_SCALE, 1.0)
    logits = z / tau[:, None]
    logits -= logits.max(axis=1, keepdims=True)
    rows = np.exp(logits)
    rows /= rows.sum(axis=1, keepdims=True)

    # noise may outrank the chosen class; swap to enforce the drawn outcome
    am = np.argmax(rows, axis=1)
    flip = np.flatnonzero(am != chosen)
    if flip.size:
        tmp = rows[flip, am[flip]].copy()
        rows[flip, am[flip]] = rows[flip, chosen[flip]]
        rows[flip, chosen[flip]] = tmp
    return rows


def generate_pool(spec: SyntheticPoolSpec) -> PredictionPool:
    """Materialize the pool in memory (same results as the file round trip)."""
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_experts + 1)
    base_rng = np.random.default_rng(seeds[0])
    labels = base_rng.integers(0, spec.n_classes, size=spec.n_samples)
    easy = base_rng.random(spec.n_samples) < spec.easy_fraction
    observed = labels
    if spec.label_noise > 0.0:
        noisy = base_rng.random(spec.n_samples) < spec.label_noise
        offsets = base_rng.integers(1, spec.n_classes, size=spec.n_samples)
        observed = labels.copy()
        observed[noisy] = (labels[noisy] + offsets[noisy]) % spec.n_classes

    matrices = []
    for k, expert in enumerate(spec.experts):
        rng = np.random.default_rng(seeds[k + 1])
        rows = _expert_rows(spec, expert, labels, easy, rng)
        matrices.append(PredictionMatrix.from_probabilities(rows, name=expert.name))

    entries = tuple(
        ExpertManifestEntry(
            name=e.name,
            tier=e.tier,
            params_millions=e.params_millions,
            cost_gflops=e.cost_gflops,
            predictions_path=Path(f"{e.name}.pred"),
        )
        for e in spec.experts
    )
    manifest = Manifest(
        dataset=spec.dataset_name, labels_path=Path("labels.txt"), experts=entries
    )
    return PredictionPool(
        manifest=manifest,
        matrices=tuple(matrices),
        labels=LabelVector.from_array(observed, n_classes=spec.n_classes),
    )


def write_pool(spec: SyntheticPoolSpec, out_dir: Path | str) -> Path:
    """Write manifest, labels, and prediction binaries; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = generate_pool(spec)
    write_labels(out_dir / "labels.txt", pool.labels.labels)
    doc = {"dataset": spec.dataset_name, "labels": "labels.txt", "experts": []}
    for entry, matrix in zip(pool.manifest.experts, pool.matrices):
        filename = f"{entry.name}.pred"
        write_prediction_file(out_dir / filename, matrix.raw)
        doc["experts"].append(
            {
                "name": entry.name,
                "tier": entry.tier.value,
                "params_millions": entry.params_millions,
                "gflops": entry.cost_gflops,
                "predictions": filename,
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# Preset pools used by the evaluation harness and the verification suite
# ---------------------------------------------------------------------------


def _ladder(
    n_experts: int,
    accuracies: tuple[float, ...],
    costs: tuple[float, ...],
    n_classes: int,
    strong_boost: float = 0.05,
) -> tuple[SyntheticExpertSpec, ...]:
    n_scouts = max(1, round(n_experts / 3))
    n_oracles = max(1, round(n_experts / 3))
    experts = []
    for k in range(n_experts):
        if k < n_scouts:
            tier = Tier.SCOUT
        elif k >= n_experts - n_oracles:
            tier = Tier.ORACLE
        else:
            tier = Tier.SPECIALIST
        acc = accuracies[k]
        strong = ((2 * k) % n_classes, (2 * k + 1) % n_classes)
        experts.append(
            SyntheticExpertSpec(
                name=f"expert-{k:02d}",
                tier=tier,
                cost_gflops=costs[k],
                base_accuracy=acc,
                strong_classes=strong,
                strong_accuracy=min(acc + strong_boost, 0.99),
                params_millions=round(1.0 + 10.0 * costs[k], 2),
            )
        )
    return tuple(experts)


def standard_pool_spec(
    n_experts: int = 6,
    n_classes: int = 10,
    n_samples: int = 20000,
    easy_fraction: float = 0.5,
    seed: int = 1,
) -> SyntheticPoolSpec:
    """The default mixed-difficulty benchmark pool.

    The cost ladder tops out at 160x the cheapest scout so that walking the
    whole pool on a residual of hopeless samples does not dwarf mid-range
    budgets.
    """
    accuracies = tuple(
        0.84 + (0.965 - 0.84) * k / max(n_experts - 1, 1) for k in range(n_experts)
    )
    costs = tuple(
        0.01 * (160.0 ** (k / max(n_experts - 1, 1))) for k in range(n_experts)
    )
    return SyntheticPoolSpec(
        n_classes=n_classes,
        n_samples=n_samples,
        easy_fraction=easy_fraction,
        noise_temperature=1.0,
        seed=seed,
        experts=_ladder(n_experts, accuracies, costs, n_classes),
        dataset_name="synthetic-standard",
        sharpness=3.5,
    )


def easy_pool_spec(
    n_classes: int = 10, n_samples: int = 20000, seed: int = 1
) -> SyntheticPoolSpec:
    """Easy-dominated pool: 80% near one-hot samples, high-accuracy ladder,
    deliberately top-heavy costs (the cheap tier suffices for most samples).

    Every expert missteps toward its own signature wrong class, so distinct
    experts never agree on an error; cross-expert agreement certifies
    correctness, the property the consensus-driven exits rely on.
    """
    accuracies = (0.86, 0.885, 0.905, 0.92, 0.935, 0.95)
    costs = (0.01, 0.05, 0.5, 0.9, 2.8, 4.5)
    experts = tuple(
        SyntheticExpertSpec(
            name=e.name,
            tier=e.tier,
            cost_gflops=e.cost_gflops,
            base_accuracy=e.base_accuracy,
            strong_classes=e.strong_classes,
            strong_accuracy=e.strong_accuracy,
            params_millions=e.params_millions,
            confusion={c: (c + 1 + k) % n_classes for c in range(n_classes)},
        )
        for k, e in enumerate(_ladder(6, accuracies, costs, n_classes))
    )
    return SyntheticPoolSpec(
        n_classes=n_classes,
        n_samples=n_samples,
        easy_fraction=0.8,
        noise_temperature=1.0,
        seed=seed,
        experts=experts,
        dataset_name="synthetic-easy",
        sharpness=3.5,
        label_noise=0.02,
    )


def complementary_pool_spec(
    n_classes: int = 10, n_samples: int = 20000, seed: int = 1
) -> SyntheticPoolSpec:
    """One weak scout plus two specialists strong on complementary halves.

    Each specialist scores 0.95 on its half and 0.65 elsewhere, i.e. 0.80
    overall, so any clear win above 0.80 must come from combining them.
    """
    half = n_classes // 2
    low = tuple(range(half))
    high = tuple(range(half, n_classes))
    experts = (
        SyntheticExpertSpec(
            name="scout-0",
            tier=Tier.SCOUT,
            cost_gflops=0.02,
            base_accuracy=0.70,
            params_millions=1.2,
        ),
        SyntheticExpertSpec(
            name="specialist-low",
            tier=Tier.SPECIALIST,
            cost_gflops=1.0,
            base_accuracy=0.65,
            strong_classes=low,
            strong_accuracy=0.95,
            params_millions=11.0,
        ),
        SyntheticExpertSpec(
            name="specialist-high",
            tier=Tier.SPECIALIST,
            cost_gflops=1.05,
            base_accuracy=0.65,
            strong_classes=high,
            strong_accuracy=0.95,
            params_millions=11.5,
        ),
    )
    return SyntheticPoolSpec(
        n_classes=n_classes,
        n_samples=n_samples,
        easy_fraction=0.3,
        noise_temperature=1.0,
        seed=seed,
        experts=experts,
        dataset_name="synthetic-complementary",
    )


def heterogeneous_pool_spec(
    n_classes: int = 10, n_samples: int = 12000, seed: int = 1
) -> SyntheticPoolSpec:
    """Five experts, each sharp on a disjoint class pair and weak elsewhere."""
    costs = (0.05, 0.3, 0.6, 1.4, 2.4)
    tiers = (Tier.SCOUT, Tier.SPECIALIST, Tier.SPECIALIST, Tier.ORACLE, Tier.ORACLE)
    experts = tuple(
        SyntheticExpertSpec(
            name=f"sharp-{k}",
            tier=tiers[k],
            cost_gflops=costs[k],
            base_accuracy=0.55,
            strong_classes=(2 * k, 2 * k + 1),
            strong_accuracy=0.97,
            params_millions=round(1.0 + 8.0 * costs[k], 2),
        )
        for k in range(5)
    )
    return SyntheticPoolSpec(
        n_classes=n_classes,
        n_samples=n_samples,
        easy_fraction=0.4,
        noise_temperature=1.0,
        seed=seed,
        experts=experts,
        dataset_name="synthetic-heterogeneous",
    )


PRESETS = {
    "standard": standard_pool_spec,
    "easy": easy_pool_spec,
    "complementary": complementary_pool_spec,
    "heterogeneous": heterogeneous_pool_spec,
}
