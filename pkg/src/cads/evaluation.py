"""Baselines, reports, budget sweeps, and the ablation harness.

All baselines consume the same packed engine as the cascade, so cost
accounting and accuracy are measured identically everywhere.  Experts are
consumed in ascending-cost order (ties by id) wherever an order matters;
the uniform full ensemble shares its accumulation with the cumulative
cascade, which makes the prefix identities exact.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import Measure
from .core import TIERS_BY_RANK, ValidationError
from .engine import BatchResult, CascadeEngine
from .optimizer import StudyResult, optimize, verify_on_test
from .router import GLOBAL_MIX, LOCAL_MIX, LOCAL_WEIGHT_EPSILON, PolicyConfig

DEFAULT_CONFIDENCE_THRESHOLD = 0.9
# ensemble exponents used when a report needs hybrid weighting without a
# tuned policy (harness defaults, not fitted values)
DEFAULT_GAMMA = 2.0
DEFAULT_BETA = 2.0

CSV_HEADER = (
    "budget",
    "method",
    "accuracy",
    "mean_gflops",
    "scout_share",
    "specialist_share",
    "oracle_share",
)


@dataclass(frozen=True)
class EvaluationReport:
    method: str
    accuracy: float
    mean_gflops: float
    tier_usage: dict
    tier_reach: dict
    per_sample_costs: dict
    n_samples: int
    budget: float | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "accuracy": self.accuracy,
            "mean_gflops": self.mean_gflops,
            "tier_usage": self.tier_usage,
            "tier_reach": self.tier_reach,
            "per_sample_costs": self.per_sample_costs,
            "n_samples": self.n_samples,
            "budget": self.budget,
            "params": self.params,
        }

    def csv_row(self) -> list:
        return [
            "" if self.budget is None else self.budget,
            self.method,
            self.accuracy,
            self.mean_gflops,
            self.tier_usage.get("Scout", 0.0),
            self.tier_usage.get("Specialist", 0.0),
            self.tier_usage.get("Oracle", 0.0),
        ]


def _cost_order(engine: CascadeEngine) -> np.ndarray:
    return np.lexsort((np.arange(engine.pool.n_experts), engine.costs))


def _static_report(
    engine: CascadeEngine,
    method: str,
    predicted: np.ndarray,
    ids: np.ndarray,
    consulted_experts: np.ndarray,
    per_sample_cost: float,
    budget: float | None = None,
    params: dict | None = None,
) -> EvaluationReport:
    """Report for methods that consult the same expert set for every sample."""
    labels = engine.labels[ids]
    counts = np.bincount(engine.tiers[consulted_experts], minlength=3).astype(np.float64)
    total = counts.sum()
    usage = {t.value: float(counts[t.rank] / total) for t in TIERS_BY_RANK}
    reach = {
        t.value: 1.0 if counts[t.rank] > 0 else 0.0 for t in TIERS_BY_RANK
    }
    return EvaluationReport(
        method=method,
        accuracy=float(np.mean(predicted == labels)),
        mean_gflops=per_sample_cost,
        tier_usage=usage,
        tier_reach=reach,
        per_sample_costs={
            "min": per_sample_cost,
            "median": per_sample_cost,
            "mean": per_sample_cost,
            "max": per_sample_cost,
        },
        n_samples=int(ids.shape[0]),
        budget=budget,
        params=params or {},
    )


def report_from_batch(
    result: BatchResult, method: str, budget: float | None = None, params: dict | None = None
) -> EvaluationReport:
    return EvaluationReport(
        method=method,
        accuracy=result.accuracy,
        mean_gflops=result.mean_cost,
        tier_usage=result.tier_usage(),
        tier_reach=result.tier_reach(),
        per_sample_costs=result.cost_summary(),
        n_samples=result.n_samples,
        budget=budget,
        params=params or {},
    )


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def run_solo(engine: CascadeEngine, expert_id: int, ids: np.ndarray) -> EvaluationReport:
    predicted = engine.preds[expert_id, ids]
    name = engine.pool.names[expert_id]
    return _static_report(
        engine,
        method="solo",
        predicted=predicted,
        ids=ids,
        consulted_experts=np.array([expert_id]),
        per_sample_cost=float(engine.costs[expert_id]),
        params={"expert": expert_id, "name": name},
    )


def run_confidence_cascade(
    engine: CascadeEngine,
    threshold: float,
    ids: np.ndarray,
) -> EvaluationReport:
    """Ascending-cost cascade that exits on raw top-softmax confidence."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    order = _cost_order(engine)
    n = ids.shape[0]
    predicted = np.full(n, -1, dtype=np.int64)
    cost = np.zeros(n, dtype=np.float64)
    calls = np.zeros(engine.pool.n_experts, dtype=np.int64)
    active = np.arange(n)
    for pos, k in enumerate(order):
        i = ids[active]
        cost[active] += engine.costs[k]
        calls[k] += active.size
        conf = engine.probs[k, i, :].max(axis=1)
        votes = engine.preds[k, i]
        if pos == len(order) - 1:
            predicted[active] = votes
            break
        exiting = conf >= threshold
        predicted[active[exiting]] = votes[exiting]
        active = active[~exiting]
        if active.size == 0:
            break
    labels = engine.labels[ids]
    total_calls = calls.sum()
    tier_counts = np.zeros(3, dtype=np.float64)
    for k in range(engine.pool.n_experts):
        tier_counts[engine.tiers[k]] += calls[k]
    usage = {t.value: float(tier_counts[t.rank] / total_calls) for t in TIERS_BY_RANK}
    reach_counts = {t.value: 0.0 for t in TIERS_BY_RANK}
    # consult order is fixed, so the call count of a tier's first expert is
    # exactly the number of samples reaching that tier
    for t in TIERS_BY_RANK:
        members = [k for k in order if engine.tiers[k] == t.rank]
        if members:
            reach_counts[t.value] = float(calls[members[0]] / n)
    return EvaluationReport(
        method="confidence_cascade",
        accuracy=float(np.mean(predicted == labels)),
        mean_gflops=float(cost.mean()),
        tier_usage=usage,
        tier_reach=reach_counts,
        per_sample_costs={
            "min": float(cost.min()),
            "median": float(np.median(cost)),
            "mean": float(cost.mean()),
            "max": float(cost.max()),
        },
        n_samples=n,
        params={"threshold": threshold},
    )


def _uniform_prefix_predictions(engine: CascadeEngine, ids: np.ndarray):
    """Yield (prefix experts, running cost, predictions) per ascending-cost prefix."""
    order = _cost_order(engine)
    acc_sum = np.zeros((ids.shape[0], engine.pool.n_classes), dtype=np.float64)
    cost = 0.0
    for j, k in enumerate(order):
        acc_sum += engine.probs[k, ids, :]
        cost += float(engine.costs[k])
        yield order[: j + 1], cost, np.argmax(acc_sum, axis=1)


def run_cumulative_cascade(engine: CascadeEngine, ids: np.ndarray) -> list[EvaluationReport]:
    """Static consult-all-prefix curve with unweighted averaging."""
    reports = []
    for prefix, cost, predicted in _uniform_prefix_predictions(engine, ids):
        reports.append(
            _static_report(
                engine,
                method="cumulative_cascade",
                predicted=predicted,
                ids=ids,
                consulted_experts=prefix,
                per_sample_cost=cost,
                params={"prefix_size": int(prefix.size)},
            )
        )
    return reports


def hybrid_ensemble_predictions(
    engine: CascadeEngine,
    ids: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
    beta: float = DEFAULT_BETA,
) -> np.ndarray:
    """Hybrid-weighted distributions over the full pool, ascending-cost order."""
    order = _cost_order(engine)
    wg = engine.acc**gamma
    n = ids.shape[0]
    vote = np.zeros((n, engine.pool.n_classes), dtype=np.float64)
    for k in order:
        vote += wg[k] * engine.probs[k, ids, :]
    c_star = np.argmax(vote, axis=1)
    local = []
    local_sum = np.zeros(n, dtype=np.float64)
    for k in order:
        lw = (engine.acc_class[k, c_star] + LOCAL_WEIGHT_EPSILON) ** beta
        local.append(lw)
        local_sum = local_sum + lw
    num = np.zeros((n, engine.pool.n_classes), dtype=np.float64)
    den = np.zeros(n, dtype=np.float64)
    for j, k in enumerate(order):
        wk = GLOBAL_MIX * wg[k] + LOCAL_MIX * (local[j] / local_sum)
        den = den + wk
        num = num + wk[:, None] * engine.probs[k, ids, :]
    return num / den[:, None]


def run_full_ensemble(
    engine: CascadeEngine,
    ids: np.ndarray,
    weighting: str = "hybrid",
    gamma: float = DEFAULT_GAMMA,
    beta: float = DEFAULT_BETA,
) -> EvaluationReport:
    if weighting not in ("uniform", "hybrid"):
        raise ValidationError(f"weighting must be 'uniform' or 'hybrid', got {weighting!r}")
    if weighting == "uniform":
        *_, last = _uniform_prefix_predictions(engine, ids)
        _, cost, predicted = last
    else:
        dists = hybrid_ensemble_predictions(engine, ids, gamma=gamma, beta=beta)
        predicted = np.argmax(dists, axis=1)
        cost = float(sum(float(c) for c in engine.costs[_cost_order(engine)]))
    return _static_report(
        engine,
        method="full_ensemble",
        predicted=predicted,
        ids=ids,
        consulted_experts=np.arange(engine.pool.n_experts),
        per_sample_cost=cost,
        params={"weighting": weighting, "gamma": gamma, "beta": beta}
        if weighting == "hybrid"
        else {"weighting": weighting},
    )


def run_cads(
    engine: CascadeEngine,
    config: PolicyConfig,
    ids: np.ndarray,
    budget: float | None = None,
    measure: Measure = Measure.APS,
    backend: str | None = None,
    difficulty_override: np.ndarray | None = None,
) -> EvaluationReport:
    result = engine.run(
        config, ids, measure=measure, backend=backend, difficulty_override=difficulty_override
    )
    return report_from_batch(
        result,
        method="cads",
        budget=budget,
        params={"measure": measure.value, "config": config.to_dict()},
    )


# ---------------------------------------------------------------------------
# Budget sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    budget: float
    study: StudyResult
    verification: dict
    infeasible: bool

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "infeasible": self.infeasible,
            "verification": self.verification,
            "best_trial": self.study.best_trial.to_dict(),
            "sampler": self.study.sampler,
            "seed": self.study.seed,
        }


def sweep_budgets(
    engine: CascadeEngine,
    budgets: list[float],
    n_trials: int,
    seed: int,
    sampler: str = "tpe",
    threads: int = 1,
    measure: Measure = Measure.APS,
) -> list[SweepPoint]:
    """Optimize and verify per budget; budgets get independent derived seeds."""
    if sorted(budgets) != list(budgets):
        raise ValidationError("budgets must be sorted ascending")
    scout_costs = [float(engine.costs[k]) for k in engine.scout_ids()]
    floor = min(scout_costs) if scout_costs else 0.0

    def one(idx_budget):
        idx, budget = idx_budget
        study = optimize(
            engine, budget, n_trials, seed=seed + idx, sampler=sampler, measure=measure
        )
        verification = verify_on_test(engine, study.best_trial.config, budget, measure=measure)
        return SweepPoint(
            budget=budget,
            study=study,
            verification=verification,
            infeasible=budget < floor,
        )

    jobs = list(enumerate(budgets))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(one, jobs))
    else:
        points = [one(j) for j in jobs]
    return points


def sweep_csv_rows(
    engine: CascadeEngine, points: list[SweepPoint], ids: np.ndarray
) -> list[list]:
    """Plot-ready rows: the tuned cascade per budget plus static baselines."""
    rows = [list(CSV_HEADER)]
    for p in points:
        usage = p.verification["tier_usage"]
        rows.append(
            [
                p.budget,
                "cads",
                p.verification["accuracy"],
                p.verification["mean_gflops"],
                usage.get("Scout", 0.0),
                usage.get("Specialist", 0.0),
                usage.get("Oracle", 0.0),
            ]
        )
    for k in range(engine.pool.n_experts):
        rows.append(run_solo(engine, k, ids).csv_row())
    for report in run_cumulative_cascade(engine, ids):
        labeled = replace(
            report, method=f"cumulative_cascade[{report.params['prefix_size']}]"
        )
        rows.append(labeled.csv_row())
    rows.append(run_full_ensemble(engine, ids, weighting="uniform").csv_row())
    rows.append(run_full_ensemble(engine, ids, weighting="hybrid").csv_row())
    rows.append(
        run_confidence_cascade(engine, DEFAULT_CONFIDENCE_THRESHOLD, ids).csv_row()
    )
    return rows


def write_csv(path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


def ablate_measure(
    engine: CascadeEngine, budget: float, n_trials: int, seed: int
) -> dict[str, dict]:
    """Re-run the full optimize+verify pipeline per uncertainty source."""
    out = {}
    for measure in (Measure.APS, Measure.MAX_SOFTMAX, Measure.ENTROPY, Measure.MARGIN):
        study = optimize(engine, budget, n_trials, seed=seed, measure=measure)
        verification = verify_on_test(engine, study.best_trial.config, budget, measure=measure)
        out[measure.value] = {
            "best_trial": study.best_trial.to_dict(),
            "verification": verification,
        }
    return out


def ablate_weighting(engine: CascadeEngine, ids: np.ndarray) -> dict[str, dict]:
    return {
        "uniform": run_full_ensemble(engine, ids, weighting="uniform").to_dict(),
        "hybrid": run_full_ensemble(engine, ids, weighting="hybrid").to_dict(),
    }


def ablate_exit(
    engine: CascadeEngine,
    budget: float,
    n_trials: int,
    seed: int,
    config: PolicyConfig | None = None,
) -> dict[str, dict]:
    """Adaptive exit versus a fixed threshold at the same policy.

    The fixed variant zeroes the consensus boost and neutralizes the class
    difficulty shift, everything else unchanged.  When no policy is given,
    the comparison point is the best adaptive policy found at the budget.
    """
    out = {}
    if config is None:
        study = optimize(engine, budget, n_trials, seed=seed)
        config = study.best_trial.config
        out["best_trial"] = study.best_trial.to_dict()
    ids = engine.split.test_ids
    adaptive = run_cads(engine, config, ids, budget=budget)
    neutral = np.full(engine.pool.n_classes, 0.5)
    fixed = run_cads(
        engine,
        config.with_fixed_exit(),
        ids,
        budget=budget,
        difficulty_override=neutral,
    )
    out["config"] = config.to_dict()
    out["adaptive"] = adaptive.to_dict()
    out["fixed"] = fixed.to_dict()
    return out
