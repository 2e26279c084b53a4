"""Budget-constrained policy search.

The objective is the calibration-split accuracy minus a soft penalty of
ten times the mean per-sample GFLOPs excess over the budget.  Search runs
either as plain random sampling or through a small Tree-structured Parzen
Estimator built here: after a uniform startup phase the trial history is
split at the top-quartile objective into good/bad sets, each continuous
dimension gets a truncated Gaussian kernel density per set, discrete
dimensions get add-one-smoothed frequencies, and the suggestion is the
best of 24 candidates drawn from the good density ranked by the
good/bad density ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .conformal import Measure
from .core import ValidationError
from .engine import CascadeEngine
from .router import PolicyConfig

N_STARTUP_TRIALS = 15
GOOD_QUANTILE = 0.25
N_CANDIDATES = 24
BANDWIDTH_EXPONENT = -0.2  # Scott-style n**(-1/5)
PENALTY_COEFFICIENT = 10.0
BUDGET_TOLERANCE = 1.05

CONTINUOUS_BOUNDS: dict[str, tuple[float, float]] = {
    "zeta": (0.01, 0.30),
    "alpha_singleton": (0.5, 0.98),
    "alpha_binary": (0.5, 0.98),
    "alpha_difficult": (0.5, 0.98),
    "w": (0.0, 1.0),
    "gamma": (1.0, 10.0),
    "beta": (0.5, 5.0),
    "delta": (0.0, 0.1),
    "delta_max": (0.0, 0.2),
}
MIN_EXPERTS_CHOICES = (1, 2, 3)
_ALPHA_NAMES = ("alpha_singleton", "alpha_binary", "alpha_difficult")


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter bounds; the start expert ranges over Scout-tier ids."""

    scout_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.scout_ids:
            raise ValidationError("search space needs at least one Scout-tier expert")

    @classmethod
    def from_engine(cls, engine: CascadeEngine) -> "SearchSpace":
        return cls(scout_ids=engine.scout_ids())

    def sample(self, rng: np.random.Generator) -> PolicyConfig:
        values = {
            name: float(rng.uniform(lo, hi))
            for name, (lo, hi) in CONTINUOUS_BOUNDS.items()
        }
        min_experts = int(rng.choice(np.asarray(MIN_EXPERTS_CHOICES)))
        start = int(rng.choice(np.asarray(self.scout_ids)))
        return self.repair(values, min_experts, start)

    def repair(self, values: dict[str, float], min_experts: int, start: int) -> PolicyConfig:
        """Clip to bounds and sort the three thresholds into a valid ordering."""
        fixed = {}
        for name, (lo, hi) in CONTINUOUS_BOUNDS.items():
            fixed[name] = min(max(values[name], lo), hi)
        alphas = sorted((fixed[n] for n in _ALPHA_NAMES), reverse=True)
        fixed["alpha_singleton"], fixed["alpha_binary"], fixed["alpha_difficult"] = alphas
        return PolicyConfig(min_experts=min_experts, start_expert=start, **fixed)


@dataclass(frozen=True)
class Trial:
    trial_id: int
    config: PolicyConfig
    objective: float
    accuracy: float
    mean_gflops: float

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "objective": self.objective,
            "accuracy": self.accuracy,
            "mean_gflops": self.mean_gflops,
            "config": self.config.to_dict(),
        }


@dataclass(frozen=True)
class StudyResult:
    best_trial: Trial
    trials: tuple[Trial, ...]
    budget: float
    seed: int
    sampler: str
    measure: Measure

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "seed": self.seed,
            "sampler": self.sampler,
            "measure": self.measure.value,
            "n_trials": len(self.trials),
            "best": self.best_trial.to_dict(),
            "trials": [t.to_dict() for t in self.trials],
        }


def objective(
    engine: CascadeEngine,
    config: PolicyConfig,
    budget: float,
    trial_id: int = 0,
    measure: Measure = Measure.APS,
    backend: str | None = None,
    fixed_exit: bool = False,
) -> Trial:
    """Evaluate one policy over the calibration split.

    ``fixed_exit`` evaluates the policy with the adaptive exit machinery
    disabled (no consensus boost, neutral class difficulty); the exit
    ablation optimizes that variant under its own rules.
    """
    config, difficulty = _exit_variant(engine, config, fixed_exit)
    result = engine.run(
        config,
        engine.split.calibration_ids,
        measure=measure,
        backend=backend,
        difficulty_override=difficulty,
    )
    accuracy = result.accuracy
    mean_gflops = result.mean_cost
    value = accuracy - PENALTY_COEFFICIENT * max(0.0, mean_gflops - budget)
    return Trial(
        trial_id=trial_id,
        config=config,
        objective=value,
        accuracy=accuracy,
        mean_gflops=mean_gflops,
    )


def _exit_variant(engine: CascadeEngine, config: PolicyConfig, fixed_exit: bool):
    if not fixed_exit:
        return config, None
    neutral = np.full(engine.pool.n_classes, 0.5)
    return config.with_fixed_exit(), neutral


# ---------------------------------------------------------------------------
# Tree-structured Parzen estimator
# ---------------------------------------------------------------------------


class _TruncatedParzen:
    """Mixture of Gaussians at the observations, truncated to the bounds.

    One uniform component over the full range rides along with weight
    1/(m+1), the continuous analog of the add-one smoothing used for the
    discrete dimensions; without it the good-density collapses onto the
    first decent cluster and stops exploring.
    """

    def __init__(self, observations: np.ndarray, lo: float, hi: float):
        self.centers = np.asarray(observations, dtype=np.float64)
        self.lo = lo
        self.hi = hi
        self.width = hi - lo
        m = max(self.centers.size, 1)
        self.n_components = self.centers.size + 1
        self.sigma = max(self.width * m**BANDWIDTH_EXPONENT, 1e-12)
        a = (lo - self.centers) / self.sigma
        b = (hi - self.centers) / self.sigma
        self.cdf_lo = ndtr(a)
        self.mass = np.maximum(ndtr(b) - self.cdf_lo, 1e-300)

    def sample(self, rng: np.random.Generator) -> float:
        idx = int(rng.integers(0, self.n_components))
        if idx == self.centers.size:
            return float(rng.uniform(self.lo, self.hi))
        u = rng.uniform(self.cdf_lo[idx], self.cdf_lo[idx] + self.mass[idx])
        u = min(max(u, 1e-12), 1.0 - 1e-12)
        x = self.centers[idx] + self.sigma * float(ndtri(u))
        return min(max(x, self.lo), self.hi)

    def log_pdf(self, x: float) -> float:
        z = (x - self.centers) / self.sigma
        comp = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * self.sigma)
        total = float(np.sum(comp / self.mass)) + 1.0 / self.width
        return math.log(max(total / self.n_components, 1e-300))


class _SmoothedCategorical:
    """Empirical frequencies with add-one smoothing."""

    def __init__(self, observations, choices):
        self.choices = list(choices)
        counts = np.array(
            [sum(1 for o in observations if o == c) for c in self.choices],
            dtype=np.float64,
        )
        self.probs = (counts + 1.0) / (counts.sum() + len(self.choices))

    def sample(self, rng: np.random.Generator):
        idx = int(rng.choice(len(self.choices), p=self.probs))
        return self.choices[idx]

    def log_pdf(self, value) -> float:
        idx = self.choices.index(value)
        return math.log(self.probs[idx])


def _split_history(history: list[Trial]) -> tuple[list[Trial], list[Trial]]:
    ordered = sorted(history, key=lambda t: (-t.objective, t.trial_id))
    n_good = max(1, math.ceil(GOOD_QUANTILE * len(ordered)))
    return ordered[:n_good], ordered[n_good:]


def tpe_suggest(
    history: list[Trial], space: SearchSpace, rng: np.random.Generator
) -> PolicyConfig:
    """Propose the candidate maximizing the good/bad density ratio.

    The first ``N_STARTUP_TRIALS`` suggestions (and any call with an empty
    bad set) fall back to uniform sampling.
    """
    if len(history) < N_STARTUP_TRIALS:
        return space.sample(rng)
    good, bad = _split_history(history)
    if not bad:
        return space.sample(rng)

    cont_models = {}
    for name, (lo, hi) in CONTINUOUS_BOUNDS.items():
        good_obs = np.array([getattr(t.config, name) for t in good])
        bad_obs = np.array([getattr(t.config, name) for t in bad])
        cont_models[name] = (
            _TruncatedParzen(good_obs, lo, hi),
            _TruncatedParzen(bad_obs, lo, hi),
        )
    disc_models = {
        "min_experts": (
            _SmoothedCategorical([t.config.min_experts for t in good], MIN_EXPERTS_CHOICES),
            _SmoothedCategorical([t.config.min_experts for t in bad], MIN_EXPERTS_CHOICES),
        ),
        "start_expert": (
            _SmoothedCategorical([t.config.start_expert for t in good], space.scout_ids),
            _SmoothedCategorical([t.config.start_expert for t in bad], space.scout_ids),
        ),
    }

    # each dimension is optimized independently: draw candidates from its
    # good density and keep the draw with the best good/bad ratio
    values = {}
    for name, (good_m, bad_m) in cont_models.items():
        best_x, best_score = None, -math.inf
        for _ in range(N_CANDIDATES):
            x = good_m.sample(rng)
            score = good_m.log_pdf(x) - bad_m.log_pdf(x)
            if score > best_score:
                best_x, best_score = x, score
        values[name] = best_x
    picks = {}
    for name, (good_m, bad_m) in disc_models.items():
        best_v, best_score = None, -math.inf
        for _ in range(N_CANDIDATES):
            v = good_m.sample(rng)
            score = good_m.log_pdf(v) - bad_m.log_pdf(v)
            if score > best_score:
                best_v, best_score = v, score
        picks[name] = best_v
    return space.repair(values, picks["min_experts"], picks["start_expert"])


def _better(a: Trial, b: Trial) -> bool:
    """True when a beats b: higher objective, then lower cost, then lower id."""
    return (-a.objective, a.mean_gflops, a.trial_id) < (-b.objective, b.mean_gflops, b.trial_id)


def optimize(
    engine: CascadeEngine,
    budget: float,
    n_trials: int,
    seed: int,
    sampler: str = "tpe",
    measure: Measure = Measure.APS,
    backend: str | None = None,
    fixed_exit: bool = False,
) -> StudyResult:
    """Sequential study; fully deterministic for a fixed seed.

    Suggestions are serialized (trial t sees the full history of trials
    0..t-1), which keeps replays reproducible.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    if sampler not in ("tpe", "random"):
        raise ValidationError(f"sampler must be 'tpe' or 'random', got {sampler!r}")
    space = SearchSpace.from_engine(engine)
    rng = np.random.default_rng(seed)
    history: list[Trial] = []
    best: Trial | None = None
    for t in range(n_trials):
        if sampler == "random":
            config = space.sample(rng)
        else:
            config = tpe_suggest(history, space, rng)
        trial = objective(
            engine, config, budget, trial_id=t, measure=measure,
            backend=backend, fixed_exit=fixed_exit,
        )
        history.append(trial)
        if best is None or _better(trial, best):
            best = trial
    return StudyResult(
        best_trial=best,
        trials=tuple(history),
        budget=budget,
        seed=seed,
        sampler=sampler,
        measure=measure,
    )


def verify_on_test(
    engine: CascadeEngine,
    config: PolicyConfig,
    budget: float,
    measure: Measure = Measure.APS,
    backend: str | None = None,
    fixed_exit: bool = False,
) -> dict:
    """Report test-split accuracy and cost; flag budget violations beyond 5%."""
    config, difficulty = _exit_variant(engine, config, fixed_exit)
    result = engine.run(
        config, engine.split.test_ids, measure=measure, backend=backend,
        difficulty_override=difficulty,
    )
    mean_gflops = result.mean_cost
    return {
        "accuracy": result.accuracy,
        "mean_gflops": mean_gflops,
        "budget": budget,
        "budget_violation": bool(mean_gflops > BUDGET_TOLERANCE * budget),
        "tier_usage": result.tier_usage(),
        "tier_reach": result.tier_reach(),
        "per_sample_costs": result.cost_summary(),
        "n_samples": result.n_samples,
    }
