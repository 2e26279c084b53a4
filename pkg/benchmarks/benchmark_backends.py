"""Benchmark the numba kernel against the pure-numpy fallback.

Builds a synthetic pool, runs identical policy evaluations through both
backends, checks they agree bit for bit, and reports per-evaluation
latency plus a short policy-search timing.

    python3 benchmarks/benchmark_backends.py --samples 20000 --evals 30
"""

import argparse
import time

import numpy as np

from cads import CascadeEngine, split_dataset
from cads.backend import available_backends
from cads.optimizer import SearchSpace, optimize
from cads.synth import generate_pool, standard_pool_spec


def time_evals(engine, configs, ids, backend):
    start = time.perf_counter()
    results = [engine.run(c, ids, backend=backend) for c in configs]
    elapsed = time.perf_counter() - start
    return elapsed / len(configs), results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=20000)
    parser.add_argument("--experts", type=int, default=6)
    parser.add_argument("--evals", type=int, default=30, help="policy evaluations to time")
    parser.add_argument("--trials", type=int, default=100, help="search trials to time")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")

    pool = generate_pool(standard_pool_spec(n_experts=args.experts, n_samples=args.samples, seed=args.seed))
    split = split_dataset(pool.n_samples, args.seed)
    engine = CascadeEngine.build(pool, split)
    ids = split.calibration_ids
    print(f"pool: {pool.n_experts} experts, {ids.size} calibration samples, {pool.n_classes} classes")

    space = SearchSpace.from_engine(engine)
    rng = np.random.default_rng(args.seed)
    configs = [space.sample(rng) for _ in range(args.evals)]

    # warm-up (JIT compilation for the numba path)
    for backend in backends:
        engine.run(configs[0], ids[:64], backend=backend)

    per_eval = {}
    outputs = {}
    for backend in backends:
        per_eval[backend], outputs[backend] = time_evals(engine, configs, ids, backend)
        print(f"{backend:>6}: {per_eval[backend] * 1000:8.2f} ms per policy evaluation")
    if len(backends) == 2:
        a, b = outputs["numba"], outputs["numpy"]
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.distributions, rb.distributions)
            assert np.array_equal(ra.consulted, rb.consulted)
            assert np.array_equal(ra.cost, rb.cost)
        print("agreement: numba and numpy outputs are bit-identical")
        print(f"speedup:   numpy/numba = {per_eval['numpy'] / per_eval['numba']:.2f}x")

    budget = float(np.median(engine.costs))
    for backend in backends:
        start = time.perf_counter()
        study = optimize(engine, budget, args.trials, seed=args.seed, backend=backend)
        elapsed = time.perf_counter() - start
        print(
            f"{backend:>6}: {args.trials}-trial search in {elapsed:6.2f} s "
            f"(best objective {study.best_trial.objective:.4f})"
        )


if __name__ == "__main__":
    main()
