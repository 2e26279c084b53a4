import numpy as np
import pytest

from cads import CascadeEngine, PolicyConfig, split_dataset
from cads import synth
from cads.backend import available_backends


def build_engine(spec, seed=1, stratified=False):
    pool = synth.generate_pool(spec)
    split = split_dataset(pool.n_samples, seed, labels=pool.labels.labels, stratified=stratified)
    return CascadeEngine.build(pool, split)


@pytest.fixture(scope="session")
def standard_engine():
    """The 6-expert / 10-class / 20000-sample benchmark pool, seed 1."""
    return build_engine(synth.standard_pool_spec())


@pytest.fixture(scope="session")
def small_engine():
    """Smaller variant of the standard pool for cheap unit tests."""
    return build_engine(synth.standard_pool_spec(n_samples=3000))


@pytest.fixture(scope="session")
def easy_engine():
    return build_engine(synth.easy_pool_spec())


@pytest.fixture(scope="session")
def complementary_engine():
    return build_engine(synth.complementary_pool_spec())


@pytest.fixture(scope="session")
def heterogeneous_engine():
    return build_engine(synth.heterogeneous_pool_spec())


@pytest.fixture(scope="session", autouse=True)
def warm_kernels(small_engine):
    """Compile the numba kernel once so timed tests measure work, not JIT."""
    config = small_engine.default_policy()
    ids = small_engine.split.test_ids[:64]
    for backend in available_backends():
        small_engine.run(config, ids, backend=backend)


@pytest.fixture()
def default_policy():
    return PolicyConfig()
