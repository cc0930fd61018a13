import numpy as np
import pytest

from gsax.benchmarks import get_benchmark
from gsax.driver import lhs_sample
from gsax.gp import TrainingSet, fit


def fit_benchmark(name, n, seed, **fit_kwargs):
    bench = get_benchmark(name)
    X = lhs_sample(n, bench.bounds, seed)
    y = bench.evaluate(X)
    return bench, fit(TrainingSet(X, y, bench.bounds), **fit_kwargs)


@pytest.fixture(scope="session")
def ishigami_model_100():
    """Ishigami surrogate on 100 LHS points, shared across test modules."""
    return fit_benchmark("ishigami", 100, seed=42)


@pytest.fixture(scope="session")
def ishigami_model_500():
    return fit_benchmark("ishigami", 500, seed=7)


@pytest.fixture(scope="session")
def sqexp_model_40():
    return fit_benchmark("sqexp2", 40, seed=3)
