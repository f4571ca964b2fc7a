import numpy as np
import pytest

from flexcf.cfgen import CounterfactualSet
from flexcf.dataset import CATEGORICAL, CONTINUOUS, ORDINAL, FeatureSchema, planted_spec, split, synthesize_fixture
from flexcf.model import train_forest

_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance outcome: criterion(number, passed, detail)."""
    results = request.config.stash[_RESULTS_KEY]

    def record(number, passed, detail=""):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        results.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(line)


# -- shared builders ---------------------------------------------------------


def cont(name, lo=0.0, hi=1.0, immutable=False):
    return FeatureSchema(name, CONTINUOUS, range_min=lo, range_max=hi, immutable=immutable)


def cat(name, n=3, immutable=False, kind=CATEGORICAL):
    return FeatureSchema(name, kind, categories=tuple(f"{name}_{i}" for i in range(n)), immutable=immutable)


def ordinal(name, n=4):
    return cat(name, n, kind=ORDINAL)


def cfset(factual, cfs, name="test", index=None):
    return CounterfactualSet(np.asarray(factual, float), np.asarray(cfs, float), name, 0,
                             factual_index=index)


@pytest.fixture(scope="session")
def planted():
    return synthesize_fixture(planted_spec(n_rows=400), seed=3)


@pytest.fixture(scope="session")
def planted_split(planted):
    return split(planted, 0.75, seed=0)


@pytest.fixture(scope="session")
def planted_forest(planted_split):
    train, _ = planted_split
    return train_forest(train, n_trees=25, max_depth=4, seed=1)
