import json
from importlib import resources

import numpy as np
import pytest

from clustercurriculum.features import FeatureSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def blob(rng):
    return FeatureSet(rng.normal(size=(100, 3)))


def load_schema(name):
    text = resources.files("clustercurriculum").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


@pytest.fixture
def schema():
    return load_schema


def brute_force_knn(X, ids, k):
    """O(m^2) scan: neighbours sorted by (distance, id), self excluded."""
    out_idx, out_dist = [], []
    for i in range(X.shape[0]):
        cand = []
        for j in range(X.shape[0]):
            if j != i:
                diff = np.asarray(X[i], dtype=np.float64) - np.asarray(X[j], dtype=np.float64)
                cand.append((float(np.sqrt(np.sum(diff * diff))), int(ids[j]), j))
        cand.sort()
        out_idx.append([c[2] for c in cand[:k]])
        out_dist.append([c[0] for c in cand[:k]])
    return np.array(out_idx), np.array(out_dist)


def cluster_with_outliers(seed, n_cluster=500, n_out=50, d=2):
    """One tight Gaussian cluster plus uniform background outliers."""
    rng = np.random.default_rng(seed)
    cluster = rng.normal(scale=0.3, size=(n_cluster, d))
    outliers = rng.uniform(-5.0, 5.0, size=(n_out, d))
    X = np.vstack([cluster, outliers])
    labels = np.r_[np.zeros(n_cluster, bool), np.ones(n_out, bool)]
    perm = rng.permutation(X.shape[0])
    return X[perm], labels[perm]


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    ``record(number, title, checks, detail)`` takes a dict of named boolean
    checks; the line is printed in the terminal summary and the test fails
    if any check is false.  A criterion that raises before recording is
    reported as FAIL.
    """
    lines = request.config.stash[_ACCEPTANCE]
    seen = []

    def record(number, title, checks, detail=""):
        failed = [name for name, ok in checks.items() if not ok]
        verdict = "FAIL" if failed else "PASS"
        line = f"criterion {number} {verdict}: {title}"
        if detail:
            line += f" | {detail}"
        if failed:
            line += f" | failed: {', '.join(failed)}"
        lines.append(line)
        seen.append(number)
        print(line)
        assert not failed, line

    yield record
    if not seen:
        name = request.node.name
        number = name.split("_")[2] if name.startswith("test_criterion_") else name
        lines.append(f"criterion {number} FAIL: did not complete (see traceback)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
