import numpy as np
import pytest

from feras.graph import Graph

_acceptance_results = []


def random_graph(n, p, rng, m1=4, n_classes=3, task="multilabel", roles=None):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    edges = np.argwhere(upper)
    x = rng.standard_normal((n, m1))
    if task == "multilabel":
        y = (rng.random((n, n_classes)) < 0.4).astype(float)
    else:
        y = np.eye(n_classes)[rng.integers(0, n_classes, n)]
    return Graph.from_edges(n, edges, x, y, roles if roles is not None else ["train"] * n, task)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    x = np.arange(6, dtype=float).reshape(3, 2)
    y = np.eye(3)
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], x, y, ["train", "val", "test"])


@pytest.fixture
def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)], np.ones((3, 1)), np.eye(3))


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    _acceptance_results.append((report.nodeid.split("::", 1)[1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _acceptance_results:
        tag = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{tag} {name}" + (f"  ({detail})" if detail else ""))
