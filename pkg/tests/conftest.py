import numpy as np
import pytest

from lmsgnn import backend
from lmsgnn.graph import Graph, eigendecompose, laplacian


def random_weighted_graph(n, rng, density=0.5):
    w = rng.uniform(0.1, 2.0, size=(n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return Graph(w + w.T)


def random_connected_graph(n, rng):
    """Random weighted graph with a spanning path so it is connected."""
    w = np.triu(rng.uniform(0.1, 2.0, size=(n, n)) * (rng.random((n, n)) < 0.4), 1)
    for i in range(n - 1):
        w[i, i + 1] = max(w[i, i + 1], 0.5)
    return Graph(w + w.T)


def random_basis(n, rng):
    return eigendecompose(laplacian(random_connected_graph(n, rng)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(params=sorted(backend.BACKENDS))
def kernel_backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    monkeypatch.setattr(backend, "kernels", backend.BACKENDS[request.param])
    return request.param


_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; all lines are printed after the run."""

    def record(name, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _CRITERIA.append(f"{status}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
