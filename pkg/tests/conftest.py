import numpy as np
import pytest

from lingnn.graph import Graph, aggregation_matrix

_ACCEPTANCE = {}


def erdos_renyi(n, p, rng):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def random_instance(seed, n=7, m_x=3, n_bar=4, m_y=2, agg="gcn", p=0.4):
    """Random graph, features, training set and real targets."""
    rng = np.random.default_rng(seed)
    g = erdos_renyi(n, p, rng)
    S = aggregation_matrix(g, agg)
    X = rng.normal(size=(m_x, n))
    idx = np.sort(rng.choice(n, size=n_bar, replace=False))
    Y = rng.normal(size=(m_y, n_bar))
    return X, S, idx, Y


def one_hot_targets(seed, m_y, n_bar):
    rng = np.random.default_rng(seed)
    Y = np.zeros((m_y, n_bar))
    Y[rng.integers(0, m_y, size=n_bar), np.arange(n_bar)] = 1.0
    return Y


@pytest.fixture
def acceptance():
    """Record the outcome of one acceptance criterion for the summary."""

    def record(number, passed, detail=""):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def max_rel_error(a, b):
    """Largest entrywise deviation relative to the largest reference entry."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def gradient_instance(seed, arch):
    """Random model/data with n <= 8, H <= 4 and widths <= 5."""
    from lingnn.model import init_params

    rng = np.random.default_rng(10_000 + seed)
    n = int(rng.integers(3, 9))
    H = int(rng.integers(1, 5))
    m_x = int(rng.integers(1, 5))
    m_y = int(rng.integers(2, 4))
    n_bar = int(rng.integers(1, n + 1))
    hidden = [int(h) for h in rng.integers(1, 6, size=H)]
    agg = "gcn" if seed % 2 == 0 else "gin"
    X, S, idx, Y = random_instance(seed, n=n, m_x=m_x, n_bar=n_bar, m_y=m_y, agg=agg)
    p =init_params(arch, H, m_x, hidden, m_y, "gaussian(0.6)", seed)
    return p, X, S, idx, Y
