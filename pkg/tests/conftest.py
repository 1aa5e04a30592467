import numpy as np
import pytest

from ulamflow.fields import AnalyticField, ConstantField
from ulamflow.integrate import FlowSpec
from ulamflow.ulam import BinPartition, UlamMatrix
import scipy.sparse as sp


def perm_matrix(perm, t=0.0, Q=1):
    """UlamMatrix moving bin i to bin perm[i]."""
    m = len(perm)
    counts = sp.csr_matrix((np.full(m, Q, dtype=np.int64), (np.arange(m), perm)), shape=(m, m))
    return UlamMatrix(t, 1.0, Q, np.arange(m), np.arange(m), counts)


def dense_matrix(A, t=0.0, Q=1000):
    """UlamMatrix from a nonnegative array whose entries are multiples of 1/Q."""
    counts = sp.csr_matrix(np.rint(np.asarray(A) * Q).astype(np.int64))
    m, mp = counts.shape
    return UlamMatrix(t, 1.0, Q, np.arange(m), np.arange(mp), counts)


@pytest.fixture
def dw_partition():
    return BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), (16, 16))


@pytest.fixture
def periodic_flow():
    return FlowSpec(1.0, AnalyticField())


# Full-size double-well models shared by the slow tests.
DW_BINS = (64, 64)
T_STEPS = 500


def _build_model(kind, gamma=0.0):
    from ulamflow.ulam import build_ulam

    part = BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), DW_BINS)
    flow = FlowSpec(1.0, AnalyticField(kind, gamma))
    return [build_ulam(flow, part, float(t), 100) for t in range(T_STEPS)]


@pytest.fixture(scope="session")
def periodic_model():
    return _build_model("periodic_double_well")


@pytest.fixture(scope="session")
def quasi_model():
    return _build_model("quasi_periodic_double_well", 0.1)


@pytest.fixture(scope="session")
def periodic_w50(periodic_model):
    from ulamflow.cocycle import rolling_windows

    return rolling_windows(periodic_model, 0.0, float(T_STEPS), 50, 4)


@pytest.fixture(scope="session")
def periodic_w100(periodic_model):
    from ulamflow.cocycle import rolling_windows

    return rolling_windows(periodic_model, 0.0, float(T_STEPS), 100, 4)


@pytest.fixture(scope="session")
def quasi_w50(quasi_model):
    from ulamflow.cocycle import rolling_windows

    return rolling_windows(quasi_model, 0.0, float(T_STEPS), 50, 5)


_REPORT_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    store = request.config.stash.setdefault(_REPORT_KEY, {})

    def record(num, ok, detail):
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_REPORT_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(store):
        terminalreporter.write_line(store[num])
