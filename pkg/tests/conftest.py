import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("cfm", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cfm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_hadamard(n):
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


# -- acceptance report ------------------------------------------------------------

ACCEPTANCE = {}
SUITE_BUDGET_S = 300.0


def record(criterion, ok, detail):
    """Store one acceptance verdict for the end-of-run report."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_sessionstart(session):
    import time
    session.config._cfm_t0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import time
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - config._cfm_t0
    if 8 in ACCEPTANCE:
        ok, detail = ACCEPTANCE[8]
        within = elapsed <= SUITE_BUDGET_S
        ACCEPTANCE[8] = (ok and within, f"{detail}; whole session {elapsed:.0f} s "
                                        f"(budget {SUITE_BUDGET_S:.0f} s)")
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
