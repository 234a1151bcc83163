import numpy as np
import pytest

from nestsim import analysis
from nestsim.engine import BarrierProblem
from nestsim.payoffs import barrier_purchase_prices, default_barrier_model, default_barrier_portfolio

ACCEPTANCE_LINES = []


def record_criterion(cid, ok, text):
    """``ok`` is True, False or None (skipped)."""
    line = f"[{'SKIP' if ok is None else 'PASS' if ok else 'FAIL'}] {cid}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_constants():
    return analysis.compute_toy_constants(with_printed_d=True)


@pytest.fixture(scope="session")
def barrier_problem():
    model = default_barrier_model()
    port = default_barrier_portfolio()
    return BarrierProblem(model, port.with_purchase_prices(barrier_purchase_prices(model, port)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
