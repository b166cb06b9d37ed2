import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from securenoma.model import EhParams, NetworkTopology, QosRequirements, generate_channels

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def table2():
    return NetworkTopology.table2()


@pytest.fixture
def small_topology():
    """Uneven cluster sizes exercise every index set."""
    return NetworkTopology(M=2, pu_counts=(2, 1), ehr_counts_primary=(1, 2), Ns=3, Ks=2,
                           pbs_antennas=3, cbs_antennas=2)


@pytest.fixture
def scalar_topology():
    return NetworkTopology(1, (1,), (1,), 1, 1, 1, 1)


@pytest.fixture
def table2_instance(table2):
    ch = generate_channels(7, table2, noise=1e-15)
    return ch, QosRequirements.uniform(table2), EhParams.shared(table2)


def random_psd(rng, n, scale=1.0, rank=None):
    rank = rank or n
    G = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    A = G @ G.conj().T
    return scale * A / np.trace(A).real


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""
    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
