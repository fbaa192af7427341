import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pgmt", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pgmt")


@pytest.fixture(scope="session")
def tree8():
    from pgmt.surfaces import build_parabolic_tree
    return build_parabolic_tree(8, pitch=2.0 ** -9)


@pytest.fixture(scope="session")
def two_graph():
    from pgmt.surfaces import build_two_graph_example
    return build_two_graph_example(half_time=16.0, pitch=2.0 ** -6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
