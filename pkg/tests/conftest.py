import numpy as np
import pytest

from prq.harness import example1
from prq.planners import solve_by_enumeration
from prq.projection import WeightDistribution
from prq.sampling import build_behavior_chain


@pytest.fixture(scope="session")
def ex1():
    """Example MDP at gamma=0.99 with D = stationary distribution of the behaviour chain."""
    mdp = example1.mdp(0.99)
    feats = example1.features()
    chain = build_behavior_chain(mdp, example1.behavior())
    d = WeightDistribution(chain.mu_inf)
    cert = solve_by_enumeration(mdp, feats, d, 0.01)
    return {"mdp": mdp, "features": feats, "chain": chain, "d": d, "eta": 0.01,
            "theta_star": np.array(cert.solutions[0].theta)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
