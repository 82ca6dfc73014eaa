"""Shared fixtures: the expensive closed-loop runs are session-cached so the
unit tests and the acceptance suite reuse the same traces."""

import numpy as np
import pytest

from lsmrac.analysis import matching_params, oracle_for_scenario
from lsmrac.loop import builtin_scenarios, run

ACCEPTANCE_RESULTS = []


def record_criterion(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scenarios():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def sim3_trace(scenarios):
    return run(scenarios["sim3"].copy_with(record_information=True))


@pytest.fixture(scope="session")
def sim3_fine_trace(scenarios):
    return run(scenarios["sim3"].copy_with(h=5e-5, stride=20))


@pytest.fixture(scope="session")
def sim3_coarse_info_trace(scenarios):
    return run(scenarios["sim3"].copy_with(h=1e-3, stride=1,
                                           record_information=True))


@pytest.fixture(scope="session")
def sim3_aligned_trace(scenarios):
    """sim3 with the model state started at the plant output, so the error
    identity e0 = S Upsilon holds without an initial-condition transient."""
    s = scenarios["sim3"].copy_with(ym0=np.array([1.0, 1.0]))
    return run(s)


@pytest.fixture(scope="session")
def sim3_mmrac_trace(scenarios):
    """Constant-gain twin of sim3 with the gain pairing Gamma = gamma * R0."""
    s = scenarios["sim3"].copy_with(label="sim3-mmrac", law="mmrac",
                                    Gamma=50.0 * 20.0, gamma=None)
    return run(s)


@pytest.fixture(scope="session")
def sim4_trace(scenarios):
    return run(scenarios["sim4"].copy_with(record_information=True))


@pytest.fixture(scope="session")
def sim4_coarse_info_trace(scenarios):
    return run(scenarios["sim4"].copy_with(h=1e-3, stride=1,
                                           record_information=True))


@pytest.fixture(scope="session")
def sim6_trace(scenarios):
    return run(scenarios["sim6"])


@pytest.fixture(scope="session")
def sim6_sigma_trace(scenarios):
    return run(scenarios["sim6-sigma"])


@pytest.fixture(scope="session")
def sim3_match(scenarios):
    """Matching parameters for sim3's pole-3 model."""
    return matching_params(oracle_for_scenario(scenarios["sim3"]))


@pytest.fixture(scope="session")
def match_pole2(scenarios):
    """Matching parameters for the pole-2, gain-2 model on the same plant."""
    s = scenarios["sim3"].copy_with(model_a=np.array([2.0, 2.0]), ell0=2.0)
    return matching_params(oracle_for_scenario(s))


@pytest.fixture(scope="session")
def acceptance_traces(sim3_trace, sim3_aligned_trace, sim3_mmrac_trace,
                      sim4_trace, sim6_trace, sim6_sigma_trace):
    return {
        "sim3": sim3_trace,
        "sim3-aligned": sim3_aligned_trace,
        "sim3-mmrac": sim3_mmrac_trace,
        "sim4": sim4_trace,
        "sim6": sim6_trace,
        "sim6-sigma": sim6_sigma_trace,
    }
