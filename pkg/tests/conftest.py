import numpy as np
import pytest

from obdkit.mdp import TabularMdp, TabularPolicy


def two_state_chain(gamma=0.5):
    """a0 stays, a1 switches; reward 1 in s1 under either action; start in s0."""
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = T[1, 0, 1] = 1.0
    T[0, 1, 1] = T[1, 1, 0] = 1.0
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(T, r, gamma, [1.0, 0.0])


SWITCH_THEN_STAY = TabularPolicy([[0.0, 1.0], [1.0, 0.0]])


def random_policy(rng, n_states, n_actions):
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


@pytest.fixture
def chain():
    return two_state_chain()


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Print and record one PASS/FAIL line, then assert it."""
    def _verdict(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        assert ok, line
    return _verdict
