import numpy as np
import pytest

from psconcepts.ecm import ClipNetwork, THREE_LAYER
from psconcepts.environment import EnvConfig, build_environment

ACCEPTANCE_LINES = []


def ideal_network(env, strong=1000.0):
    """Hand-built network of a perfect abstractor.

    Clip ``v * O + x`` stands for "variable v has value x"; every setup links
    strongly to its V value clips and each clip links strongly to the matching
    outcome of every experiment testing its variable.
    """
    V, O = env.config.num_variables, env.values_per_variable
    S, P = env.num_setups, env.num_predictions
    h1 = np.ones((S, V * O))
    h2 = np.ones((V * O, P))
    for s in range(S):
        for v in range(V):
            h1[s, v * O + env.setup_values[s, v]] += strong
    for e, v in enumerate(env.experiment_variable):
        for x in range(O):
            h2[v * O + x, e * O + x] += strong
    return ClipNetwork(THREE_LAYER, h1, h2, O)


def planted_subsets(env):
    V, O = env.config.num_variables, env.values_per_variable
    return [tuple(range(v * O, (v + 1) * O)) for v in range(V)]


@pytest.fixture
def default_env():
    return build_environment(EnvConfig())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
