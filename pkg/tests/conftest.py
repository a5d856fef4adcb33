import numpy as np
import pytest

from kaaslab import env_sim, kaas, transitions
from kaaslab.kaas import KBEntry, KnowledgeBase
from kaaslab.learning import Policy, QTable
from kaaslab.mdp_core import NOOP, KnobLadder, StateSpace
from kaaslab.rewards import PI_P_HI, PI_P_LO, PI_R_HI, PI_R_LO
from kaaslab.transitions import build_signature

# average thread counts of the four policies in the worked scheduling examples
EXAMPLE_CORES = {PI_R_HI: 3.4, PI_P_HI: 4.4, PI_R_LO: 2.9, PI_P_LO: 3.3}


def noop_policy(name, space, signature, action=NOOP):
    n = space.n_states
    qt = QTable(np.zeros((n, 27)), np.zeros((n, 27), dtype=np.int64))
    return Policy(name, np.full(n, action, dtype=np.int64), qt, name, "offline", 0, 0, {},
                  signature)


def stub_kb(cores=None, params=None, names=None):
    """Knowledge base whose policies never move a knob, with chosen avg_cores."""
    cores = dict(EXAMPLE_CORES if cores is None else cores)
    space = StateSpace.default()
    params = params or env_sim.EnvParams()
    ladder = KnobLadder()
    sig = build_signature(space, ladder, params)
    kb = KnowledgeBase(sig, space, ladder, params)
    kb.entries = {n: KBEntry(noop_policy(n, space, sig), c, 40.0, ("t1",))
                  for n, c in cores.items() if names is None or n in names}
    return kb


@pytest.fixture(scope="session")
def space():
    return StateSpace.default()


@pytest.fixture(scope="session")
def table10(space):
    return transitions.explore(env_sim.TrainingEnv(space, seed=0), min_visits=10)


@pytest.fixture(scope="session")
def provisioned():
    """The full bootstrap: explore, pi^R online while recording, three offline."""
    return kaas.provision(seed=0)


# acceptance verdicts, one line per criterion, repeated in the terminal summary
VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
