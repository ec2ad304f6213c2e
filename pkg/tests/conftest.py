import numpy as np
import pytest

from tumbledock import dynamics as dyn
from tumbledock.quat import normalize


@pytest.fixture(scope="session")
def table1_params():
    craft = dyn.SpacecraftParams([1000.0, 2000.0, 1000.0], 100.0, [0.0, 1.01, 0.0], 1.0)
    return dyn.SystemParams(craft, craft, dyn.OrbitParams(7071000.0, 3.98e14))


@pytest.fixture(scope="session")
def x0_ref():
    x = np.zeros(dyn.N_STATE)
    x[dyn.IDX_POS] = [0.0, -10.0, 0.0]
    x[dyn.IDX_QS] = [0.0, 0.0, 0.0, 1.0]
    x[dyn.IDX_WT] = [0.0, 0.0349, 0.017453]
    x[dyn.IDX_QT] = normalize([-0.05, 0.0, 0.0, 0.99875])
    x.setflags(write=False)
    return x


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Lines are printed immediately and repeated in the terminal summary, so
    they are visible with or without output capture.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
