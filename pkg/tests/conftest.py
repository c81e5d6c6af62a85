import numpy as np
import pytest

from parocs.config import load_config
from parocs.mesh import make_grid
from parocs.state import make_problem

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def exp_fns():
    e = lambda x, t, y: np.exp(y)  # noqa: E731
    return dict(f=e, f_y=e, f_yy=e)


def neg_curvature_problem(nx=16, nt=16, **kw):
    """exp(y) state, L0 = y, g = x on a small grid."""
    opts = dict(L0=lambda x, t, y: y, L0_y=lambda x, t, y: np.ones_like(y),
                L0_yy=lambda x, t, y: np.zeros_like(y), g=lambda x, t: x + 0.0 * t,
                u_a=0.0, u_b=1.0)
    opts.update(kw)
    return make_problem(make_grid(1, nx, nt), **exp_fns(), **opts)


@pytest.fixture(scope="session")
def neg_ps():
    return load_config("neg-curvature").build_problem()


@pytest.fixture(scope="session")
def tracking_ps():
    return load_config("tracking").build_problem()


@pytest.fixture
def small_neg():
    return neg_curvature_problem()
