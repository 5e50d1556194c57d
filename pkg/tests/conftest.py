import numpy as np
import pytest
from hypothesis import settings

from conservo.rk import rk_step, tableau

settings.register_profile("conservo", deadline=None, max_examples=50)
settings.load_profile("conservo")


def fd_gradient(func, y, step=1e-6, scale=None):
    """Central finite differences with a step relative to each component.

    ``scale`` gives the typical magnitude per component (defaults to
    ``max(1, |y_i|)``); needed when a component is zero but its units are huge.
    """
    y = np.asarray(y, dtype=np.float64)
    g = np.empty_like(y)
    for i in range(y.shape[0]):
        dh = step * (max(1.0, abs(y[i])) if scale is None else scale[i])
        e = np.zeros_like(y)
        e[i] = dh
        g[i] = (func(y + e) - func(y - e)) / (2.0 * dh)
    return g


def flow_samples(system, count, t_max, h, seed=0):
    """States reached from ``y0`` by short, accurately resolved RK4 flows."""
    rng = np.random.default_rng(seed)
    tab = tableau("RK4")
    out = []
    for _ in range(count):
        y = system.y0.copy()
        for _ in range(int(rng.integers(1, max(2, int(t_max / h))))):
            y = rk_step(system.rhs, y, h, tab)
        out.append(y)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
