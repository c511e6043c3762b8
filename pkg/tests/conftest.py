import numpy as np
import pytest

from manifold_infer import builtin_bivariate_corr, builtin_gaussian_location, builtin_rm_anova
from manifold_infer.io import orthodontic_y

ACCEPTANCE_KEY = pytest.StashKey[list]()

Y_LOC = np.array([-0.5])
Y_BIV = np.array([1.2, 0.6])


@pytest.fixture(scope="session")
def loc():
    return builtin_gaussian_location("flat")


@pytest.fixture(scope="session")
def biv():
    return builtin_bivariate_corr(10, "flat")


@pytest.fixture(scope="session")
def anova():
    return builtin_rm_anova(4, 11)


@pytest.fixture(scope="session")
def y_anova():
    return orthodontic_y()


def manifold_points(model, y, n, seed=0):
    """Exact points ``(u, theta)`` of ``{G = y}`` built from the inverse in ``u``
    (location, bivariate) or from a random ``theta`` and free ``u`` (ANOVA)."""
    rng = np.random.default_rng(seed)
    pts = []
    if model.name.startswith("gaussian-location"):
        from scipy.special import ndtr, ndtri
        for t in rng.uniform(0.05, 0.95, n):
            pts.append((np.array([ndtr(y[0] - ndtri(t))]), np.array([t])))
    elif model.name.startswith("bivariate-corr"):
        for t in rng.uniform(-0.8, 0.8, n):
            pts.append((np.array([y[0] / (1 + t), y[1] / (1 - t)]), np.array([t])))
    else:
        I, J = model.meta["I"], model.meta["J"]
        for _ in range(n):
            theta = np.concatenate([rng.normal(22, 1, I), rng.normal(0.5, 0.3, 2)])
            z = rng.standard_normal(J)
            sz, se = np.exp(theta[I]), np.exp(theta[I + 1])
            cond = np.tile(np.arange(I), J)
            subj = np.repeat(np.arange(J), I)
            e = (y - theta[:I][cond] - sz * z[subj]) / se
            pts.append((np.concatenate([z, e]), theta))
    return pts


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """``report(criterion, ok, detail)`` logs one PASS/FAIL line and asserts ``ok``."""
    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE_KEY].append(line)
        print(line, flush=True)
        assert ok, line
    return _report
