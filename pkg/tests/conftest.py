import numpy as np
import pytest

from richsgd.glm import GlmFamily


def make_instance(family: str, n: int = 30, d: int = 4, seed: int = 0, rho: float = 0.5):
    """Small correlated design with responses drawn from the family."""
    rng = np.random.default_rng([seed, 97, d])
    cov = rho ** np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    X = rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T
    w = 0.5 * rng.standard_normal(d)
    z = X @ w
    if family == "linear":
        y = z + rng.standard_normal(n)
    elif family == "logistic":
        y = np.where(rng.random(n) < 1 / (1 + np.exp(-z)), 1.0, -1.0)
    else:
        y = rng.poisson(np.exp(z)).astype(float)
    return X, y, w


@pytest.fixture
def instance():
    return make_instance


@pytest.fixture(params=["linear", "logistic", "poisson"])
def family(request):
    return GlmFamily(request.param)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
