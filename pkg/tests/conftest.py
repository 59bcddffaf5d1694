import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ksparse.data import Dataset

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


def random_dataset(seed: int, p: int, n: int, hetero: bool = True, signal: int = 2) -> Dataset:
    """Gaussian design, a few active columns, per-sample noise levels."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p, n))
    beta = np.zeros(n)
    beta[: min(signal, n)] = rng.normal(0, 1, min(signal, n))
    sigma = rng.uniform(0.3, 1.5, p) if hetero else np.full(p, 0.5)
    y = X @ beta + sigma * rng.standard_normal(p) + rng.normal()
    return Dataset(y, sigma, X)


@pytest.fixture
def toy():
    return random_dataset(7, 40, 10)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
