import os
from pathlib import Path

import numpy as np
import pytest

from rul_forge.synthetic import FleetSpec, generate_fleet

ACCEPTANCE_LINES = []


def central_diff(f, arr, eps=1e-5):
    """Independent finite-difference oracle: perturbs ``arr`` in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def max_rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_fleet():
    return generate_fleet(FleetSpec(n_units=8, n_test_units=6, min_life=40, max_life=70, seed=3))


@pytest.fixture(scope="session")
def cmapss_dir():
    """Directory with real C-MAPSS files, from RUL_FORGE_DATA (skips when absent)."""
    d = os.environ.get("RUL_FORGE_DATA")
    if not d or not (Path(d) / "train_FD001.txt").exists():
        pytest.skip("real C-MAPSS files not supplied (set RUL_FORGE_DATA)")
    return Path(d)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
