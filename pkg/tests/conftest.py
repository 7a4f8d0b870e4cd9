import time

import numpy as np
import pytest

from memosort.synthgen import generate, spin_config
from memosort.trainer import TrainConfig, build_dataset, train

_acceptance_lines: list[str] = []


def record_acceptance(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


TRAIN_SEEDS = range(100, 120)
HELDOUT_SEEDS = range(900, 905)


@pytest.fixture(scope="session")
def trained():
    """Gate weights trained on figure-spin windows (<= 500 windows, 30 epochs).

    Returns ``(TrainResult, n_windows, seconds)``.
    """
    t0 = time.perf_counter()
    data = build_dataset([generate(spin_config(), seed=s) for s in TRAIN_SEEDS], window=20, stride=10)
    cfg = TrainConfig(epochs=30, max_windows=500, seed=0)
    result = train(data, cfg)
    return result, min(len(data), cfg.max_windows), time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
