import numpy as np
import pytest

from cellfree import desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cfg():
    return desk_config()


def one_hot(labels, n=None):
    labels = np.asarray(labels)
    n = len(labels) if n is None else n
    X = np.zeros((n, len(labels)))
    X[labels, np.arange(len(labels))] = 1.0
    return X


ACCEPTANCE: list = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} ({detail})"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
