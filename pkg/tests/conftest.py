from __future__ import annotations

import numpy as np
import pytest

from dtnet.events import EventStream
from dtnet.synth import write_surrogate


def random_stream(rng, n, width=64, height=64, max_gap=500, label=None) -> EventStream:
    """Time-ordered random events; gaps of 0 exercise equal timestamps."""
    t = np.cumsum(rng.integers(0, max_gap + 1, n))
    return EventStream(width, height, rng.integers(0, width, n), rng.integers(0, height, n),
                       t, rng.choice(np.array([-1, 1]), n), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def digits_root(tmp_path_factory):
    """Surrogate saccade-digit dataset, 100 train / 50 test per class."""
    root = tmp_path_factory.mktemp("digits")
    text = write_surrogate("digits", root, 100, 50, seed=0)
    (root / "manifest.ini").write_text(text)
    return root


@pytest.fixture(scope="session")
def tiny_digits_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_digits")
    text = write_surrogate("digits", root, 6, 3, seed=1)
    (root / "manifest.ini").write_text(text)
    return root


@pytest.fixture(scope="session")
def shapes_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    text = write_surrogate("shapes", root, 30, 15, seed=2)
    (root / "manifest.ini").write_text(text)
    return root


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
