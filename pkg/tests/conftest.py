import numpy as np
import pytest
from hypothesis import settings

from helpers import synthetic_store
from voldiff.model import UNetConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_store():
    return synthetic_store(120, seed=3)


@pytest.fixture(scope="session")
def tiny_cfg():
    """A narrow network with the same topology, for fast gradient checks."""
    return UNetConfig(enc_channels=3, bottle_channels=4, time_embed_dim=4, scalar_embed_dim=2, film_hidden=(3, 3))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; the lines are echoed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
