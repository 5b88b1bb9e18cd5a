import numpy as np
import pytest

from s2sr.scene import BANDS_A, BANDS_B, BANDS_C, BandImage, MultiResScene


def random_scene(size=36, seed=0, with_c=True, base_gsd=10, low=100.0, high=5000.0):
    rng = np.random.default_rng(seed)

    def group(ids, f):
        return tuple(
            BandImage(b, base_gsd * f, rng.uniform(low, high, size=(size // f, size // f))) for b in ids
        )

    return MultiResScene(
        group(BANDS_A, 1), group(BANDS_B, 2), group(BANDS_C, 6) if with_c else None, base_gsd
    )


@pytest.fixture
def scene36():
    return random_scene(36, seed=1)


@pytest.fixture
def scene96():
    return random_scene(96, seed=2)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
