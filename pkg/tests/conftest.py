import numpy as np
import pytest

from mspad.datamodel import Modality
from mspad.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 participants x 8 fingers x 1 session, small raw frames, all modalities."""
    out = tmp_path_factory.mktemp("tiny")
    cfg = SynthConfig(n_participants=3, sessions=1, frame_size=(20, 40), seed=7)
    return generate(cfg, out), out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ALL_MODS = (Modality.F_M, Modality.F_S, Modality.F_L, Modality.B_N)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc is None else f"{self.detail} {type(exc).__name__}: {exc}".strip()
        line = f"criterion {self.number} {status}: {self.title}" + (f" ({detail})" if detail else "")
        self.lines.append((self.number, line.splitlines()[0]))
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one PASS/FAIL line for the run summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
