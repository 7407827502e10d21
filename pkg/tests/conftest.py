import numpy as np
import pytest

from cmrestore.data import DatasetSpec, gen_patches
from cmrestore.nnet import Denoiser
from cmrestore.schedule import ScheduleConfig, build_schedule


@pytest.fixture
def cfg():
    return ScheduleConfig()


@pytest.fixture
def schedule(cfg):
    return build_schedule(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_denoiser(rng):
    return Denoiser((4, 4), 3, width=16, depth=2, time_dim=8).init(rng)


@pytest.fixture
def patches():
    return gen_patches(DatasetSpec(count=64, seed=3))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
