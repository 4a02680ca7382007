import os
from pathlib import Path

import pytest

from sparsemp.twref import get_reference

CACHE_DIR = Path(os.environ.get("SPARSEMP_CACHE_DIR", Path(__file__).resolve().parent.parent / ".cache"))


def cached_reference(count, n_internal, seed):
    path = CACHE_DIR / f"tw_ref_n{n_internal}_c{count}_s{seed}.bin"
    return path, get_reference(path, count=count, n_internal=n_internal, seed=seed)


@pytest.fixture(scope="session")
def tw_cache():
    """Path of the default 2e5-draw reference at n_internal = 1e4 (built on first use)."""
    path, _ = cached_reference(200_000, 10_000, 0)
    return path


@pytest.fixture(scope="session")
def tw_pair():
    """Independent 1e5-draw references at n_internal = 2000 and 1e4."""
    return cached_reference(100_000, 2000, 1)[1], cached_reference(100_000, 10_000, 1)[1]


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
