import numpy as np
import pytest

from jppf.taxonomy import ClassTaxonomy, load_taxonomy


@pytest.fixture(scope="session")
def cpp():
    return load_taxonomy("cpp")


@pytest.fixture(scope="session")
def ppp():
    return load_taxonomy("ppp")


@pytest.fixture
def tiny():
    """Two stuff classes, a partitionable person (2 parts) and a plain car."""
    return ClassTaxonomy(
        stuff_classes=(1, 2),
        thing_classes=(10, 11),
        part_groups=(0, 5, 6),
        class_parts={10: (5, 6)},
        names={1: "road", 2: "sky", 10: "person", 11: "car"},
        part_names={0: "background", 5: "head", 6: "body"},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
