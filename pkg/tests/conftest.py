import numpy as np
import pytest

from les_engine.stats import build_feature_table, fit_stats
from les_engine.synthetic import make_corpus


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(seed=0)


@pytest.fixture(scope="session")
def stats(corpus):
    return fit_stats(corpus)


@pytest.fixture(scope="session")
def table(corpus, stats):
    return build_feature_table(corpus, stats)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
