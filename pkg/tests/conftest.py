import pytest

from rcuguard.corpus import build_corpus, corpus_root
from rcuguard.lang import parse


@pytest.fixture(scope="session")
def root():
    return corpus_root()


@pytest.fixture(scope="session")
def cases():
    return {c.name: c for c in build_corpus()}


def load(rel: str):
    return parse((corpus_root() / rel).read_text())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
