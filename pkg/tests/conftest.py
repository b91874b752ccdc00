import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from fedbert.data import build_vocab, corpus_sentences, generate_corpus


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(7, num_patients=20, notes_per_patient=2, ner_train_notes=20, ner_test_notes=10)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(corpus_sentences(small_corpus), 300)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
