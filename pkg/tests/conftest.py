from pathlib import Path

import numpy as np
import pytest

from liftkge.data import KnowledgeGraph

ROOT = Path(__file__).resolve().parents[1]
UMLS_DIR = ROOT / "data" / "umls"


@pytest.fixture
def toy_kg():
    """4 entities, 2 relations: a chain under r0 and its two-step shortcut under r1."""
    train = [(0, 0, 1), (1, 0, 2), (2, 0, 3), (0, 1, 2), (1, 1, 3)]
    return KnowledgeGraph(4, 2, np.array(train))


@pytest.fixture
def small_kg():
    rng = np.random.default_rng(5)
    triples = {tuple(x) for x in zip(rng.integers(0, 8, 60), rng.integers(0, 3, 60), rng.integers(0, 8, 60))}
    arr = np.array(sorted(triples))
    return KnowledgeGraph(8, 3, arr[:-6], arr[-6:-3], arr[-3:])


@pytest.fixture(scope="session")
def umls_dir():
    if not (UMLS_DIR / "train2id.txt").exists():
        pytest.skip("UMLS not present; run scripts/fetch_umls.py")
    return UMLS_DIR


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
