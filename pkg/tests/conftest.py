import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from verbspace.label_space import VerbVocabulary, VoteRecord  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


@pytest.fixture
def vocab3():
    return VerbVocabulary(("pour", "fill", "hold"))


@pytest.fixture
def pour_votes():
    return VoteRecord("pour-oil", {"pour": 9, "fill": 6, "hold": 3}, 9)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
