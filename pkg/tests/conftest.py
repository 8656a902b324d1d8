import os
from pathlib import Path

import pytest

from kddnet import dataset as ds
from kddnet.synthetic import write_nslkdd

REPO = Path(__file__).resolve().parents[1]


def nslkdd_file(name: str) -> Path | None:
    """Locate a real NSL-KDD file via $NSLKDD_DIR or ./data/."""
    for base in (os.environ.get("NSLKDD_DIR"), REPO / "data"):
        if base and (Path(base) / name).is_file():
            return Path(base) / name
    return None


@pytest.fixture(scope="session")
def taxonomy():
    return ds.load_taxonomy()


@pytest.fixture(scope="session")
def synthetic_file(tmp_path_factory):
    return write_nslkdd(tmp_path_factory.mktemp("syn") / "train.txt", 1500, seed=11)


@pytest.fixture(scope="session")
def synthetic_records(synthetic_file):
    return ds.parse_nslkdd(synthetic_file)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
