import random
from pathlib import Path

import pytest

from latticebft.lattice import parse_fixture

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

A, B, C, D, E, F = range(6)


def load_six_chain():
    """(delivered blocks, pending blocks, {(chain, height): block})."""
    blocks = parse_fixture((SCENARIOS / "six_chain_example.txt").read_text())
    index = {(b.chain_id, b.height): b for b in blocks}
    return blocks[:7], blocks[7:], index


@pytest.fixture
def six_chain():
    return load_six_chain()


@pytest.fixture
def rng():
    return random.Random(1234)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
