import csv
import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fcfsalis.distributions import Exponential, Pareto, Uniform  # noqa: E402
from fcfsalis.model import CompatibilityGraph, ProbabilityVector, SystemSpec  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}

EX1_EDGES = frozenset([(0, 0), (1, 0), (1, 1), (2, 1), (0, 2), (2, 2)])


def golden_rows(name):
    path = resources.files("fcfsalis") / "fixtures" / "goldens" / name
    with path.open() as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def ex1_graph():
    return CompatibilityGraph(3, 3, EX1_EDGES, ("c1", "c2", "c3"), ("s1", "s2", "s3"))


@pytest.fixture
def ex1_spec(ex1_graph):
    service = {(0, 0): Pareto(2, 3), (1, 0): Exponential(0.125), (1, 1): Exponential(0.2),
               (2, 1): Uniform(2, 6), (0, 2): Pareto(3, 3), (2, 2): Uniform(1, 5)}
    return SystemSpec(ex1_graph, 200.0, ProbabilityVector((0.2, 0.5, 0.3)), service,
                      (Exponential(0.1), Uniform(0, 10), Exponential(0.2)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
