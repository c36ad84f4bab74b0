from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from yanasim.compiler import map_graph
from yanasim.netgraph import Graph, LayerSpec, quantize_graph
from yanasim.numerics import MEMBRANE_FMT, WEIGHT_FMT

FIXTURES = Path(__file__).parent / "fixtures"

# lines collected by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def chain_graph(w_in=1.0, w_out=1.0, tau=2, threshold=0.4, tau_out=2) -> Graph:
    """1-1-1 net used throughout the hand-evaluated examples."""
    return Graph(
        1,
        LayerSpec("lif", 1, Fraction(tau), threshold),
        LayerSpec("li", 1, Fraction(tau_out)),
        np.array([[w_in]]),
        np.array([[w_out]]),
    )


def compile_graph(g: Graph, n_max: int = 8, lut_frac: int = 16, dedup: bool = False):
    return map_graph(quantize_graph(g, WEIGHT_FMT, MEMBRANE_FMT, n_max, lut_frac), dedup=dedup)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
