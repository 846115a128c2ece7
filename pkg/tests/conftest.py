from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from dcopf_nn.network import Branch, Bus, BusKind, CostPoly, Generator, Network, build_model

sys.path.insert(0, str(Path(__file__).parent))

S, G, L = BusKind.SLACK, BusKind.GENERATOR, BusKind.LOAD_ONLY


def two_bus(limit: float | None = 100.0) -> Network:
    return Network(
        100.0,
        [Bus(1, S, 0.0), Bus(2, G, 150.0)],
        [Generator(1, 0.0, 200.0, CostPoly(0.01, 10.0)), Generator(2, 0.0, 200.0, CostPoly(0.02, 30.0))],
        [Branch(1, 2, 0.1, limit)],
        name="two_bus",
    )


def three_bus(limit_13: float | None = 50.0) -> Network:
    return Network(
        100.0,
        [Bus(1, S, 0.0), Bus(2, G, 30.0), Bus(3, G, 120.0)],
        [
            Generator(1, 0.0, 150.0, CostPoly(0.01, 10.0)),
            Generator(2, 10.0, 150.0, CostPoly(0.02, 20.0, 5.0)),
            Generator(3, 0.0, 60.0, CostPoly(0.03, 40.0)),
        ],
        [Branch(1, 2, 0.1, 80.0), Branch(2, 3, 0.1, 80.0), Branch(1, 3, 0.1, limit_13)],
        name="three_bus",
    )


def four_bus() -> Network:
    return Network(
        100.0,
        [Bus(1, S, 0.0), Bus(2, G, 60.0), Bus(3, L, 110.0), Bus(4, G, 40.0)],
        [
            Generator(1, 0.0, 120.0, CostPoly(0.005, 12.0)),
            Generator(2, 0.0, 100.0, CostPoly(0.01, 15.0)),
            Generator(4, 5.0, 80.0, CostPoly(0.02, 18.0)),
        ],
        [
            Branch(1, 2, 0.08, 70.0),
            Branch(2, 3, 0.12, 60.0),
            Branch(3, 4, 0.1, None),
            Branch(4, 1, 0.15, 60.0),
            Branch(1, 3, 0.2, 45.0),
        ],
        name="four_bus",
    )


FIXTURES = {"two_bus": two_bus, "three_bus": three_bus, "four_bus": four_bus}


@pytest.fixture(params=sorted(FIXTURES))
def fixture_net(request) -> Network:
    return FIXTURES[request.param]()


@pytest.fixture(scope="session")
def case30_model():
    from dcopf_nn.case_io import load_case

    return build_model(load_case("case30"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
