from __future__ import annotations

import numpy as np
import pytest
from conftest import FIXTURES, three_bus, two_bus
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import laplacian

from dcopf_nn.case_io import SHIPPED_CASES, load_case
from dcopf_nn.network import (
    Branch,
    Bus,
    BusKind,
    CostPoly,
    Generator,
    Network,
    NetworkError,
    branch_admittances,
    build_admittance,
    build_flow_matrix,
    build_model,
    incidence_matrix,
    incidence_rank,
    reduce_admittance,
)


def random_connected(rng: np.random.Generator, n_bus: int, extra: int, parallel: bool = True) -> Network:
    """Random spanning tree plus ``extra`` edges (parallel duplicates allowed)."""
    order = rng.permutation(n_bus) + 1
    edges = [(int(order[k]), int(order[rng.integers(0, k)])) for k in range(1, n_bus)]
    for _ in range(extra):
        i, j = rng.choice(n_bus, size=2, replace=False) + 1
        edges.append((int(i), int(j)))
    if parallel and n_bus > 1:
        edges.append(edges[0])
    slack = int(rng.integers(1, n_bus + 1))
    buses = [Bus(b, BusKind.SLACK if b == slack else BusKind.LOAD_ONLY, float(rng.uniform(0, 50))) for b in range(1, n_bus + 1)]
    gens = [Generator(slack, 0.0, 1000.0, CostPoly(0.01, 10.0))]
    branches = [Branch(i, j, float(rng.uniform(0.01, 0.5)), float(rng.uniform(20, 200))) for i, j in edges]
    return Network(100.0, buses, gens, branches, name=f"rand{n_bus}")


def check_structure(net: Network) -> None:
    inc = incidence_matrix(net)
    assert incidence_rank(net) == net.n_bus - 1
    b = build_admittance(net)
    assert np.abs(b - inc.T @ np.diag(branch_admittances(net)) @ inc).max() <= 1e-9 * max(1.0, np.abs(b).max())
    b_red, cho = reduce_admittance(b, net.slack_index)
    assert np.all(np.linalg.eigvalsh(b_red) > 0)
    assert cho[0].shape == b_red.shape


@pytest.mark.parametrize("case", SHIPPED_CASES)
def test_shipped_cases_structure(case):
    check_structure(load_case(case))


def test_random_connected_graphs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 31))
        check_structure(random_connected(rng, n, int(rng.integers(0, n))))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 20), st.integers(0, 2**32 - 1))
def test_structure_property(n_bus, extra, seed):
    check_structure(random_connected(np.random.default_rng(seed), n_bus, extra))


def test_admittance_matches_independent_laplacian(fixture_net):
    assert np.allclose(build_admittance(fixture_net), laplacian(fixture_net), atol=1e-12)


def test_parallel_branches_add():
    net = Network(
        100.0,
        [Bus(1, BusKind.SLACK), Bus(2, BusKind.LOAD_ONLY, 10.0)],
        [Generator(1, 0, 100, CostPoly(0, 1))],
        [Branch(1, 2, 0.2), Branch(1, 2, 0.2)],
    )
    assert build_admittance(net)[0, 0] == pytest.approx(10.0)


def test_flow_matrix_two_bus():
    a = build_flow_matrix(two_bus())
    # 100 MW limit = 1 pu, x = 0.1
    assert np.allclose(a, [[10.0, -10.0]])


def test_unlimited_branch_excluded():
    m = build_model(FIXTURES["four_bus"]())
    assert m.limited.tolist() == [True, True, False, True, True]
    assert m.n_limited == 4


def test_angles_consistent(fixture_net, rng):
    m = build_model(fixture_net)
    for _ in range(10):
        p = rng.uniform(m.p_min, m.p_max)
        load = m.default_load_mw * rng.uniform(0.9, 1.1, m.n_load)
        inj = m.gen_incidence @ p - m.bus_load_pu(load)
        inj[m.slack_index] -= inj.sum()  # balanced injections
        theta = m.solve_angles(inj)
        assert theta[m.slack_index] == 0.0
        assert np.allclose(m.b_full @ theta, inj, atol=1e-10)
        t_g, t_d = m.angle_maps
        p_bal = p.copy()
        p_bal[m.slack_gen] -= (m.gen_incidence @ p - m.bus_load_pu(load)).sum()
        assert np.allclose(t_g @ p_bal + t_d @ load, m.solve_angles(m.gen_incidence @ p_bal - m.bus_load_pu(load)), atol=1e-12)


def test_model_per_unit_and_counts():
    m = build_model(three_bus())
    assert np.allclose(m.p_max, [1.5, 1.5, 0.6])
    assert np.allclose(m.p_min, [0.0, 0.1, 0.0])
    assert m.n_load == 2 and m.n_out == 2 and m.slack_gen == 0
    assert np.allclose(m.default_load_mw, [30.0, 120.0])
    assert m.cost(np.array([0.5, 0.5, 0.0])) == pytest.approx(0.01 * 2500 + 500 + 0.02 * 2500 + 1000 + 5)


def test_cost_poly_callable():
    assert CostPoly(0.1, 2.0, 3.0)(10.0) == pytest.approx(33.0)


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda b, g, r: ([Bus(1, BusKind.GENERATOR), *b[1:]], g, r), "slack"),
        (lambda b, g, r: ([*b[:-1], Bus(3, BusKind.SLACK)], g, r), "slack"),
        (lambda b, g, r: (b, g, [*r[:-1], Branch(1, 3, 0.0, 50.0)]), "reactance"),
        (lambda b, g, r: (b, g, [*r[:-1], Branch(1, 3, -0.1, 50.0)]), "reactance"),
        (lambda b, g, r: (b, g, [*r[:-1], Branch(1, 9, 0.1, 50.0)]), "unknown bus"),
        (lambda b, g, r: (b, [*g, Generator(7, 0, 1, CostPoly(0, 1))], r), "unknown bus"),
        (lambda b, g, r: (b, g, [r[0]]), "not connected"),
        (lambda b, g, r: (b, g[1:], r), "no generator"),
        (lambda b, g, r: (b, [Generator(1, 5, 1, CostPoly(0, 1)), *g[1:]], r), "p_min"),
        (lambda b, g, r: (b, g, [*r[:-1], Branch(1, 3, 0.1, 0.0)]), "flow limit"),
    ],
)
def test_invalid_networks(mutate, msg):
    ref = three_bus()
    buses, gens, branches = mutate(list(ref.buses), list(ref.generators), list(ref.branches))
    with pytest.raises(NetworkError, match=msg):
        Network(100.0, buses, gens, branches)


def test_reduce_singular_raises():
    b = np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(RuntimeError, match="singular"):
        reduce_admittance(b, 0)
