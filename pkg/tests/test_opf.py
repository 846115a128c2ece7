from __future__ import annotations

import numpy as np
import pytest
from conftest import three_bus, two_bus
from oracles import dcopf_oracle, grid_dcopf, slsqp_dcopf

from dcopf_nn.case_io import load_case
from dcopf_nn.dispatch import Provenance
from dcopf_nn.network import Branch, Network, build_model
from dcopf_nn.opf import formulate_dcopf, solve_dcopf, solve_dcopf_full
from dcopf_nn.qp import QpInfeasible


def test_fixtures_match_oracle(fixture_net, rng):
    m = build_model(fixture_net)
    loads = [None] + [m.default_load_mw * rng.uniform(0.8, 1.2, m.n_load) for _ in range(20)]
    for load in loads:
        disp, sol = solve_dcopf_full(m, load)
        p_ref, c_ref = dcopf_oracle(fixture_net, load)
        assert np.abs(disp.p_g - p_ref).max() <= 1e-6
        assert disp.cost == pytest.approx(c_ref, rel=1e-10)
        assert sol.kkt_residual <= 1e-8
        assert disp.feasibility.ok
        assert disp.provenance is Provenance.REFERENCE
        assert disp.theta[m.slack_index] == 0.0


def test_two_bus_congested_against_grid():
    net = two_bus()
    disp = solve_dcopf(build_model(net))
    p_grid, c_grid = grid_dcopf(net)
    # the cheap unit is capped by the 100 MW line
    assert np.allclose(disp.p_g, [100.0, 50.0], atol=1e-7)
    assert np.abs(disp.p_g - p_grid).max() <= 0.5
    assert disp.cost <= c_grid + 1e-9


def test_two_bus_uncongested_closed_form():
    # equal marginal cost: 0.02 P1 + 10 = 0.04 P2 + 30, P1 + P2 = 150
    disp = solve_dcopf(build_model(two_bus(limit=None)))
    p2 = (0.02 * 150 - 20) / 0.06
    assert np.allclose(disp.p_g, [150 - p2, p2], atol=1e-7) if p2 > 0 else np.allclose(disp.p_g, [150, 0], atol=1e-7)


def test_cost_monotone_in_limit():
    costs = [solve_dcopf(build_model(three_bus(limit_13=lim))).cost for lim in (200.0, 80.0, 50.0, 40.0, 30.0)]
    assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:]))
    assert costs[-1] > costs[0]


def test_capacity_infeasible():
    m = build_model(three_bus())
    with pytest.raises(QpInfeasible) as info:
        solve_dcopf(m, np.array([300.0, 200.0]))
    assert "total_load_pu" in info.value.certificate


def test_flow_infeasible():
    base = three_bus()
    net = Network(base.base_mva, base.buses, base.generators, [Branch(b.from_bus, b.to_bus, b.reactance_pu, 20.0) for b in base.branches])
    with pytest.raises(QpInfeasible):
        solve_dcopf(build_model(net))


def test_formulation_shapes(case30_model):
    qp = formulate_dcopf(case30_model)
    assert qp.n == case30_model.n_gen
    assert qp.ineq_mat.shape == (case30_model.n_limited, case30_model.n_gen)
    assert qp.eq_rhs[0] == pytest.approx(case30_model.default_load_mw.sum() / 100.0)


def test_case30_default_cost_cross_checked(case30_model):
    disp, sol = solve_dcopf_full(case30_model)
    p_ref, c_ref = slsqp_dcopf(case30_model.net)
    assert disp.cost == pytest.approx(c_ref, rel=1e-6)
    assert np.abs(disp.p_g - p_ref).max() <= 1e-3
    assert disp.cost == pytest.approx(565.2, abs=0.05)
    assert sol.kkt_residual <= 1e-8


@pytest.mark.xfail(strict=True, reason="published case30 cost corresponds to ~3% higher load than the shipped data; see decisions ledger")
def test_case30_published_cost(case30_model):
    assert solve_dcopf(case30_model).cost == pytest.approx(588.0, rel=0.01)


@pytest.mark.parametrize("case", ["case57", "case118"])
def test_larger_cases_cross_checked(case):
    net = load_case(case)
    disp, sol = solve_dcopf_full(build_model(net))
    _, c_ref = slsqp_dcopf(net)
    assert disp.cost == pytest.approx(c_ref, rel=1e-6)
    assert sol.kkt_residual <= 1e-8
    assert disp.feasibility.ok


def test_case30_random_loads_kkt(case30_model, rng):
    for _ in range(50):
        load = case30_model.default_load_mw * rng.uniform(0.9, 1.1, case30_model.n_load)
        disp, sol = solve_dcopf_full(case30_model, load)
        assert sol.kkt_residual <= 1e-8
        assert disp.feasibility.ok
