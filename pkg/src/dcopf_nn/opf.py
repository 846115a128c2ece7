"""DC optimal power flow as a QP over generator outputs.

Angles are eliminated through the reduced admittance matrix, so the variables
are the per-unit generator outputs only.  Flow limits become two-sided rows
on those outputs and the bus balance collapses to one system-wide equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispatch import Dispatch, Provenance, make_dispatch
from .network import DcModel
from .qp import QpInfeasible, QpProblem, QpSolution, solve_qp

LABEL_TOL = 1e-8


@dataclass(frozen=True)
class FeasibleSet:
    """Per-unit constraint data of the dispatch polytope for one load vector."""

    lb: np.ndarray
    ub: np.ndarray
    balance_row: np.ndarray
    total_load: float
    flow_rows: np.ndarray  # limited branches only
    flow_lo: np.ndarray
    flow_hi: np.ndarray
    branch_ids: np.ndarray = field(default=None)


def feasible_set(model: DcModel, load_mw=None) -> FeasibleSet:
    load_mw = model.default_load_mw if load_mw is None else np.asarray(load_mw, dtype=float)
    pd = model.bus_load_pu(load_mw)
    lim = np.flatnonzero(model.limited)
    sens = model.flow_sensitivity[lim]  # n_lim x (n_bus - 1)
    rows = sens @ model.gen_incidence[model.nonslack]
    offset = sens @ pd[model.nonslack]
    return FeasibleSet(
        lb=model.p_min.copy(),
        ub=model.p_max.copy(),
        balance_row=np.ones(model.n_gen),
        total_load=float(pd.sum()),
        flow_rows=rows,
        flow_lo=-1.0 + offset,
        flow_hi=1.0 + offset,
        branch_ids=lim,
    )


def check_capacity(model: DcModel, fs: FeasibleSet) -> None:
    if fs.ub.sum() < fs.total_load or fs.lb.sum() > fs.total_load:
        raise QpInfeasible(
            "total load outside aggregate generator capability",
            {"total_load_pu": fs.total_load, "sum_p_min_pu": float(fs.lb.sum()), "sum_p_max_pu": float(fs.ub.sum())},
        )


def formulate_dcopf(model: DcModel, load_mw=None) -> QpProblem:
    """QP of the DC-OPF for ``load_mw`` (MW per load bus, default load if None)."""
    fs = feasible_set(model, load_mw)
    check_capacity(model, fs)
    base = model.base_mva
    return QpProblem(
        quad=np.diag(2.0 * model.cost_c2 * base**2),
        lin=model.cost_c1 * base,
        const=float(model.cost_c0.sum()),
        lb=fs.lb,
        ub=fs.ub,
        eq_mat=fs.balance_row[None, :],
        eq_rhs=np.array([fs.total_load]),
        ineq_mat=fs.flow_rows,
        ineq_lo=fs.flow_lo,
        ineq_hi=fs.flow_hi,
    )


def solve_dcopf(model: DcModel, load_mw=None, tol: float = LABEL_TOL) -> Dispatch:
    disp, _ = solve_dcopf_full(model, load_mw, tol)
    return disp


def solve_dcopf_full(model: DcModel, load_mw=None, tol: float = LABEL_TOL) -> tuple[Dispatch, QpSolution]:
    load_mw = model.default_load_mw if load_mw is None else np.asarray(load_mw, dtype=float)
    sol = solve_qp(formulate_dcopf(model, load_mw), tol=tol)
    return make_dispatch(sol.x, load_mw, model, Provenance.REFERENCE), sol
