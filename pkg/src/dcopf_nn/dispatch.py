"""Dispatch records and the feasibility check shared by every producer of one."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .network import DcModel

FEAS_TOL = 1e-6  # pu


class Provenance(str, enum.Enum):
    REFERENCE = "reference"
    DNN = "dnn"
    DNN_PROJECTED = "dnn_projected"


@dataclass(frozen=True)
class Feasibility:
    bounds_ok: bool
    balance_ok: bool
    flows_ok: bool
    max_bound_violation: float  # pu
    balance_mismatch: float  # pu
    max_flow_violation: float  # normalized flow beyond +/-1

    @property
    def ok(self) -> bool:
        return self.bounds_ok and self.balance_ok and self.flows_ok


@dataclass(frozen=True)
class Dispatch:
    p_g: np.ndarray  # MW per generator
    theta: np.ndarray  # rad per bus, slack = 0
    load_mw: np.ndarray  # MW per load bus
    cost: float  # $/h
    feasibility: Feasibility
    provenance: Provenance


def _verdict(p, theta, total_load_pu: float, model: DcModel, tol: float) -> Feasibility:
    bound_viol = max(float(np.maximum(p - model.p_max, model.p_min - p).max()), 0.0)
    mismatch = abs(float(p.sum()) - total_load_pu)
    flow_viol = 0.0
    if model.n_limited:
        flow_viol = max(float(np.abs(model.limited_flow_matrix @ theta).max()) - 1.0, 0.0)
    return Feasibility(
        bounds_ok=bound_viol <= tol,
        balance_ok=mismatch <= tol,
        flows_ok=flow_viol <= tol,
        max_bound_violation=bound_viol,
        balance_mismatch=mismatch,
        max_flow_violation=flow_viol,
    )


def check_feasibility(p_g_mw, theta, load_mw, model: DcModel, tol: float = FEAS_TOL) -> Feasibility:
    """Evaluate bounds, total balance and limited-branch flows of a candidate."""
    p = np.asarray(p_g_mw, dtype=float) / model.base_mva
    total = float(np.sum(load_mw)) / model.base_mva
    return _verdict(p, np.asarray(theta, dtype=float), total, model, tol)


def make_dispatch(p_pu, load_mw, model: DcModel, provenance: Provenance, tol: float = FEAS_TOL) -> Dispatch:
    """Build a dispatch from per-unit generator outputs: angles, cost, verdict."""
    p_pu = np.asarray(p_pu, dtype=float)
    load_mw = np.asarray(load_mw, dtype=float)
    t_g, t_d = model.angle_maps
    theta = t_g @ p_pu + t_d @ load_mw
    return Dispatch(
        p_g=p_pu * model.base_mva,
        theta=theta,
        load_mw=load_mw,
        cost=float(model.cost(p_pu)),
        feasibility=_verdict(p_pu, theta, float(load_mw.sum()) / model.base_mva, model, tol),
        provenance=provenance,
    )
