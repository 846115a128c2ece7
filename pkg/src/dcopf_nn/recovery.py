"""From predicted scaling factors to a full dispatch, plus feasibility projection."""

from __future__ import annotations

import numpy as np

from .dispatch import FEAS_TOL, Dispatch, Provenance, check_feasibility, make_dispatch
from .network import DcModel
from .opf import check_capacity, feasible_set
from .qp import QpInfeasible, QpProblem, solve_qp

PROJECTION_TOL = 1e-6
PROJECTION_BACKENDS = ("ipm",)  # a first-order dual proximal-gradient backend would slot in here


class ProjectionInfeasible(RuntimeError):
    def __init__(self, message: str, certificate: dict):
        super().__init__(message)
        self.certificate = certificate


def alpha_to_pg(alpha, load_mw, model: DcModel) -> np.ndarray:
    """Per-unit generator outputs from scaling factors of the free generators.

    Works on a single vector or a batch (samples on the first axis).  Fixed
    generators sit at ``p_min``; the slack generator takes whatever the rest
    leaves of the total load.
    """
    g, p0, e = model.scaling_map
    total = np.sum(load_mw, axis=-1) / model.base_mva
    return np.asarray(alpha, dtype=float) @ g.T + p0 + np.multiply.outer(total, e)


def pg_to_alpha(p_pu, model: DcModel) -> np.ndarray:
    """Invert the linear scaling for the free generators, clipped to [0, 1]."""
    p = np.asarray(p_pu, dtype=float)[..., model.free_gens]
    lo = model.p_min[model.free_gens]
    span = model.p_max[model.free_gens] - lo
    return np.clip((p - lo) / span, 0.0, 1.0)


def recover_dispatch(alpha_hat, load_mw, model: DcModel) -> Dispatch:
    return make_dispatch(alpha_to_pg(alpha_hat, load_mw, model), load_mw, model, Provenance.DNN)


def normalized_flows(p_pu, load_mw, model: DcModel) -> np.ndarray:
    """Limited-branch flows ``(A theta)_k`` for a batch of per-unit dispatches."""
    inj = np.asarray(p_pu) @ model.gen_incidence.T - model.bus_load_pu(load_mw)
    return inj[..., model.nonslack] @ model.flow_sensitivity[model.limited].T


def project_feasible(dispatch: Dispatch, model: DcModel, tol: float = PROJECTION_TOL, backend: str = "ipm") -> Dispatch:
    """Closest dispatch (Euclidean, per-unit) satisfying bounds, balance and flow limits."""
    if backend not in PROJECTION_BACKENDS:
        raise NotImplementedError(f"projection backend {backend!r} is not available (have {PROJECTION_BACKENDS})")
    fs = feasible_set(model, dispatch.load_mw)
    try:
        check_capacity(model, fs)
        target = np.asarray(dispatch.p_g) / model.base_mva
        qp = QpProblem(
            quad=2.0 * np.eye(model.n_gen),
            lin=-2.0 * target,
            const=float(target @ target),
            lb=fs.lb,
            ub=fs.ub,
            eq_mat=fs.balance_row[None, :],
            eq_rhs=np.array([fs.total_load]),
            ineq_mat=fs.flow_rows,
            ineq_lo=fs.flow_lo,
            ineq_hi=fs.flow_hi,
        )
        sol = solve_qp(qp, tol=tol)
    except QpInfeasible as exc:
        raise ProjectionInfeasible(f"dispatch polytope is empty: {exc}", exc.certificate) from exc
    out = make_dispatch(sol.x, dispatch.load_mw, model, Provenance.DNN_PROJECTED)
    return out


__all__ = [
    "FEAS_TOL",
    "ProjectionInfeasible",
    "alpha_to_pg",
    "check_feasibility",
    "normalized_flows",
    "pg_to_alpha",
    "project_feasible",
    "recover_dispatch",
]
