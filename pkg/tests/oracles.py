"""Independent reference computations for the test suite.

Nothing here imports the solver, model builder or recovery code of the
package: matrices are rebuilt from the raw network records with plain numpy,
and QPs are solved by enumerating active sets.
"""

from __future__ import annotations

import itertools

import numpy as np


def laplacian(net) -> np.ndarray:
    idx = {b.id: k for k, b in enumerate(net.buses)}
    lap = np.zeros((len(net.buses), len(net.buses)))
    for br in net.branches:
        i, j, y = idx[br.from_bus], idx[br.to_bus], 1.0 / br.reactance_pu
        lap[i, i] += y
        lap[j, j] += y
        lap[i, j] -= y
        lap[j, i] -= y
    return lap


def ptdf(net) -> np.ndarray:
    """Branch flow (pu) per unit injection at each bus, withdrawn at the slack."""
    idx = {b.id: k for k, b in enumerate(net.buses)}
    slack = next(k for k, b in enumerate(net.buses) if b.kind.value == "slack")
    lap = laplacian(net)
    keep = [k for k in range(len(net.buses)) if k != slack]
    x = np.zeros_like(lap)
    x[np.ix_(keep, keep)] = np.linalg.inv(lap[np.ix_(keep, keep)])
    out = np.zeros((len(net.branches), len(net.buses)))
    for r, br in enumerate(net.branches):
        out[r] = (x[idx[br.from_bus]] - x[idx[br.to_bus]]) / br.reactance_pu
    return out


def dcopf_data(net, load_mw=None):
    """Per-unit DC-OPF data: (P, q, const, a_eq, b_eq, G, h) with G x <= h, x = P_G in pu."""
    base = net.base_mva
    idx = {b.id: k for k, b in enumerate(net.buses)}
    nb, ng = len(net.buses), len(net.generators)
    load_buses = [k for k, b in enumerate(net.buses) if b.base_load_mw != 0]
    pd = np.zeros(nb)
    if load_mw is None:
        for k in load_buses:
            pd[k] = net.buses[k].base_load_mw / base
    else:
        pd[load_buses] = np.asarray(load_mw) / base
    cg = np.zeros((nb, ng))
    for g, gen in enumerate(net.generators):
        cg[idx[gen.bus_id], g] = 1.0
    c2 = np.array([g.cost.c2 for g in net.generators])
    c1 = np.array([g.cost.c1 for g in net.generators])
    c0 = np.array([g.cost.c0 for g in net.generators])
    quad = np.diag(2.0 * c2 * base**2)
    lin = c1 * base
    lo = np.array([g.p_min_mw for g in net.generators]) / base
    hi = np.array([g.p_max_mw for g in net.generators]) / base
    rows, rhs = [np.eye(ng), -np.eye(ng)], [hi, -lo]
    sens = ptdf(net)
    for r, br in enumerate(net.branches):
        if br.flow_limit_mw is None:
            continue
        lim = br.flow_limit_mw / base
        f_g, f_0 = sens[r] @ cg, -sens[r] @ pd
        rows += [f_g[None], -f_g[None]]
        rhs += [np.array([lim - f_0]), np.array([lim + f_0])]
    g_mat = np.vstack(rows)
    h = np.concatenate(rhs)
    return quad, lin, float(c0.sum()), np.ones((1, ng)), np.array([pd.sum()]), g_mat, h


def enumerate_qp(quad, lin, a_eq, b_eq, g_mat, h, tol=1e-9):
    """Minimize 0.5 x'Px + q'x over {A x = b, G x <= h} by active-set enumeration.

    Valid for strictly convex objectives: the optimum minimizes the objective on
    the affine hull of its active face, so it is among the feasible candidates.
    Returns ``None`` when no feasible candidate exists.
    """
    n = quad.shape[0]
    m = g_mat.shape[0]
    best, best_val = None, np.inf
    max_active = n - a_eq.shape[0]
    for size in range(max_active + 1):
        for act in itertools.combinations(range(m), size):
            e_mat = np.vstack([a_eq, g_mat[list(act)]]) if act else a_eq
            e_rhs = np.concatenate([b_eq, h[list(act)]]) if act else b_eq
            k = e_mat.shape[0]
            kkt = np.block([[quad, e_mat.T], [e_mat, np.zeros((k, k))]])
            rhs = np.concatenate([-lin, e_rhs])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            x = sol[:n]
            if np.abs(e_mat @ x - e_rhs).max() > tol or np.any(g_mat @ x - h > tol):
                continue
            val = 0.5 * x @ quad @ x + lin @ x
            if val < best_val - 1e-12:
                best, best_val = x, val
    return best


def dcopf_oracle(net, load_mw=None) -> tuple[np.ndarray, float]:
    """Optimal P_G (MW) and cost ($/h) by enumeration."""
    quad, lin, const, a, b, g, h = dcopf_data(net, load_mw)
    x = enumerate_qp(quad, lin, a, b, g, h)
    if x is None:
        raise ValueError("oracle found no feasible dispatch")
    return x * net.base_mva, float(0.5 * x @ quad @ x + lin @ x + const)


def projection_oracle(net, target_mw, load_mw=None) -> np.ndarray:
    """Euclidean (per-unit) projection of ``target_mw`` onto the dispatch polytope, MW."""
    _, _, _, a, b, g, h = dcopf_data(net, load_mw)
    t = np.asarray(target_mw) / net.base_mva
    n = len(t)
    x = enumerate_qp(2.0 * np.eye(n), -2.0 * t, a, b, g, h)
    return x * net.base_mva


def grid_dcopf(net, load_mw=None, steps=401):
    """Coarse brute force over the first free generator (two-generator cases only)."""
    quad, lin, const, a, b, g, h = dcopf_data(net, load_mw)
    if quad.shape[0] != 2:
        raise ValueError("grid search supports two generators")
    lo, hi = -h[2], h[0]
    best, best_val = None, np.inf
    for x0 in np.linspace(lo, hi, steps):
        x = np.array([x0, b[0] - x0])
        if np.any(g @ x - h > 1e-9):
            continue
        val = 0.5 * x @ quad @ x + lin @ x + const
        if val < best_val:
            best, best_val = x, val
    return best * net.base_mva, best_val


def slsqp_dcopf(net, load_mw=None) -> tuple[np.ndarray, float]:
    """General-purpose NLP solve of the same problem (for cases too big to enumerate)."""
    from scipy.optimize import minimize

    quad, lin, const, a, b, g, h = dcopf_data(net, load_mw)
    n = quad.shape[0]
    x0 = np.full(n, b[0] / n)
    scale = 1.0 / max(np.abs(lin).max(), np.abs(quad).max(), 1.0)
    res = minimize(
        lambda x: scale * (0.5 * x @ quad @ x + lin @ x),
        x0,
        jac=lambda x: scale * (quad @ x + lin),
        constraints=[
            {"type": "eq", "fun": lambda x: a @ x - b, "jac": lambda x: a},
            {"type": "ineq", "fun": lambda x: h - g @ x, "jac": lambda x: -g},
        ],
        method="SLSQP",
        options={"ftol": 1e-12, "maxiter": 500},
    )
    if not res.success:
        raise ValueError(f"SLSQP failed: {res.message}")
    x = res.x
    return x * net.base_mva, float(0.5 * x @ quad @ x + lin @ x + const)
