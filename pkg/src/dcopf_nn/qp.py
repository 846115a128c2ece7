"""Dense convex QP solver (primal-dual interior point, Mehrotra predictor-corrector).

Problem form::

    minimize    0.5 x'Px + q'x + const
    subject to  lb <= x <= ub
                A_eq x = b_eq
                lo <= G x <= hi

Infinite bounds are allowed.  Internally every finite bound becomes a row of
``C x <= d``; variables with ``lb == ub`` become equality rows.  When the
iterates get close, the solver tries to polish the point by solving the
equality-constrained KKT system on the estimated active set, which usually
drives the KKT residual down to round-off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    pass


class QpInfeasible(QpError):
    """Raised with ``certificate`` describing why the constraints cannot hold."""

    def __init__(self, message: str, certificate: dict | None = None):
        super().__init__(message)
        self.certificate = certificate or {}


class QpUnbounded(QpError):
    pass


class QpMaxIterations(QpError):
    def __init__(self, message: str, last: "QpSolution | None" = None):
        super().__init__(message)
        self.last = last


@dataclass
class QpProblem:
    quad: np.ndarray
    lin: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    eq_mat: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    ineq_mat: np.ndarray | None = None
    ineq_lo: np.ndarray | None = None
    ineq_hi: np.ndarray | None = None
    const: float = 0.0

    def __post_init__(self):
        self.quad = np.atleast_2d(np.asarray(self.quad, dtype=float))
        self.lin = np.asarray(self.lin, dtype=float).ravel()
        n = self.lin.size
        if self.quad.shape != (n, n):
            raise ValueError(f"quad has shape {self.quad.shape}, expected {(n, n)}")
        if not np.allclose(self.quad, self.quad.T, rtol=0, atol=1e-12 * (1 + np.abs(self.quad).max())):
            raise ValueError("quad must be symmetric")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bound vectors must match the variable count")
        self.eq_mat = np.zeros((0, n)) if self.eq_mat is None else np.atleast_2d(np.asarray(self.eq_mat, dtype=float))
        self.eq_rhs = np.zeros(0) if self.eq_rhs is None else np.asarray(self.eq_rhs, dtype=float).ravel()
        if self.eq_mat.shape[1] != n or self.eq_mat.shape[0] != self.eq_rhs.size:
            raise ValueError("equality constraint dimensions are inconsistent")
        self.ineq_mat = np.zeros((0, n)) if self.ineq_mat is None else np.atleast_2d(np.asarray(self.ineq_mat, dtype=float))
        m = self.ineq_mat.shape[0]
        if self.ineq_mat.shape[1] != n:
            raise ValueError("inequality matrix has the wrong column count")
        self.ineq_lo = np.full(m, -np.inf) if self.ineq_lo is None else np.asarray(self.ineq_lo, dtype=float).ravel()
        self.ineq_hi = np.full(m, np.inf) if self.ineq_hi is None else np.asarray(self.ineq_hi, dtype=float).ravel()
        if self.ineq_lo.shape != (m,) or self.ineq_hi.shape != (m,):
            raise ValueError("inequality bounds must match the row count")
        # PSD check: a Cholesky of a slightly shifted matrix must succeed
        shift = 1e-10 * (1.0 + np.abs(self.quad).max())
        try:
            np.linalg.cholesky(self.quad + shift * np.eye(n))
        except np.linalg.LinAlgError:
            raise ValueError("quad is not positive semidefinite") from None

    @property
    def n(self) -> int:
        return self.lin.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)


@dataclass
class QpDuals:
    """Nonnegative multipliers per bound family; ``eq`` is free in sign.

    Sign convention: ``P x + q + A_eq' eq - lower + upper - G' ineq_lo + G' ineq_hi = 0``.
    """

    eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ineq_lo: np.ndarray
    ineq_hi: np.ndarray


@dataclass
class QpSolution:
    x: np.ndarray
    duals: QpDuals
    objective: float
    kkt_residual: float
    iterations: int
    wall_time: float
    polished: bool = False


class _StdForm:
    """``min 0.5x'Px + q'x  s.t.  A x = b,  C x <= d`` plus the maps back."""

    def __init__(self, p: QpProblem):
        n = p.n
        eye = np.eye(n)
        fixed = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.lb == p.ub)
        rows, rhs, tags = [], [], []
        for i in np.flatnonzero(np.isfinite(p.ub) & ~fixed):
            rows.append(eye[i])
            rhs.append(p.ub[i])
            tags.append(("upper", i))
        for i in np.flatnonzero(np.isfinite(p.lb) & ~fixed):
            rows.append(-eye[i])
            rhs.append(-p.lb[i])
            tags.append(("lower", i))
        eq_free = np.isfinite(p.ineq_lo) & np.isfinite(p.ineq_hi) & (p.ineq_lo == p.ineq_hi)
        for k in np.flatnonzero(np.isfinite(p.ineq_hi) & ~eq_free):
            rows.append(p.ineq_mat[k])
            rhs.append(p.ineq_hi[k])
            tags.append(("ineq_hi", k))
        for k in np.flatnonzero(np.isfinite(p.ineq_lo) & ~eq_free):
            rows.append(-p.ineq_mat[k])
            rhs.append(-p.ineq_lo[k])
            tags.append(("ineq_lo", k))
        self.C = np.array(rows).reshape(len(rows), n)
        self.d = np.array(rhs, dtype=float)
        self.tags = tags
        eq_rows = [p.eq_mat]
        eq_rhs = [p.eq_rhs]
        self.eq_tags = [("eq", k) for k in range(p.eq_mat.shape[0])]
        if fixed.any():
            eq_rows.append(eye[fixed])
            eq_rhs.append(p.lb[fixed])
            self.eq_tags += [("fixed", i) for i in np.flatnonzero(fixed)]
        if eq_free.any():
            eq_rows.append(p.ineq_mat[eq_free])
            eq_rhs.append(p.ineq_lo[eq_free])
            self.eq_tags += [("ineq_eq", k) for k in np.flatnonzero(eq_free)]
        self.A = np.vstack(eq_rows)
        self.b = np.concatenate(eq_rhs)
        self.P = p.quad
        self.q = p.lin
        self.problem = p

    def duals(self, y: np.ndarray, z: np.ndarray) -> QpDuals:
        p = self.problem
        out = QpDuals(
            eq=np.zeros(p.eq_mat.shape[0]),
            lower=np.zeros(p.n),
            upper=np.zeros(p.n),
            ineq_lo=np.zeros(p.ineq_mat.shape[0]),
            ineq_hi=np.zeros(p.ineq_mat.shape[0]),
        )
        for (kind, i), val in zip(self.tags, z):
            getattr(out, kind)[i] += val
        for (kind, i), val in zip(self.eq_tags, y):
            if kind == "eq":
                out.eq[i] = val
            elif kind == "fixed":
                # free-sign multiplier of x_i = lb_i, split onto the bound pair
                if val >= 0:
                    out.upper[i] += val
                else:
                    out.lower[i] -= val
            else:
                if val >= 0:
                    out.ineq_hi[i] += val
                else:
                    out.ineq_lo[i] -= val
        return out

    def residual(self, x, y, z) -> float:
        return kkt_parts(self.P, self.q, self.A, self.b, self.C, self.d, x, y, z)["max"]


def kkt_parts(P, q, A, b, C, d, x, y, z) -> dict:
    """Infinity-norm KKT residuals of ``min 0.5x'Px+q'x s.t. Ax=b, Cx<=d``."""
    stat = P @ x + q + A.T @ y + C.T @ z
    slack = d - C @ x
    parts = {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": max(float(np.abs(A @ x - b).max(initial=0.0)), float(np.maximum(-slack, 0).max(initial=0.0))),
        "dual": float(np.maximum(-z, 0).max(initial=0.0)),
        "complementarity": float(np.abs(z * slack).max(initial=0.0)),
    }
    parts["max"] = max(parts.values())
    return parts


def kkt_residual(problem: QpProblem, x: np.ndarray, duals: QpDuals) -> float:
    """KKT residual of ``x`` and ``duals`` evaluated on the problem as posed."""
    p = problem
    grad = p.quad @ x + p.lin + p.eq_mat.T @ duals.eq - duals.lower + duals.upper
    grad += p.ineq_mat.T @ (duals.ineq_hi - duals.ineq_lo)
    gx = p.ineq_mat @ x
    parts = [
        np.abs(grad).max(initial=0.0),
        np.abs(p.eq_mat @ x - p.eq_rhs).max(initial=0.0),
        np.maximum(p.lb - x, 0).max(initial=0.0),
        np.maximum(x - p.ub, 0).max(initial=0.0),
        np.maximum(p.ineq_lo - gx, 0).max(initial=0.0),
        np.maximum(gx - p.ineq_hi, 0).max(initial=0.0),
    ]
    for mult, gap in (
        (duals.lower, x - p.lb),
        (duals.upper, p.ub - x),
        (duals.ineq_lo, gx - p.ineq_lo),
        (duals.ineq_hi, p.ineq_hi - gx),
    ):
        parts.append(np.maximum(-mult, 0).max(initial=0.0))
        active = mult != 0
        if active.any():
            parts.append(np.abs(mult[active] * gap[active]).max())
    return float(max(parts))


def _solve_kkt(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(K, rhs)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _polish(sf: _StdForm, x, z, s, tol):
    n, m = sf.P.shape[0], sf.A.shape[0]
    active = np.flatnonzero(z > s)
    Ca = sf.C[active]
    k = len(active)
    K = np.zeros((n + m + k, n + m + k))
    K[:n, :n] = sf.P
    K[:n, n : n + m] = sf.A.T
    K[:n, n + m :] = Ca.T
    K[n : n + m, :n] = sf.A
    K[n + m :, :n] = Ca
    rhs = np.concatenate([-sf.q, sf.b, sf.d[active]])
    sol = _solve_kkt(K, rhs)
    xp, yp = sol[:n], sol[n : n + m]
    zp = np.zeros_like(z)
    zp[active] = sol[n + m :]
    if np.any(zp < -tol) or np.any(sf.C @ xp > sf.d + tol):
        return None
    zp = np.maximum(zp, 0.0)
    return xp, yp, zp


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """Solve a convex QP; the returned ``kkt_residual`` is at most ``tol``.

    Raises :class:`QpInfeasible`, :class:`QpUnbounded` or :class:`QpMaxIterations`.
    """
    t0 = time.perf_counter()
    p = problem
    bad_box = np.flatnonzero(p.lb > p.ub)
    if bad_box.size:
        raise QpInfeasible("variable lower bound exceeds upper bound", {"variables": bad_box.tolist()})
    bad_rows = np.flatnonzero(p.ineq_lo > p.ineq_hi)
    if bad_rows.size:
        raise QpInfeasible("inequality lower bound exceeds upper bound", {"rows": bad_rows.tolist()})

    sf = _StdForm(p)
    P, q, A, b, C, d = sf.P, sf.q, sf.A, sf.b, sf.C, sf.d
    n, m, r = P.shape[0], A.shape[0], C.shape[0]

    def finish(x, y, z, iters, polished):
        duals = sf.duals(y, z)
        return QpSolution(
            x=x,
            duals=duals,
            objective=p.objective(x),
            kkt_residual=kkt_residual(p, x, duals),
            iterations=iters,
            wall_time=time.perf_counter() - t0,
            polished=polished,
        )

    K = np.zeros((n + m, n + m))
    K[n:, :n] = A
    K[:n, n:] = A.T

    if r == 0:
        K[:n, :n] = P
        sol = _solve_kkt(K, np.concatenate([-q, b]))
        x, y = sol[:n], sol[n:]
        if np.abs(A @ x - b).max(initial=0.0) > tol * (1 + np.abs(b).max(initial=0.0)):
            raise QpInfeasible("equality constraints are inconsistent", {"residual": float(np.abs(A @ x - b).max())})
        out = finish(x, y, np.zeros(0), 1, False)
        if np.abs(P @ x + q + A.T @ y).max(initial=0.0) > max(tol, 1e-6):
            raise QpUnbounded("objective is unbounded below on the feasible set")
        return out

    # initial point: least-squares fit of the inequality rows
    K[:n, :n] = P + C.T @ C
    sol = _solve_kkt(K, np.concatenate([-q + C.T @ d, b]))
    x, y = sol[:n], sol[n:]
    s = d - C @ x
    shift = -s.min()
    s = s + max(shift, 0.0) + 1.0
    z = np.ones(r)
    scale = 1.0 + max(np.abs(q).max(initial=0.0), np.abs(P).max(initial=0.0))
    best = None

    for it in range(1, max_iter + 1):
        rd = P @ x + q + A.T @ y + C.T @ z
        rp = A @ x - b
        ri = C @ x + s - d
        mu = s @ z / r
        internal = max(np.abs(rd).max(), np.abs(rp).max(initial=0.0), np.abs(ri).max(), (s * z).max())

        if internal < 1e-5 * scale:
            polished = _polish(sf, x, z, s, tol)
            if polished is not None:
                cand = finish(*polished, it, True)
                if cand.kkt_residual <= tol:
                    return cand
        if internal <= tol:
            cand = finish(x, y, z, it, False)
            if cand.kkt_residual <= tol:
                return cand
            best = cand

        if np.abs(x).max() > 1e12:
            raise QpUnbounded("iterates diverge; objective is unbounded below")
        if np.abs(z).max(initial=0.0) > 1e12 * scale or np.abs(y).max(initial=0.0) > 1e12 * scale:
            raise QpInfeasible(
                "multipliers diverge; constraints are infeasible",
                {"primal_residual": float(max(np.abs(rp).max(initial=0.0), np.abs(ri).max())), "iterations": it},
            )

        w = z / s
        K[:n, :n] = P + (C.T * w) @ C

        def step(rc):
            rhs_x = -rd + C.T @ ((rc - z * ri) / s)
            sol = _solve_kkt(K, np.concatenate([rhs_x, -rp]))
            dx, dy = sol[:n], sol[n:]
            ds = -ri - C @ dx
            dz = -(rc + z * ds) / s
            return dx, dy, ds, dz

        # predictor (affine scaling)
        dx, dy, ds, dz = step(s * z)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = (s + a_aff * ds) @ (z + a_aff * dz) / r
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dy, ds, dz = step(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    if best is None:
        best = finish(x, y, z, max_iter, False)
    if np.abs(z).max() > 1e8 * scale:
        raise QpInfeasible("no convergence and large multipliers; constraints look infeasible", {"iterations": max_iter})
    raise QpMaxIterations(f"no convergence within {max_iter} iterations (kkt residual {best.kkt_residual:.3e})", best)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))
