"""Power network description and the linear-algebra objects of the DC model.

All matrices held by :class:`DcModel` are per-unit.  Loads and generator limits
are divided by ``base_mva`` when the model is built; costs stay in $/h with the
per-unit conversion folded into the coefficients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dpotrs as _potrs

# RATE_A == 0 in a case file means "unlimited"; such branches get this limit and
# are left out of the penalty / feasibility flow set.
UNLIMITED_FLOW_PU = 1e4
RANK_RTOL = 1e-9


class NetworkError(ValueError):
    """Structurally invalid network (bad references, disconnected graph, ...)."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    GENERATOR = "generator"
    LOAD_ONLY = "load-only"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_load_mw: float = 0.0


@dataclass(frozen=True)
class CostPoly:
    """Quadratic cost ``c2*P**2 + c1*P + c0`` with ``P`` in MW, result in $/h."""

    c2: float
    c1: float
    c0: float = 0.0

    def __call__(self, p_mw):
        return self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min_mw: float
    p_max_mw: float
    cost: CostPoly


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance_pu: float
    flow_limit_mw: float | None = None  # None: unlimited

    @property
    def limited(self) -> bool:
        return self.flow_limit_mw is not None


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))
        validate_network(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """External bus id -> 0-based internal position."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def slack_index(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @property
    def load_bus_indices(self) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses) if b.base_load_mw != 0.0], dtype=int)


def validate_network(net: Network) -> None:
    if not (np.isfinite(net.base_mva) and net.base_mva > 0):
        raise NetworkError(f"base_mva must be positive, got {net.base_mva}")
    if not net.buses:
        raise NetworkError("network has no buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate bus ids")
    slack = [b.id for b in net.buses if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise NetworkError(f"expected exactly one slack bus, found {len(slack)}")
    for b in net.buses:
        if not np.isfinite(b.base_load_mw):
            raise NetworkError(f"bus {b.id}: load must be finite")
    known = set(ids)
    for k, g in enumerate(net.generators):
        if g.bus_id not in known:
            raise NetworkError(f"generator {k} refers to unknown bus {g.bus_id}")
        if not g.p_min_mw <= g.p_max_mw:
            raise NetworkError(f"generator {k}: p_min {g.p_min_mw} > p_max {g.p_max_mw}")
        if g.cost.c2 < 0:
            raise NetworkError(f"generator {k}: negative quadratic cost coefficient")
    if not any(g.bus_id == slack[0] for g in net.generators):
        raise NetworkError(f"slack bus {slack[0]} has no generator")
    for k, br in enumerate(net.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise NetworkError(f"branch {k} refers to an unknown bus")
        if br.from_bus == br.to_bus:
            raise NetworkError(f"branch {k} is a self-loop at bus {br.from_bus}")
        if not br.reactance_pu > 0:
            raise NetworkError(f"branch {k}: reactance must be > 0, got {br.reactance_pu}")
        if br.flow_limit_mw is not None and not br.flow_limit_mw > 0:
            raise NetworkError(f"branch {k}: flow limit must be > 0, got {br.flow_limit_mw}")
    if not is_connected(net):
        raise NetworkError("branch graph is not connected")


def is_connected(net: Network) -> bool:
    idx = {b.id: k for k, b in enumerate(net.buses)}
    adj: list[list[int]] = [[] for _ in net.buses]
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(net.buses)


def incidence_matrix(net: Network) -> np.ndarray:
    """N_bran x N_bus matrix with +1 at the from bus and -1 at the to bus."""
    idx = net.bus_index
    inc = np.zeros((len(net.branches), net.n_bus))
    for k, br in enumerate(net.branches):
        inc[k, idx[br.from_bus]] = 1.0
        inc[k, idx[br.to_bus]] = -1.0
    return inc


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0


def incidence_rank(net: Network) -> int:
    return numerical_rank(incidence_matrix(net))


def branch_admittances(net: Network) -> np.ndarray:
    return np.array([1.0 / br.reactance_pu for br in net.branches])


def build_admittance(net: Network) -> np.ndarray:
    """Bus admittance matrix B of the lossless DC model.

    Parallel branches add their admittances.
    """
    idx = net.bus_index
    b = np.zeros((net.n_bus, net.n_bus))
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / br.reactance_pu
        b[i, i] += y
        b[j, j] += y
        b[i, j] -= y
        b[j, i] -= y
    return b


def reduce_admittance(b_full: np.ndarray, slack_index: int):
    """Drop the slack row/column and factorize the result.

    Returns ``(b_reduced, cho)`` where ``cho`` is a ``scipy.linalg.cho_factor``
    tuple.  The reduced matrix of a connected network is symmetric positive
    definite, so a Cholesky failure means the network invariants were broken.
    """
    keep = np.delete(np.arange(b_full.shape[0]), slack_index)
    b_red = b_full[np.ix_(keep, keep)]
    try:
        cho = sla.cho_factor(b_red, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("reduced admittance matrix is singular; network must be disconnected") from exc
    return b_red, cho


def build_flow_matrix(net: Network) -> np.ndarray:
    """Rows map bus angles to branch flows normalized by their limits.

    Row k for branch (i, j) holds ``+1/(P_max*x)`` at i and ``-1/(P_max*x)`` at j,
    per-unit, so the flow limit reads ``-1 <= (A @ theta)_k <= 1``.
    """
    idx = net.bus_index
    a = np.zeros((len(net.branches), net.n_bus))
    for k, br in enumerate(net.branches):
        limit_pu = UNLIMITED_FLOW_PU if br.flow_limit_mw is None else br.flow_limit_mw / net.base_mva
        coef = 1.0 / (limit_pu * br.reactance_pu)
        a[k, idx[br.from_bus]] = coef
        a[k, idx[br.to_bus]] = -coef
    return a


@dataclass(frozen=True, eq=False)
class DcModel:
    """Derived per-unit matrices and bound vectors for one network.

    Immutable once built; the Cholesky factor of ``b_reduced`` is computed once
    and shared by the solver, the training loss and the recovery step.
    """

    net: Network
    b_full: np.ndarray
    b_reduced: np.ndarray
    b_reduced_cho: tuple
    flow_matrix: np.ndarray
    limited: np.ndarray  # bool mask over branches
    slack_index: int
    slack_gen: int
    gen_bus: np.ndarray  # internal bus index per generator
    p_min: np.ndarray  # pu
    p_max: np.ndarray  # pu
    cost_c2: np.ndarray
    cost_c1: np.ndarray
    cost_c0: np.ndarray
    default_load: np.ndarray  # pu, per bus
    load_buses: np.ndarray  # internal indices of buses with nonzero default load
    free_gens: np.ndarray  # non-slack generators with p_max > p_min
    nonslack: np.ndarray = field(repr=False, default=None)
    flow_sensitivity: np.ndarray = field(repr=False, default=None)

    @property
    def base_mva(self) -> float:
        return self.net.base_mva

    @property
    def n_bus(self) -> int:
        return self.b_full.shape[0]

    @property
    def n_gen(self) -> int:
        return len(self.p_min)

    @property
    def n_load(self) -> int:
        return len(self.load_buses)

    @property
    def n_out(self) -> int:
        return len(self.free_gens)

    @cached_property
    def free_p_min(self) -> np.ndarray:
        return self.p_min[self.free_gens]

    @cached_property
    def free_span(self) -> np.ndarray:
        return self.p_max[self.free_gens] - self.p_min[self.free_gens]

    @cached_property
    def limited_flow_matrix(self) -> np.ndarray:
        return self.flow_matrix[self.limited]

    @cached_property
    def n_limited(self) -> int:
        return int(self.limited.sum())

    @cached_property
    def gen_incidence(self) -> np.ndarray:
        cg = np.zeros((self.n_bus, self.n_gen))
        cg[self.gen_bus, np.arange(self.n_gen)] = 1.0
        cg.flags.writeable = False
        return cg

    @cached_property
    def scaling_map(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(G, p0, e)`` with ``p_g = G @ alpha + p0 + e * total_load_pu``.

        Free generators follow their scaling factor, the rest sit at ``p_min``
        and the slack unit (``e``) closes the balance.
        """
        g = np.zeros((self.n_gen, self.n_out))
        g[self.free_gens, np.arange(self.n_out)] = self.free_span
        g[self.slack_gen] = -self.free_span
        p0 = self.p_min.copy()
        p0[self.slack_gen] = 0.0
        p0[self.slack_gen] = -p0.sum()
        e = np.zeros(self.n_gen)
        e[self.slack_gen] = 1.0
        for arr in (g, p0, e):
            arr.flags.writeable = False
        return g, p0, e

    @cached_property
    def angle_maps(self) -> tuple[np.ndarray, np.ndarray]:
        """``(T_g, T_d)`` with ``theta = T_g @ p_g_pu + T_d @ load_mw`` (slack row zero).

        Both are ``B~^-1`` applied once to the generator and load incidence, so
        per-sample angle recovery is two small dense products.
        """
        factor = self.b_reduced_cho
        t_g = np.zeros((self.n_bus, self.n_gen))
        t_g[self.nonslack] = sla.cho_solve(factor, self.gen_incidence[self.nonslack])
        cd = np.zeros((self.n_bus, self.n_load))
        cd[self.load_buses, np.arange(self.n_load)] = -1.0 / self.base_mva
        t_d = np.zeros((self.n_bus, self.n_load))
        t_d[self.nonslack] = sla.cho_solve(factor, cd[self.nonslack])
        t_g.flags.writeable = False
        t_d.flags.writeable = False
        return t_g, t_d

    def bus_load_pu(self, load_mw) -> np.ndarray:
        """Per-bus per-unit load from a per-load-bus MW vector (or batch)."""
        load_mw = np.asarray(load_mw, dtype=float)
        out = np.zeros(load_mw.shape[:-1] + (self.n_bus,))
        out[..., self.load_buses] = load_mw
        out /= self.base_mva
        return out

    @property
    def default_load_mw(self) -> np.ndarray:
        return self.default_load[self.load_buses] * self.base_mva

    def solve_angles(self, injection_pu: np.ndarray) -> np.ndarray:
        """Angles (slack = 0) from per-bus net injections ``P_G - P_D``.

        Accepts a single vector or a batch with buses on the last axis.
        """
        inj = np.asarray(injection_pu, dtype=float)
        red = inj[..., self.nonslack]
        factor, lower = self.b_reduced_cho
        theta_red, info = _potrs(factor, red.T, lower=lower)
        if info != 0:
            raise RuntimeError(f"potrs failed with info={info}")
        theta_red = theta_red.T
        theta = np.zeros(inj.shape)
        theta[..., self.nonslack] = theta_red
        return theta

    def cost(self, p_pu) -> np.ndarray:
        """Total cost in $/h for per-unit generator outputs (last axis)."""
        p_mw = np.asarray(p_pu) * self.base_mva
        return ((self.cost_c2 * p_mw + self.cost_c1) * p_mw + self.cost_c0).sum(axis=-1)


def build_model(net: Network) -> DcModel:
    b_full = build_admittance(net)
    slack = net.slack_index
    b_red, cho = reduce_admittance(b_full, slack)
    idx = net.bus_index
    gen_bus = np.array([idx[g.bus_id] for g in net.generators], dtype=int)
    slack_gen = int(np.flatnonzero(gen_bus == slack)[0])
    base = net.base_mva
    p_min = np.array([g.p_min_mw for g in net.generators]) / base
    p_max = np.array([g.p_max_mw for g in net.generators]) / base
    free = np.array(
        [k for k in range(len(gen_bus)) if k != slack_gen and p_max[k] > p_min[k]], dtype=int
    )
    flow = build_flow_matrix(net)
    limited = np.array([br.limited for br in net.branches], dtype=bool)
    nonslack = np.delete(np.arange(net.n_bus), slack)
    # d(normalized flow)/d(injection at non-slack buses): A[:, ns] @ inv(B~)
    sens = sla.cho_solve(cho, flow[:, nonslack].T).T
    return DcModel(
        net=net,
        b_full=b_full,
        b_reduced=b_red,
        b_reduced_cho=cho,
        flow_matrix=flow,
        limited=limited,
        slack_index=slack,
        slack_gen=slack_gen,
        gen_bus=gen_bus,
        p_min=p_min,
        p_max=p_max,
        cost_c2=np.array([g.cost.c2 for g in net.generators]),
        cost_c1=np.array([g.cost.c1 for g in net.generators]),
        cost_c0=np.array([g.cost.c0 for g in net.generators]),
        default_load=np.array([b.base_load_mw for b in net.buses]) / base,
        load_buses=net.load_bus_indices,
        free_gens=free,
        nonslack=nonslack,
        flow_sensitivity=sens,
    )
