"""Evaluation harness: feasibility rate, cost gap, timing, error histograms, depth ablation."""

from __future__ import annotations

import csv
import gc
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .mlp import MlpModel, TrainConfig, check_compatible, complexity_terms, forward, train
from .network import DcModel
from .opf import solve_dcopf
from .recovery import project_feasible, recover_dispatch

HIST_EDGES = np.arange(-10.0, 11.0, 1.0)  # percent
HIST_MIN_REF_MW = 1e-3


@dataclass
class EvalReport:
    case: str
    n_test: int
    feasible_pct_pre_projection: float
    feasible_pct_post_projection: float
    n_projected: int
    avg_cost_dnn: float  # after projection of infeasible predictions
    avg_cost_dnn_pre_projection: float
    avg_cost_ref: float
    rel_cost_gap_pct: float  # gap of the averages
    mean_rel_cost_gap_pct: float  # mean of per-sample gaps
    avg_time_dnn_ms: float
    avg_time_ref_ms: float
    speedup: float
    timer_overhead_ms: float
    histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("case", self.case),
            ("test samples", f"{self.n_test}"),
            ("feasible before projection (%)", f"{self.feasible_pct_pre_projection:.2f}"),
            ("feasible after projection (%)", f"{self.feasible_pct_post_projection:.2f}"),
            ("average cost, DNN ($/h)", f"{self.avg_cost_dnn:.2f}"),
            ("average cost, reference ($/h)", f"{self.avg_cost_ref:.2f}"),
            ("cost gap of averages (%)", f"{self.rel_cost_gap_pct:.4f}"),
            ("mean per-sample cost gap (%)", f"{self.mean_rel_cost_gap_pct:.4f}"),
            ("time, DNN + recovery (ms)", f"{self.avg_time_dnn_ms:.4f}"),
            ("time, reference solve (ms)", f"{self.avg_time_ref_ms:.4f}"),
            ("speedup", f"x{self.speedup:.1f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def timer_overhead(reps: int = 2000) -> float:
    """Mean cost in seconds of an empty ``perf_counter`` pair."""
    best = []
    for _ in range(reps):
        t0 = time.perf_counter()
        best.append(time.perf_counter() - t0)
    return float(np.mean(best))


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def _dnn_solve(mlp: MlpModel, load, model: DcModel):
    alpha = forward(mlp, mlp.stats.normalize(load))
    return recover_dispatch(alpha, load, model)


def error_histogram(p_dnn: np.ndarray, p_ref: np.ndarray, edges=HIST_EDGES) -> dict:
    """Per-generator relative error (%) counts: underflow, 1%-wide bins, overflow.

    Samples whose reference output is below ``HIST_MIN_REF_MW`` are skipped.
    """
    counts, skipped = [], []
    for g in range(p_ref.shape[1]):
        ok = np.abs(p_ref[:, g]) >= HIST_MIN_REF_MW
        err = 100.0 * (p_dnn[ok, g] - p_ref[ok, g]) / p_ref[ok, g]
        inner, _ = np.histogram(np.clip(err, edges[0], edges[-1]), bins=edges)
        under = int(np.sum(err < edges[0]))
        over = int(np.sum(err > edges[-1]))
        # clipped values landed in the outer bins; move them to the overflow slots
        inner[0] -= under
        inner[-1] -= over
        counts.append([under, *inner.tolist(), over])
        skipped.append(int(np.sum(~ok)))
    return {"edges_pct": edges.tolist(), "counts": counts, "skipped": skipped}


def histogram_csv(hist: dict, gen_buses=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["generator", "bus", "bin_lo_pct", "bin_hi_pct", "count"])
    edges = hist["edges_pct"]
    lows = [float("-inf"), *edges[:-1], edges[-1]]
    highs = [edges[0], *edges[1:], float("inf")]
    for g, row in enumerate(hist["counts"]):
        bus = "" if gen_buses is None else gen_buses[g]
        for lo, hi, c in zip(lows, highs, row):
            w.writerow([g, bus, lo, hi, c])
    return buf.getvalue()


def evaluate(mlp: MlpModel, model: DcModel, test: Dataset, project: bool = True) -> tuple[EvalReport, dict]:
    """Run DNN + recovery and the reference solver on every test load.

    Returns the report and per-sample arrays (costs, dispatches, times).
    """
    check_compatible(mlp, model)
    n = len(test)
    # warm caches so the first timed sample is not an outlier
    _dnn_solve(mlp, test.loads[0], model)
    solve_dcopf(model, test.loads[0])
    overhead = timer_overhead()

    t_dnn = np.empty(n)
    t_ref = np.empty(n)
    pre_ok = np.zeros(n, dtype=bool)
    post_ok = np.zeros(n, dtype=bool)
    cost_pre = np.empty(n)
    cost_final = np.empty(n)
    cost_ref = np.empty(n)
    p_dnn = np.empty((n, model.n_gen))
    p_ref = np.empty((n, model.n_gen))
    n_proj = 0
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for k in range(n):
            load = test.loads[k]
            disp, t_dnn[k] = _timed(_dnn_solve, mlp, load, model)
            ref, t_ref[k] = _timed(solve_dcopf, model, load)
            pre_ok[k] = disp.feasibility.ok
            cost_pre[k] = disp.cost
            p_dnn[k] = disp.p_g
            final = disp
            if not pre_ok[k] and project:
                final = project_feasible(disp, model)
                n_proj += 1
            post_ok[k] = final.feasibility.ok
            cost_final[k] = final.cost
            cost_ref[k] = ref.cost
            p_ref[k] = ref.p_g
    finally:
        if gc_was:
            gc.enable()

    mean_dnn, mean_ref = float(t_dnn.mean()), float(t_ref.mean())
    if overhead > 0.01 * mean_dnn:
        mean_dnn -= overhead
    if overhead > 0.01 * mean_ref:
        mean_ref -= overhead
    avg_dnn, avg_ref = float(cost_final.mean()), float(cost_ref.mean())
    report = EvalReport(
        case=model.net.name,
        n_test=n,
        feasible_pct_pre_projection=100.0 * pre_ok.mean(),
        feasible_pct_post_projection=100.0 * post_ok.mean(),
        n_projected=n_proj,
        avg_cost_dnn=avg_dnn,
        avg_cost_dnn_pre_projection=float(cost_pre.mean()),
        avg_cost_ref=avg_ref,
        rel_cost_gap_pct=100.0 * (avg_dnn - avg_ref) / avg_ref,
        mean_rel_cost_gap_pct=float(100.0 * np.mean((cost_final - cost_ref) / cost_ref)),
        avg_time_dnn_ms=1e3 * mean_dnn,
        avg_time_ref_ms=1e3 * mean_ref,
        speedup=mean_ref / mean_dnn,
        timer_overhead_ms=1e3 * overhead,
        histogram=error_histogram(p_dnn, p_ref),
    )
    samples = {
        "feasible_pre": pre_ok,
        "feasible_post": post_ok,
        "cost_dnn": cost_final,
        "cost_dnn_pre": cost_pre,
        "cost_ref": cost_ref,
        "p_dnn": p_dnn,
        "p_ref": p_ref,
        "time_dnn": t_dnn,
        "time_ref": t_ref,
    }
    return report, samples


@dataclass
class AblationRow:
    variant: str
    n_hidden: int
    n_neurons: int
    avg_cost: float
    delta_cost: float
    delta_pct: float
    feasible_pct_pre_projection: float
    avg_time_ms: float
    complexity_macs: int


def ablate(model: DcModel, train_set: Dataset, test_set: Dataset, depths, base: TrainConfig) -> list[AblationRow]:
    """Train one variant per hidden-layer count and evaluate each on ``test_set``."""
    depths = list(depths)
    if not depths:
        raise ValueError("need at least one depth")
    rows = []
    for k, depth in enumerate(depths, start=1):
        cfg = TrainConfig(**{**asdict(base), "n_hidden": int(depth)})
        mlp, _ = train(train_set, model, cfg)
        rep, _ = evaluate(mlp, model, test_set)
        sizes = mlp.layer_sizes
        macs = int(sum(a * b for a, b in zip(sizes[:-1], sizes[1:])))
        rows.append(
            AblationRow(
                variant=f"V{k}",
                n_hidden=int(depth),
                n_neurons=cfg.n_neurons,
                avg_cost=rep.avg_cost_dnn,
                delta_cost=rep.avg_cost_dnn - rep.avg_cost_ref,
                delta_pct=rep.rel_cost_gap_pct,
                feasible_pct_pre_projection=rep.feasible_pct_pre_projection,
                avg_time_ms=rep.avg_time_dnn_ms,
                complexity_macs=macs,
            )
        )
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    head = f"{'variant':<8}{'hidden':>7}{'avg cost ($/h)':>16}{'d cost ($/h)/(%)':>22}{'feasible %':>12}{'time (ms)':>11}"
    lines = [head, "-" * len(head)]
    for r in rows:
        delta = f"{r.delta_cost:+.1f}/{r.delta_pct:+.2f}"
        lines.append(
            f"{r.variant:<8}{r.n_hidden:>7}{r.avg_cost:>16.2f}{delta:>22}{r.feasible_pct_pre_projection:>12.1f}{r.avg_time_ms:>11.4f}"
        )
    return "\n".join(lines)


def complexity_report(n_in: int, n_hidden: int, n_neurons: int, n_out: int) -> dict:
    first, middle, last, total = complexity_terms(n_in, n_hidden, n_neurons, n_out)
    return {
        "n_in": n_in,
        "n_hidden": n_hidden,
        "n_neurons": n_neurons,
        "n_out": n_out,
        "input_term": first,
        "hidden_term": middle,
        "output_term": last,
        "total": total,
    }
