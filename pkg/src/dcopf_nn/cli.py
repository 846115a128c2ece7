"""Command-line entry point: ``dcopf-nn <command> ...`` or ``python -m dcopf_nn``.

Exit codes: 0 ok, 1 usage error, 2 data or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench
from .case_io import CaseParseError, load_case
from .dataset import DatasetError, LabelingError, default_workers, generate, read_dataset, write_dataset
from .mlp import CheckpointError, TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train
from .network import NetworkError, build_model
from .opf import solve_dcopf
from .qp import QpError
from .recovery import ProjectionInfeasible

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("dcopf_nn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; 2 is reserved for data errors here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _model(case: str):
    return build_model(load_case(case))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args) -> int:
    model = _model(args.case)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = args.workers or default_workers()
    tr = generate(model, args.range, args.train, seed=2 * args.seed, workers=workers)
    te = generate(model, args.range, args.test, seed=2 * args.seed + 1, workers=workers, stats=tr.stats)
    manifest = {"case": model.net.name, "range": args.range, "seed": args.seed, "files": {}}
    for name, ds in (("train", tr), ("test", te)):
        path = out / f"{name}.ds"
        digest = write_dataset(ds, path)
        manifest["files"][name] = {"path": path.name, "n_samples": len(ds), "dropped": ds.dropped, "seed": ds.seed, "digest": digest}
        print(f"{name}: {len(ds)} samples -> {path} (sha256 {digest[:16]})")
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _config(args, case: str) -> TrainConfig:
    overrides = {
        k: v
        for k, v in {
            "n_hidden": args.hidden,
            "n_neurons": args.neurons,
            "epochs": args.epochs,
            "batch_size": args.batch,
            "lr": args.lr,
            "w1": args.w1,
            "w2": args.w2,
            "seed": args.seed,
        }.items()
        if v is not None
    }
    try:
        return TrainConfig.for_case(case, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_dataset(ds, model) -> None:
    if ds.loads.shape[1] != model.n_load or ds.alpha.shape[1] != model.n_out:
        raise DatasetError(
            f"dataset has {ds.loads.shape[1]} inputs / {ds.alpha.shape[1]} outputs, "
            f"case {model.net.name} needs {model.n_load} / {model.n_out}"
        )


def cmd_train(args) -> int:
    model = _model(args.case)
    ds = read_dataset(args.dataset)
    _check_dataset(ds, model)
    cfg = _config(args, model.net.name)
    mlp, history = train(ds, model, cfg)
    save_checkpoint(mlp, args.out)
    hist_path = Path(args.history) if args.history else Path(args.out).with_suffix(".loss.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "l_pg", "l_pen", "l_total"])
        for k, h in enumerate(history):
            w.writerow([k, repr(h.l_pg), repr(h.l_pen), repr(h.l_total)])
    print(f"trained {mlp.layer_sizes} for {cfg.epochs} epochs -> {args.out}")
    if history:
        print(f"final loss: l_pg={history[-1].l_pg:.4e} l_pen={history[-1].l_pen:.4e}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _model(args.case)
    mlp = load_checkpoint(args.checkpoint, model)
    ds = read_dataset(args.testset)
    _check_dataset(ds, model)
    report, _ = bench.evaluate(mlp, model, ds, project=not args.no_project)
    print(report.table())
    if args.json:
        _write_json(args.json, report.to_dict())
    if args.hist_csv:
        buses = [g.bus_id for g in model.net.generators]
        Path(args.hist_csv).write_text(bench.histogram_csv(report.histogram, buses))
    return EXIT_OK


def _parse_depths(text: str) -> list[int]:
    items = [s for s in text.replace(",", " ").split() if s]
    if not items:
        raise UsageError("--depths needs at least one value")
    try:
        depths = [int(s) for s in items]
    except ValueError:
        raise UsageError(f"--depths must be integers, got {text!r}") from None
    if any(d < 0 for d in depths):
        raise UsageError("--depths values must be >= 0")
    return depths


def cmd_ablate(args) -> int:
    depths = _parse_depths(args.depths)
    model = _model(args.case)
    ds = read_dataset(args.dataset)
    _check_dataset(ds, model)
    test = read_dataset(args.test)
    _check_dataset(test, model)
    cfg = _config(args, model.net.name)
    rows = bench.ablate(model, ds, test, depths, cfg)
    print(bench.ablation_table(rows))
    if args.json:
        _write_json(args.json, [asdict(r) for r in rows])
    return EXIT_OK


def _read_load_file(path: str) -> np.ndarray:
    text = Path(path).read_text().strip()
    try:
        if text.startswith("["):
            return np.asarray(json.loads(text), dtype=float)
        return np.array([float(s) for s in text.replace(",", " ").split()])
    except ValueError as exc:
        raise DatasetError(f"{path}: cannot read load values: {exc}") from None


def cmd_solve(args) -> int:
    model = _model(args.case)
    if args.default:
        load = model.default_load_mw
    else:
        load = _read_load_file(args.load_file)
        if load.shape != (model.n_load,):
            raise DatasetError(f"expected {model.n_load} load values (one per load bus), got {load.size}")
    disp = solve_dcopf(model, load)
    if args.json:
        print(
            json.dumps(
                {
                    "case": model.net.name,
                    "cost": disp.cost,
                    "p_g_mw": disp.p_g.tolist(),
                    "theta_rad": disp.theta.tolist(),
                    "feasible": disp.feasibility.ok,
                },
                indent=2,
            )
        )
        return EXIT_OK
    print(f"case {model.net.name}: total load {load.sum():.3f} MW, cost {disp.cost:.4f} $/h")
    print(f"{'gen':>4}{'bus':>6}{'P (MW)':>12}{'Pmin':>10}{'Pmax':>10}")
    for k, g in enumerate(model.net.generators):
        print(f"{k:>4}{g.bus_id:>6}{disp.p_g[k]:>12.4f}{g.p_min_mw:>10.2f}{g.p_max_mw:>10.2f}")
    f = disp.feasibility
    print(f"feasible: {f.ok} (bounds {f.max_bound_violation:.1e}, balance {f.balance_mismatch:.1e}, flows {f.max_flow_violation:.1e})")
    return EXIT_OK


def cmd_complexity(args) -> int:
    try:
        rep = bench.complexity_report(args.n_in, args.hidden, args.neurons, args.n_out)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps(rep, indent=2))
    return EXIT_OK


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, help="hidden layers (default: per-case layout)")
    p.add_argument("--neurons", type=int, help="neurons per hidden layer (default: per-case layout)")
    p.add_argument("--epochs", type=int, help="default 200")
    p.add_argument("--batch", type=int, help="mini-batch size, default 64")
    p.add_argument("--lr", type=float, help="learning rate (default: per-case layout)")
    p.add_argument("--w1", type=float, help="output-error weight, default 1")
    p.add_argument("--w2", type=float, help="flow-penalty weight, default 1e-5")
    p.add_argument("--seed", type=int, help="initialization and shuffling seed, default 0")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcopf-nn", description="Learned DC optimal power flow: data, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="sample loads and label them with the reference solver")
    p.add_argument("case", help="shipped case name or path to a .m / .json case")
    p.add_argument("--range", type=float, default=0.1, help="relative load range x, samples in [(1-x)Pd, (1+x)Pd]")
    p.add_argument("--train", type=int, default=1000)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="labelling processes (default: $DCOPF_WORKERS or 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the network on a dataset file")
    p.add_argument("case")
    p.add_argument("dataset")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--history", help="loss-history CSV (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the reference solver")
    p.add_argument("case")
    p.add_argument("checkpoint")
    p.add_argument("testset")
    p.add_argument("--json", help="write the report as JSON")
    p.add_argument("--hist-csv", help="write per-generator error histograms as CSV")
    p.add_argument("--no-project", action="store_true", help="skip projection of infeasible predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare networks of different depth")
    p.add_argument("case")
    p.add_argument("dataset", help="training dataset")
    p.add_argument("--test", required=True, help="test dataset")
    p.add_argument("--depths", default="0,1,3", help="comma-separated hidden-layer counts")
    _add_train_flags(p)
    p.add_argument("--json")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("solve", help="reference DC-OPF solve for one load vector")
    p.add_argument("case")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--load-file", help="MW per load bus, whitespace/comma separated or a JSON list")
    g.add_argument("--default", action="store_true", help="use the case's nominal loads")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("complexity", help="multiply-accumulate count of a layout")
    p.add_argument("--n-in", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--neurons", type=int, required=True)
    p.add_argument("--n-out", type=int, required=True)
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dcopf-nn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QpError, ProjectionInfeasible, TrainingDiverged, LabelingError, np.linalg.LinAlgError) as exc:
        print(f"dcopf-nn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CaseParseError, DatasetError, CheckpointError, NetworkError, OSError, ValueError) as exc:
        print(f"dcopf-nn: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
