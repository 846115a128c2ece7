"""Load sampling, reference labelling and the on-disk dataset format.

File layout (all integers little-endian)::

    8 bytes   magic  b"DCOPFDS1"
    8 bytes   uint64 length of the JSON header
    header    UTF-8 JSON: schema, case, sampling parameters, stats, column table, digest
    payload   float64 '<f8' column blocks in C order, offsets relative to payload start

``digest`` is the SHA-256 of the payload bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import DcModel
from .opf import solve_dcopf
from .qp import QpError
from .recovery import pg_to_alpha

logger = logging.getLogger(__name__)

MAGIC = b"DCOPFDS1"
SCHEMA_VERSION = 1
MAX_DROP_RATE = 0.01
WORKERS_ENV = "DCOPF_WORKERS"
_COLUMNS = ("loads", "alpha", "cost", "p_g")


class DatasetError(ValueError):
    pass


class LabelingError(RuntimeError):
    def __init__(self, message: str, dropped: int, total: int, reasons: list[str]):
        super().__init__(message)
        self.dropped = dropped
        self.total = total
        self.reasons = reasons


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, loads: np.ndarray) -> "Normalizer":
        loads = np.asarray(loads, dtype=float)
        std = loads.std(axis=0)
        dead = np.flatnonzero(~(std > 0))
        if dead.size:
            raise DatasetError(f"input dimension(s) {dead.tolist()} are constant; cannot normalize")
        return cls(mean=loads.mean(axis=0), std=std)

    def normalize(self, loads):
        return (np.asarray(loads, dtype=float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class Dataset:
    case: str
    loads: np.ndarray  # MW, samples x load buses
    alpha: np.ndarray  # samples x free generators
    cost: np.ndarray  # $/h
    p_g: np.ndarray  # MW, samples x generators (reference dispatch)
    fraction: float
    seed: int
    dropped: int = 0
    stats: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.loads.shape[0]

    def payload(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, c), dtype="<f8").tobytes() for c in _COLUMNS)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.payload()).hexdigest()

    def normalized_inputs(self, stats: Normalizer | None = None) -> np.ndarray:
        stats = stats or self.stats
        if stats is None:
            raise DatasetError("dataset has no normalization statistics")
        return stats.normalize(self.loads)


def sample_loads(model: DcModel, fraction: float, n: int, seed: int) -> np.ndarray:
    """Uniform samples in ``[(1-x) Pd, (1+x) Pd]`` per load bus, MW."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"sample range fraction must be in [0, 1), got {fraction}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(n, model.n_load))
    return model.default_load_mw * (1.0 + fraction * u)


def _label_one(model: DcModel, load):
    try:
        disp = solve_dcopf(model, load)
    except (QpError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return disp.p_g, disp.cost


def _label_chunk(args):
    model, loads = args
    return [_label_one(model, load) for load in loads]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def label(model: DcModel, loads: np.ndarray, workers: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Reference-solve every load vector.

    Returns ``(loads_kept, alpha, cost, p_g, dropped)``.  Failed solves are
    dropped; more than 1% failures raises :class:`LabelingError`.
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(loads) > 1:
        chunks = np.array_split(loads, min(workers * 4, len(loads)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_label_chunk, [(model, c) for c in chunks]) for r in part]
    else:
        results = [_label_one(model, load) for load in loads]
    keep = [k for k, (p, _) in enumerate(results) if p is not None]
    reasons = [msg for p, msg in results if p is None]
    dropped = len(loads) - len(keep)
    if dropped > MAX_DROP_RATE * len(loads):
        raise LabelingError(f"{dropped} of {len(loads)} reference solves failed", dropped, len(loads), reasons[:20])
    if dropped:
        logger.warning("dropped %d of %d samples whose reference solve failed", dropped, len(loads))
    p_g = np.array([results[k][0] for k in keep]).reshape(len(keep), model.n_gen)
    cost = np.array([results[k][1] for k in keep], dtype=float)
    alpha = pg_to_alpha(p_g / model.base_mva, model).reshape(len(keep), model.n_out)
    return loads[keep], alpha, cost, p_g, dropped


def generate(model: DcModel, fraction: float, n: int, seed: int, workers: int | None = None, stats: Normalizer | None = None) -> Dataset:
    """Sample, label and attach normalization statistics.

    Statistics are fitted on this set unless ``stats`` is given (test splits
    reuse the training statistics).  A constant input dimension leaves the
    statistics unset.
    """
    loads = sample_loads(model, fraction, n, seed)
    loads, alpha, cost, p_g, dropped = label(model, loads, workers)
    if stats is None:
        try:
            stats = Normalizer.fit(loads)
        except DatasetError:
            stats = None
    return Dataset(
        case=model.net.name,
        loads=loads,
        alpha=alpha,
        cost=cost,
        p_g=p_g,
        fraction=fraction,
        seed=seed,
        dropped=dropped,
        stats=stats,
    )


def _hex_list(arr) -> list[str]:
    return [float(v).hex() for v in np.asarray(arr, dtype=float).ravel()]


def _from_hex(items) -> np.ndarray:
    return np.array([float.fromhex(s) for s in items], dtype=float)


def write_dataset(ds: Dataset, path: str | Path) -> str:
    payload = ds.payload()
    digest = hashlib.sha256(payload).hexdigest()
    columns, offset = [], 0
    for name in _COLUMNS:
        arr = getattr(ds, name)
        columns.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "<f8"})
        offset += arr.size * 8
    header = {
        "schema_version": SCHEMA_VERSION,
        "case": ds.case,
        "fraction": ds.fraction,
        "seed": ds.seed,
        "n_samples": len(ds),
        "dropped": ds.dropped,
        "stats": None if ds.stats is None else {"mean": _hex_list(ds.stats.mean), "std": _hex_list(ds.stats.std)},
        "columns": columns,
        "meta": ds.meta,
        "digest": digest,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(payload)
    return digest


def read_dataset(path: str | Path, verify: bool = True) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DatasetError(f"{path}: not a dataset file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + hlen])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: corrupt header: {exc}") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema version {header.get('schema_version')}")
    payload = data[16 + hlen :]
    if verify and hashlib.sha256(payload).hexdigest() != header["digest"]:
        raise DatasetError(f"{path}: payload digest mismatch")
    cols = {}
    for col in header["columns"]:
        count = int(np.prod(col["shape"]))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=col["offset"])
        cols[col["name"]] = arr.reshape(col["shape"]).astype(float)
    stats = header["stats"]
    return Dataset(
        case=header["case"],
        fraction=header["fraction"],
        seed=header["seed"],
        dropped=header["dropped"],
        stats=None if stats is None else Normalizer(_from_hex(stats["mean"]), _from_hex(stats["std"])),
        meta=header.get("meta", {}),
        **cols,
    )
