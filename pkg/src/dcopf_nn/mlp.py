"""Feed-forward network mapping normalized loads to generator scaling factors.

Hidden layers use ReLU, the output layer a sigmoid.  Training minimizes
``w1 * mse(alpha) + w2 * mean_k(flow_k**2 - 1)`` with plain mini-batch SGD.
The flow term is differentiated through the scaling, slack balancing and angle
solve; every step of that chain is linear in the predicted factors, so it
collapses to a fixed matrix per network.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import Dataset, Normalizer
from .network import DcModel
from .recovery import alpha_to_pg, normalized_flows

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# hidden layers / neurons / learning rate per IEEE case
CASE_LAYOUTS = {
    "case30": (2, 16, 1e-3),
    "case57": (4, 32, 1e-3),
    "case118": (6, 64, 1e-3),
    "case300": (6, 128, 1e-3),
}


class CheckpointError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    w1: float = 1.0
    w2: float = 1e-5
    seed: int = 0
    n_hidden: int = 2
    n_neurons: int = 16

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.n_hidden < 0 or self.n_neurons < 1:
            raise ValueError(f"invalid training configuration: {self}")
        if self.lr < 0 or self.w1 < 0 or self.w2 < 0:
            raise ValueError("lr, w1 and w2 must be non-negative")

    @classmethod
    def for_case(cls, case: str, **overrides) -> "TrainConfig":
        n_hid, n_neu, lr = CASE_LAYOUTS.get(case, (2, 16, 1e-3))
        return cls(**{"n_hidden": n_hid, "n_neurons": n_neu, "lr": lr, **overrides})


@dataclass(frozen=True)
class LossBreakdown:
    l_pg: float
    l_pen: float
    l_total: float


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (fan_out, fan_in)
    biases: list[np.ndarray]
    activations: list[str]
    stats: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_in] + [w.shape[0] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations), self.stats, dict(self.meta)
        )

    def predict(self, load_mw) -> np.ndarray:
        """Scaling factors for raw MW loads (normalized with the stored stats)."""
        return forward(self, self.stats.normalize(load_mw))


def init_model(n_in: int, n_out: int, n_hidden: int, n_neurons: int, rng: np.random.Generator) -> MlpModel:
    """He-uniform for ReLU layers, Xavier-uniform for the sigmoid output; zero biases."""
    sizes = [n_in] + [n_neurons] * n_hidden + [n_out]
    weights, biases, acts = [], [], []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        last = k == len(sizes) - 2
        bound = np.sqrt(6.0 / (fan_in + fan_out)) if last else np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("sigmoid" if last else "relu")
    return MlpModel(weights, biases, acts)


def _forward_cache(model: MlpModel, x: np.ndarray):
    hs = [x]
    h = x
    for w, b, act in zip(model.weights, model.biases, model.activations):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if act == "relu" else expit(z)
        hs.append(h)
    return hs


def forward(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.n_in}")
    h = x
    for w, b, act in zip(model.weights, model.biases, model.activations):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if act == "relu" else expit(z)
    return h


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class FlowMap:
    """Limited-branch normalized flows as ``alpha @ gain.T + offset(load)``."""

    gain: np.ndarray  # n_limited x n_out
    model: DcModel

    @classmethod
    def build(cls, model: DcModel) -> "FlowMap":
        sens = model.flow_sensitivity[model.limited]
        cg = model.gen_incidence[model.nonslack][:, model.free_gens]
        span = model.p_max[model.free_gens] - model.p_min[model.free_gens]
        return cls(gain=(sens @ cg) * span, model=model)

    def offset(self, load_mw) -> np.ndarray:
        """Flows with every free generator at its minimum."""
        m = self.model
        return normalized_flows(alpha_to_pg(np.zeros(np.shape(load_mw)[:-1] + (m.n_out,)), load_mw, m), load_mw, m)


def penalty(x):
    return x * x - 1.0


def loss(alpha_hat, alpha_star, load_mw, model: DcModel, w1: float = 1.0, w2: float = 1e-5) -> LossBreakdown:
    """Batch-mean loss evaluated through the full recovery chain.

    Flows come from scaling -> slack balance -> angle solve -> flow matrix,
    without the precomputed linear map used during training.
    """
    alpha_hat = np.atleast_2d(alpha_hat)
    alpha_star = np.atleast_2d(alpha_star)
    load_mw = np.atleast_2d(load_mw)
    l_pg = float(np.mean((alpha_hat - alpha_star) ** 2)) if alpha_hat.size else 0.0
    if model.n_limited:
        p = alpha_to_pg(alpha_hat, load_mw, model)
        theta = model.solve_angles(p @ model.gen_incidence.T - model.bus_load_pu(load_mw))
        flows = theta @ model.flow_matrix[model.limited].T
        l_pen = float(np.mean(penalty(flows)))
    else:
        l_pen = 0.0
    return LossBreakdown(l_pg, l_pen, w1 * l_pg + w2 * l_pen)


def loss_and_grads(
    mlp: MlpModel,
    x: np.ndarray,
    alpha_star: np.ndarray,
    flow_offset: np.ndarray,
    flow_map: FlowMap,
    w1: float,
    w2: float,
) -> tuple[LossBreakdown, list[np.ndarray], list[np.ndarray]]:
    """Batch-mean loss and exact gradients for every weight and bias."""
    hs = _forward_cache(mlp, x)
    alpha_hat = hs[-1]
    nb, n_out = alpha_hat.shape
    diff = alpha_hat - alpha_star
    l_pg = float(np.mean(diff**2)) if diff.size else 0.0
    d_alpha = w1 * 2.0 * diff / (nb * max(n_out, 1))
    n_a = flow_map.gain.shape[0]
    if n_a:
        flows = alpha_hat @ flow_map.gain.T + flow_offset
        l_pen = float(np.mean(penalty(flows)))
        d_alpha = d_alpha + w2 * (2.0 / (nb * n_a)) * flows @ flow_map.gain
    else:
        l_pen = 0.0
    delta = d_alpha * alpha_hat * (1.0 - alpha_hat)
    gw = [None] * len(mlp.weights)
    gb = [None] * len(mlp.weights)
    for k in range(len(mlp.weights) - 1, -1, -1):
        gw[k] = delta.T @ hs[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ mlp.weights[k]) * (hs[k] > 0)
    return LossBreakdown(l_pg, l_pen, w1 * l_pg + w2 * l_pen), gw, gb


def backward(mlp: MlpModel, x, alpha_star, load_mw, model: DcModel, w1: float = 1.0, w2: float = 1e-5):
    """Gradients ``(grad_weights, grad_biases)`` of the batch-mean total loss."""
    fm = FlowMap.build(model)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, gw, gb = loss_and_grads(mlp, x, np.atleast_2d(alpha_star), fm.offset(np.atleast_2d(load_mw)), fm, w1, w2)
    return gw, gb


def sgd_step(mlp: MlpModel, gw, gb, lr: float) -> None:
    for w, g in zip(mlp.weights, gw):
        w -= lr * g
    for b, g in zip(mlp.biases, gb):
        b -= lr * g


def train(dataset: Dataset, model: DcModel, config: TrainConfig, init: MlpModel | None = None):
    """Mini-batch SGD; returns the trained network and per-epoch mean losses."""
    if dataset.stats is None:
        raise ValueError("dataset needs normalization statistics before training")
    if dataset.loads.shape[1] != model.n_load or dataset.alpha.shape[1] != model.n_out:
        raise ValueError("dataset dimensions do not match the network")
    rng = np.random.default_rng(config.seed)
    mlp = init.copy() if init is not None else init_model(model.n_load, model.n_out, config.n_hidden, config.n_neurons, rng)
    mlp.stats = dataset.stats
    mlp.meta.update(case=model.net.name, dataset_digest=dataset.digest, config=asdict(config))
    x_all = dataset.normalized_inputs()
    fm = FlowMap.build(model)
    offset_all = fm.offset(dataset.loads)
    n = len(dataset)
    history: list[LossBreakdown] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            lb, gw, gb = loss_and_grads(mlp, x_all[idx], dataset.alpha[idx], offset_all[idx], fm, config.w1, config.w2)
            if not np.isfinite(lb.l_total):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", history)
            sums += len(idx) * np.array([lb.l_pg, lb.l_pen, lb.l_total])
            sgd_step(mlp, gw, gb, config.lr)
        history.append(LossBreakdown(*map(float, sums / n)))
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            logger.info("epoch %d: l_pg=%.3e l_pen=%.3e", epoch, history[-1].l_pg, history[-1].l_pen)
    return mlp, history


def evaluate_loss(mlp: MlpModel, dataset: Dataset, model: DcModel, w1: float = 1.0, w2: float = 1e-5) -> LossBreakdown:
    alpha_hat = forward(mlp, mlp.stats.normalize(dataset.loads))
    return loss(alpha_hat, dataset.alpha, dataset.loads, model, w1, w2)


# ---------------------------------------------------------------------------
# complexity


def complexity_terms(n_in: int, n_hidden: int, n_neurons: int, n_out: int) -> tuple[int, int, int, int]:
    """``(input, hidden-to-hidden, output, total)`` multiply-accumulate counts."""
    if n_hidden < 1:
        raise ValueError("the closed form needs at least one hidden layer")
    first = n_in * n_neurons
    middle = (n_hidden - 1) * n_neurons**2
    last = n_out * n_neurons
    return first, middle, last, first + middle + last


def complexity(mlp: MlpModel) -> int:
    widths = {w.shape[0] for w in mlp.weights[:-1]}
    if len(widths) != 1:
        raise ValueError("closed form assumes equal hidden widths")
    return complexity_terms(mlp.n_in, mlp.n_hidden, widths.pop(), mlp.n_out)[3]


def count_forward_macs(mlp: MlpModel, x=None) -> tuple[np.ndarray, int]:
    """Scalar-loop forward pass that tallies each multiply-accumulate it performs."""
    h = [0.0] * mlp.n_in if x is None else [float(v) for v in x]
    macs = 0
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        out = []
        for r in range(w.shape[0]):
            acc = float(b[r])
            for c in range(w.shape[1]):
                acc += w[r, c] * h[c]
                macs += 1
            out.append(max(acc, 0.0) if act == "relu" else 1.0 / (1.0 + np.exp(-acc)))
        h = out
    return np.array(h), macs


# ---------------------------------------------------------------------------
# checkpoints


def _enc(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _dec(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def checkpoint_dict(mlp: MlpModel) -> dict:
    return {
        "schema_version": CHECKPOINT_VERSION,
        "layout": {"sizes": mlp.layer_sizes, "activations": mlp.activations},
        "weights": [_enc(w) for w in mlp.weights],
        "biases": [_enc(b) for b in mlp.biases],
        "stats": None if mlp.stats is None else {"mean": _enc(mlp.stats.mean), "std": _enc(mlp.stats.std)},
        "meta": mlp.meta,
    }


def save_checkpoint(mlp: MlpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(mlp), indent=1, sort_keys=True))


def checkpoint_from_dict(data: dict, model: DcModel | None = None) -> MlpModel:
    if data.get("schema_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {data.get('schema_version')!r}")
    try:
        weights = [_dec(w) for w in data["weights"]]
        biases = [_dec(b) for b in data["biases"]]
        acts = list(data["layout"]["activations"])
        stats = data.get("stats")
        stats = None if stats is None else Normalizer(_dec(stats["mean"]), _dec(stats["std"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    mlp = MlpModel(weights, biases, acts, stats, dict(data.get("meta", {})))
    if mlp.layer_sizes != data["layout"]["sizes"]:
        raise CheckpointError("layer sizes in layout disagree with the weight shapes")
    for k in range(1, len(weights)):
        if weights[k].shape[1] != weights[k - 1].shape[0]:
            raise CheckpointError(f"layer {k} input width does not chain")
    if model is not None:
        check_compatible(mlp, model)
    return mlp


def load_checkpoint(path: str | Path, model: DcModel | None = None) -> MlpModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not JSON: {exc}") from None
    return checkpoint_from_dict(data, model)


def check_compatible(mlp: MlpModel, model: DcModel) -> None:
    if mlp.n_in != model.n_load:
        raise CheckpointError(f"network expects {mlp.n_in} load inputs, case {model.net.name} has {model.n_load}")
    if mlp.n_out != model.n_out:
        raise CheckpointError(f"network predicts {mlp.n_out} generators, case {model.net.name} has {model.n_out}")
    case = mlp.meta.get("case")
    if case is not None and case != model.net.name:
        logger.warning("checkpoint was trained on %s, evaluating on %s", case, model.net.name)
