"""Supervised training: foot-wise losses, Adam, the flat MLP baseline, and
the early-stopping train loop shared by both model kinds.

Batch loss is the mean over samples of the per-sample foot-summed loss, so
the learning rate keeps its meaning across batch sizes. Training is
single-threaded over parameter state and bit-reproducible for fixed seeds.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numcore as nc
from . import hgnn as hg
from . import data as dt


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 30
    max_epochs: int = 100
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    task: str = "contact"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience, max_epochs must be >= 1")


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 6300
    hidden_size: int = 200
    num_layers: int = 10  # affine maps, counting input and output maps
    output_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int  # 1-based
    wall_time_s: float
    checkpoint_path: str | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)


def foot_ce_loss(logits: nc.Tensor, labels) -> nc.Tensor:
    """Sum over feet of per-foot softmax cross-entropy."""
    return nc.softmax_cross_entropy(logits, labels)


def foot_mse_loss(pred: nc.Tensor, targets) -> nc.Tensor:
    """Sum over feet of squared error of the 1-D per-foot prediction."""
    t = nc.Tensor(np.asarray(targets, float).reshape(pred.shape))
    return nc.scale(nc.mse(pred, t), pred.data.size)


@dataclass
class AdamState:
    t: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def init(cls, params: list[nc.Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adam_step(params: list[nc.Tensor], grads: list[np.ndarray],
              state: AdamState, cfg: TrainConfig) -> AdamState:
    """In-place Adam update with bias correction; returns the state."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


class MlpModel:
    """Affine-ReLU stack over the flattened 150-step window."""

    def __init__(self, cfg: MlpConfig, params: dict[str, nc.Tensor]):
        self.cfg = cfg
        self.params = params

    def parameters(self) -> list[nc.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def num_floats(self) -> int:
        return sum(p.data.size for p in self.params.values())


def _mlp_dims(cfg: MlpConfig) -> list[tuple[int, int]]:
    dims = [cfg.input_dim] + [cfg.hidden_size] * (cfg.num_layers - 1) + [cfg.output_dim]
    return list(zip(dims[:-1], dims[1:]))


def build_mlp(cfg: MlpConfig, seed: int | None = None) -> MlpModel:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for i, (d_in, d_out) in enumerate(_mlp_dims(cfg)):
        bound = 1.0 / np.sqrt(d_in)
        params[f"{i:02d}.W"] = nc.Tensor(rng.uniform(-bound, bound, (d_in, d_out)),
                                         requires_grad=True)
        params[f"{i:02d}.b"] = nc.Tensor(rng.uniform(-bound, bound, (1, d_out)),
                                         requires_grad=True)
    return MlpModel(cfg, params)


def mlp_forward(model: MlpModel, x: nc.Tensor) -> nc.Tensor:
    """x is (batch, input_dim); ReLU between affine maps, none on the output."""
    h = x
    last = model.cfg.num_layers - 1
    for i in range(model.cfg.num_layers):
        h = nc.add(nc.matmul(h, model.params[f"{i:02d}.W"]), model.params[f"{i:02d}.b"])
        if i != last:
            h = h.relu()
    return h


def _batch_loss(model, windows: list[dt.Window], cfg: TrainConfig) -> nc.Tensor:
    """Mean over the batch of the per-sample foot-summed loss."""
    k = len(windows)
    if isinstance(model, hg.HgnnModel):
        xs, labels = dt.collate_windows(windows, cfg.task, model.graph)
        y = hg.forward_tensor(model, xs, k)  # (k * n_f, n_y)
        if cfg.task == "contact":
            loss = nc.softmax_cross_entropy(y, labels.ravel().astype(np.intp))
            return nc.scale(loss, 1.0 / k)
        return nc.scale(nc.mse(y, nc.Tensor(labels.reshape(-1, 1))), labels.shape[1])
    xs, labels = dt.collate_flat_windows(windows)
    y = mlp_forward(model, nc.Tensor(xs))
    return nc.scale(nc.mse(y, nc.Tensor(labels)), labels.shape[1])


def predict(model, windows: list[dt.Window], task: str, batch_size: int = 256) -> np.ndarray:
    """Model outputs per window: (n, 4, 2) contact logits or (n, 4) forces."""
    outs = []
    for i in range(0, len(windows), batch_size):
        chunk = windows[i:i + batch_size]
        if isinstance(model, hg.HgnnModel):
            xs, _ = dt.collate_windows(chunk, task, model.graph)
            y = hg.forward_tensor(model, xs, len(chunk)).data
            n_f = len(model.graph.foot_order)
            y = y.reshape(len(chunk), n_f, model.cfg.output_dim)
            outs.append(y if task == "contact" else y[..., 0])
        else:
            xs, _ = dt.collate_flat_windows(chunk)
            outs.append(mlp_forward(model, nc.Tensor(xs)).data)
    return np.concatenate(outs, axis=0)


def _dataset_loss(model, windows: list[dt.Window], cfg: TrainConfig,
                  batch_size: int = 256) -> float:
    total = 0.0
    for i in range(0, len(windows), batch_size):
        chunk = windows[i:i + batch_size]
        total += _batch_loss(model, chunk, cfg).item() * len(chunk)
    return total / len(windows)


def train(model, train_windows: list[dt.Window], val_windows: list[dt.Window],
          cfg: TrainConfig) -> TrainReport:
    """Minibatch Adam with early stopping on validation loss.

    Stops when validation loss has not improved for ``patience`` epochs or
    at ``max_epochs``; the best-validation parameters are restored into the
    model before returning.
    """
    if not train_windows or not val_windows:
        raise EmptyDataset("train and validation sets must be non-empty")
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState.init(params)
    train_losses, val_losses = [], []
    best_val, best_epoch = np.inf, 0
    best_params = [p.data.copy() for p in params]
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_windows))
        running = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_windows[j] for j in order[i:i + cfg.batch_size]]
            nc.zero_grads(params)
            loss = _batch_loss(model, batch, cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}")
            nc.backward(loss)
            adam_step(params, [p.grad for p in params], state, cfg)
            running += value * len(batch)
        train_losses.append(running / len(train_windows))
        val = _dataset_loss(model, val_windows, cfg)
        val_losses.append(val)
        if val < best_val:
            best_val, best_epoch, stall = val, epoch, 0
            best_params = [p.data.copy() for p in params]
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    for p, best in zip(params, best_params):
        p.data = best
    return TrainReport(train_losses, val_losses, best_epoch,
                       time.perf_counter() - t0)


def save_mlp_checkpoint(model: MlpModel, path: str) -> None:
    doc = {"kind": "mlp", "config": asdict(model.cfg),
           "params": {k: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                      for k, t in model.params.items()}}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_mlp_checkpoint(path: str) -> MlpModel:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "mlp":
        raise ValueError(f"not an mlp checkpoint: kind={doc.get('kind')!r}")
    cfg = MlpConfig(**doc["config"])
    params = {}
    for key, entry in doc["params"].items():
        params[key] = nc.Tensor(np.array(entry["data"]).reshape(entry["shape"]),
                                requires_grad=True)
    model = MlpModel(cfg, params)
    for i, (d_in, d_out) in enumerate(_mlp_dims(cfg)):
        if params[f"{i:02d}.W"].shape != (d_in, d_out):
            raise ValueError(f"layer {i} has shape {params[f'{i:02d}.W'].shape}, "
                             f"expected {(d_in, d_out)}")
    return model


def write_training_log(report: TrainReport, path: str) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for i, (tr, vl) in enumerate(zip(report.train_losses, report.val_losses), 1):
            f.write(f"{i},{tr!r},{vl!r}\n")
