"""Loss, Adam, the training loop, metrics and held-out evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ConfigurationError, ContractError, NonFiniteLossError
from .model import GeoFormer, load_checkpoint, save_checkpoint, serialized_size_bytes
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 42
    checkpoint_interval: int = 50
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigurationError("batch sizes must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mse: float
    n_samples: int
    param_count: int = 0
    size_bytes: int = 0

    def __post_init__(self):
        if self.mae < 0 or self.mse < 0:
            raise ContractError("metrics must be non-negative")
        if self.mae > math.sqrt(self.mse) * (1 + 1e-12) + 1e-300:
            raise ContractError(f"MAE {self.mae} exceeds sqrt(MSE) {math.sqrt(self.mse)}")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else T._wrap(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    return T.mean(T.square(T.sub(pred, target)))


class AdamState:
    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def normalized_batch(model: GeoFormer, data: Dataset, idx):
    stats = model.stats
    return stats.images(data.images[idx]), stats.conc(data.histories[idx]), stats.conc(data.targets[idx])


def _offending_sample(pred: np.ndarray, target: np.ndarray, data: Dataset, idx) -> str:
    bad = np.flatnonzero(~np.isfinite((pred - target) ** 2))
    return data.sample_id(int(idx[bad[0]])) if bad.size else data.sample_id(int(idx[0]))


@dataclass
class TrainResult:
    losses: list[float]
    initial_mse: float
    steps: int


def train(model: GeoFormer, data: Dataset, cfg: TrainConfig = TrainConfig(), out_dir=None,
          log=None) -> TrainResult:
    """Seeded mini-batch Adam with global-norm clipping on normalized MSE.

    Writes ``loss.csv`` and checkpoints (every ``checkpoint_interval`` epochs and at
    the end) under ``out_dir`` when given. The model adopts the dataset's
    train-split normalization statistics.
    """
    model.stats = data.stats
    params = model.parameters()
    state = AdamState(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    initial = evaluate_normalized_mse(model, data, cfg.eval_batch_size)
    losses: list[float] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv = open(out / "loss.csv", "w")
        csv.write("epoch,train_mse\n")
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                images, hist, target = normalized_batch(model, data, idx)
                model.zero_grad()
                pred = model(images, hist)
                loss = mse_loss(pred, target)
                value = float(loss.data)
                if not math.isfinite(value):
                    who = _offending_sample(pred.data, target, data, idx)
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, sample {who}", who)
                loss.backward()
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                clip_global_norm(grads, cfg.grad_clip)
                adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
                total += value * idx.size
            epoch_mse = total / n
            losses.append(epoch_mse)
            if out is not None:
                csv.write(f"{epoch},{epoch_mse!r}\n")
                csv.flush()
                last = epoch + 1 == cfg.epochs
                if last or (cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0):
                    save_checkpoint(model, out, {"train_config": asdict(cfg), "epochs_done": epoch + 1})
            if log is not None:
                log(epoch, epoch_mse)
    finally:
        if out is not None:
            csv.close()
    return TrainResult(losses, initial, state.t)


def predict_dataset(model: GeoFormer, data: Dataset, batch_size: int = 64) -> np.ndarray:
    """Raw-unit predictions in dataset order."""
    chunks = []
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        chunks.append(model.predict(data.images[sl], data.histories[sl]))
    return np.concatenate(chunks)


def evaluate_normalized_mse(model: GeoFormer, data: Dataset, batch_size: int = 64) -> float:
    pred = model.stats.conc(predict_dataset(model, data, batch_size))
    err = pred - model.stats.conc(data.targets)
    return math.fsum(err * err) / err.size


def compute_metrics(pred, target, param_count: int = 0, size_bytes: int = 0) -> MetricsReport:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if err.size == 0:
        raise ContractError("cannot compute metrics on an empty split")
    n = err.size
    return MetricsReport(math.fsum(np.abs(err)) / n, math.fsum(err * err) / n, n, param_count, size_bytes)


def evaluate(checkpoint, data: Dataset, batch_size: int = 64) -> MetricsReport:
    """MAE/MSE in ug/m3 over ``data``; ``checkpoint`` is a directory or a live model."""
    model = checkpoint if isinstance(checkpoint, GeoFormer) else load_checkpoint(checkpoint)
    pred = predict_dataset(model, data, batch_size)
    return compute_metrics(pred, data.targets, model.param_count(), serialized_size_bytes(model))


def history_mean_baseline(data: Dataset) -> MetricsReport:
    """Predict each target as the mean of its own history window."""
    return compute_metrics(data.histories.astype(np.float64).mean(axis=1), data.targets)
