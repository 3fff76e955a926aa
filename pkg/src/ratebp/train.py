"""Training driver: runs one experiment end to end and writes its artifacts.

Artifacts under cfg.out_dir: `config.txt` (the resolved configuration),
`metrics.csv` (epoch,split,loss,accuracy,lr,wall_seconds), `checkpoint.rbp`,
and `summary.json`. Everything except wall-clock fields is a deterministic
function of (seed, config).
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

from .bptt import bptt_backward, cosine_lr, sgd_update
from .config import ExperimentConfig
from .data import DatasetHandle, gen_synthetic, load_idx, split_dataset
from .network import (
    Batch,
    Model,
    ModelSpec,
    ce_loss,
    direct_encode,
    forward_eval,
    init_model,
    model_forward_bptt,
    save_model,
)
from .neuron import NeuronParams
from .rate import rate_backward, rate_forward, rate_logits
from .tensor import RngState

METRICS_CSV_SCHEMA = "metrics-v1"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float
    lr: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: Model
    metrics: list[EpochMetrics]
    summary: dict


def load_datasets(cfg: ExperimentConfig) -> tuple[DatasetHandle, DatasetHandle]:
    if cfg.dataset == "synthetic":
        rng = RngState(cfg.seed).derive(101)
        full = gen_synthetic(
            rng, cfg.train_n + cfg.test_n, cfg.features, cfg.classes,
            separation=cfg.separation, noise=cfg.noise,
        )
        return split_dataset(full, cfg.train_n)
    train = load_idx(cfg.train_images, cfg.train_labels, n_classes=cfg.classes)
    test = load_idx(cfg.test_images, cfg.test_labels, n_classes=cfg.classes)
    train.split, test.split = "train", "test"
    return train, test


def model_spec_from_config(cfg: ExperimentConfig, in_features: int, n_classes: int) -> ModelSpec:
    return ModelSpec(
        in_features=in_features,
        hidden=tuple(cfg.hidden),
        n_classes=n_classes,
        T=cfg.T,
        neuron=NeuronParams(),
        bn=None if cfg.bn == "none" else cfg.bn,
        bias=cfg.bias,
    )


def train_step(model: Model, method: str, xb, yb, check_traces: bool = False,
               spatial_bn_rate: str = "exact"):
    """Forward + backward for one mini-batch; returns (loss, grads, outputs)."""
    encoded = direct_encode(xb, model.spec.T)
    if method == "bptt":
        outputs, cache = model_forward_bptt(model, encoded, training=True)
        loss, dloss = ce_loss(outputs.mean(axis=0), yb)
        if not math.isfinite(loss):
            return loss, None, outputs
        grads, _ = bptt_backward(model, cache, dloss)
    else:
        outputs, rcache = rate_forward(model, encoded, method,
                                       spatial_bn_rate=spatial_bn_rate,
                                       debug_check_traces=check_traces)
        loss, dloss = ce_loss(rate_logits(model, rcache), yb)
        if not math.isfinite(loss):
            return loss, None, outputs
        grads = rate_backward(model, rcache, dloss)
    return loss, grads, outputs


def evaluate(model: Model, data: DatasetHandle, batch_size: int) -> tuple[float, float]:
    """Inference-mode loss and accuracy over a dataset."""
    n = len(data)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = data.images[start : start + batch_size]
        yb = data.labels[start : start + batch_size]
        outputs = forward_eval(model, direct_encode(xb, model.spec.T))
        logits = outputs.mean(axis=0)
        loss, _ = ce_loss(logits, yb)
        total_loss += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / n, correct / n


def train(
    cfg: ExperimentConfig,
    train_data: DatasetHandle | None = None,
    test_data: DatasetHandle | None = None,
    write_artifacts: bool = True,
) -> TrainResult:
    cfg.validate()
    if train_data is None or test_data is None:
        train_data, test_data = load_datasets(cfg)
    Batch(train_data.images[: min(len(train_data), 4096)],
          train_data.labels[: min(len(train_data), 4096)], train_data.n_classes)

    spec = model_spec_from_config(cfg, train_data.images.shape[1], train_data.n_classes)
    rng = RngState(cfg.seed)
    model = init_model(spec, rng.derive(1))
    shuffle_rng = rng.derive(2)

    n = len(train_data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    params = model.parameters()
    velocity = None
    metrics: list[EpochMetrics] = []
    step = 0
    lr = cfg.lr
    t_start = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.gen.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        t_epoch = time.perf_counter()
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = train_data.images[idx]
            yb = train_data.labels[idx]
            lr = cosine_lr(step, total_steps, cfg.lr)
            loss, grads, outputs = train_step(model, cfg.method, xb, yb,
                                              cfg.check_traces, cfg.spatial_bn_rate)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, step, loss)
            if lr > 0.0:  # a zero rate is a recorded no-op step
                velocity = sgd_update(params, grads, lr, cfg.momentum, cfg.weight_decay, velocity)
            epoch_loss += loss * len(yb)
            epoch_correct += int((outputs.mean(axis=0).argmax(axis=1) == yb).sum())
            step += 1
        wall = time.perf_counter() - t_epoch
        metrics.append(EpochMetrics(epoch, "train", epoch_loss / n, epoch_correct / n, lr, wall))
        test_loss, test_acc = evaluate(model, test_data, cfg.batch_size)
        metrics.append(EpochMetrics(epoch, "test", test_loss, test_acc,
                                    lr, time.perf_counter() - t_epoch - wall))

    summary = {
        "method": cfg.method,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "timesteps": cfg.T,
        "train_samples": n,
        "test_samples": len(test_data),
        "final_train_accuracy": metrics[-2].accuracy if metrics else None,
        "final_test_accuracy": metrics[-1].accuracy if metrics else None,
        "total_wall_seconds": time.perf_counter() - t_start,
    }
    if write_artifacts:
        _write_artifacts(cfg, model, metrics, summary)
    return TrainResult(model=model, metrics=metrics, summary=summary)


def metrics_csv_text(metrics: list[EpochMetrics]) -> str:
    lines = [f"# schema={METRICS_CSV_SCHEMA}", "epoch,split,loss,accuracy,lr,wall_seconds"]
    for m in metrics:
        lines.append(
            f"{m.epoch},{m.split},{m.loss:.12g},{m.accuracy:.12g},{m.lr:.12g},{m.wall_seconds:.6g}"
        )
    return "\n".join(lines) + "\n"


def _write_artifacts(cfg: ExperimentConfig, model: Model, metrics, summary):
    from .config import save_config

    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "config.txt"))
    with open(os.path.join(cfg.out_dir, "metrics.csv"), "w") as f:
        f.write(metrics_csv_text(metrics))
    save_model(model, os.path.join(cfg.out_dir, "checkpoint.rbp"))
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
