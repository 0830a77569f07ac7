"""Training protocol, evaluation metrics, and inference benchmarking.

Training runs seeded shuffled mini-batches with Adam and stops early once
validation loss has gone early_stop_patience consecutive epochs without a
new minimum; the returned checkpoint always holds the best-validation-loss
parameters. Evaluation reports top-1 accuracy, macro F1, the confusion
matrix, and single-image latency statistics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import neural as nn
from .checkpoint import Checkpoint
from .dataset import DatasetManifest, load_split
from .model import ModelConfig, PatternClassifier, build_model

__all__ = [
    "TrainConfig",
    "EvalReport",
    "train",
    "evaluate",
    "benchmark_latency",
    "macro_f1_from_confusion",
]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    max_epochs: int = 50
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.early_stop_patience >= self.max_epochs:
            raise ValueError("early_stop_patience must be smaller than max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class EvalReport:
    top1_accuracy: float
    macro_f1: float
    confusion: np.ndarray
    mean_latency_ms: float
    p99_latency_ms: float

    def to_dict(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "mean_latency_ms": self.mean_latency_ms,
            "p99_latency_ms": self.p99_latency_ms,
        }


def _stratified_holdout(ids: np.ndarray, fraction: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Boolean mask marking the held-out validation rows, per-class."""
    held = np.zeros(len(ids), dtype=bool)
    for mode_id in np.unique(ids):
        rows = np.flatnonzero(ids == mode_id)
        take = int(np.floor(fraction * len(rows) + 0.5))
        held[rng.permutation(rows)[:take]] = True
    return held


def _batched_loss(model: PatternClassifier, x: np.ndarray, y: np.ndarray,
                  batch_size: int = 64) -> tuple[float, float]:
    """Inference-mode mean loss and accuracy over a full array."""
    total, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        xb, yb = x[i:i + batch_size], y[i:i + batch_size]
        logits = model.forward(xb, training=False).data
        loss, _ = nn.softmax_cross_entropy(logits, yb)
        total += loss * len(xb)
        correct += int((logits.argmax(axis=1) == yb.argmax(axis=1)).sum())
    return total / len(x), correct / len(x)


def train(manifest: DatasetManifest, model_config: ModelConfig,
          train_config: TrainConfig) -> Checkpoint:
    """Train on the manifest's train split and return the best checkpoint."""
    x, y, ids = load_split(manifest, "train", model_config.image_size)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=train_config.seed, spawn_key=(17,))
    )
    held = _stratified_holdout(ids, train_config.val_fraction, rng)
    x_val, y_val = x[held], y[held]
    x_fit, y_fit = x[~held], y[~held]
    if len(x_fit) == 0 or len(x_val) == 0:
        raise ValueError("train split too small for the requested val_fraction")

    model = build_model(model_config, seed=train_config.seed)
    params = model.parameters()
    opt = nn.AdamState.for_params(params, lr=train_config.lr)

    history: list[dict] = []
    best_loss = np.inf
    best_params: dict[str, np.ndarray] = {}
    stall = 0
    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(len(x_fit))
        epoch_loss = 0.0
        try:
            for i in range(0, len(order), train_config.batch_size):
                rows = order[i:i + train_config.batch_size]
                logits = model.forward(x_fit[rows], training=True,
                                       dropout_seed=int(rng.integers(2**63)))
                loss, dlogits = nn.softmax_cross_entropy(logits.data, y_fit[rows])
                nn.zero_grads(params)
                logits.backward(dlogits)
                nn.adam_step(params, opt)
                epoch_loss += loss * len(rows)
            val_loss, val_acc = _batched_loss(model, x_val, y_val)
        except FloatingPointError as exc:
            raise ValueError(f"training diverged at epoch {epoch}: {exc}") from exc
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / len(x_fit),
                "val_loss": val_loss,
                "val_accuracy": val_acc,
            }
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = {k: t.data.copy() for k, t in model.params.items()}
            stall = 0
        else:
            stall += 1
            if stall >= train_config.early_stop_patience:
                break

    return Checkpoint(
        config=model_config,
        params={k: v.astype(np.float32) for k, v in best_params.items()},
        history=history,
    )


def macro_f1_from_confusion(confusion: np.ndarray) -> float:
    """Unweighted mean over classes of 2PR/(P+R), zero when P+R is zero.
    Rows are true classes, columns predictions."""
    confusion = np.asarray(confusion, dtype=np.float64)
    scores = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        scores.append(
            2.0 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
    return float(np.mean(scores))


def evaluate(ckpt: Checkpoint, manifest: DatasetManifest,
             split: str = "test") -> EvalReport:
    """Argmax classification of one split, timed per single image."""
    model = ckpt.build()
    k = ckpt.config.num_classes
    x, _, ids = load_split(manifest, split, ckpt.config.image_size)
    confusion = np.zeros((k, k), dtype=np.int64)
    times = np.empty(len(x))
    for i in range(len(x)):
        start = time.perf_counter()
        logits = model.logits(x[i:i + 1])
        times[i] = (time.perf_counter() - start) * 1e3
        confusion[ids[i], int(logits.argmax())] += 1
    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvalReport(
        top1_accuracy=accuracy,
        macro_f1=macro_f1_from_confusion(confusion),
        confusion=confusion,
        mean_latency_ms=float(times.mean()),
        p99_latency_ms=float(np.percentile(times, 99)),
    )


def benchmark_latency(ckpt: Checkpoint, runs: int = 1000,
                      seed: int = 0) -> dict:
    """Single-image forward latency over randomized valid inputs;
    10 warm-up runs are excluded."""
    if runs < 1:
        raise ValueError("runs must be positive")
    model = ckpt.build()
    s = ckpt.config.image_size
    rng = np.random.default_rng(seed)
    batch = rng.random((1, 3, s, s), dtype=np.float32)
    for _ in range(10):
        model.logits(batch)
    times = np.empty(runs)
    for i in range(runs):
        batch = rng.random((1, 3, s, s), dtype=np.float32)
        start = time.perf_counter()
        model.logits(batch)
        times[i] = (time.perf_counter() - start) * 1e3
    return {"mean_ms": float(times.mean()), "p99_ms": float(np.percentile(times, 99))}
