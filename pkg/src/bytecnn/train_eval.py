"""Training loop, cross-validation driver, final-model protocol, and metrics."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, FoldError
from .models import Model, ModelConfig
from .nn.loss import softmax_cross_entropy, softmax_cross_entropy_grad
from .nn.optim import Adam
from .sampling import make_batcher, split_by_fold, stratified_folds

LOG_LOSS_CLIP = 1e-15

HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    sampler_mode: str = "default"  # "default" | "rebalance"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    precision: str = "float32"  # "float32" | "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sampler_mode not in ("default", "rebalance"):
            raise ConfigError(f"unknown sampler_mode {self.sampler_mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass
class EvalReport:
    micro_accuracy: float
    per_class_f1: list
    macro_f1: float
    avg_log_loss: float
    confusion: np.ndarray  # [true, predicted] counts
    history: list = field(default_factory=list)
    degenerate_classes: list = field(default_factory=list)  # F1 pinned to 0


def stack_dataset(samples):
    """(X [N, L] float32, y [N], ids) from resampled labeled samples."""
    if not samples:
        raise ValueError("no samples to stack")
    x = np.stack([s.sequence.values for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    ids = [s.sequence.sample_id for s in samples]
    return x, y, ids


def compute_log_loss(probs, labels, clip: float = LOG_LOSS_CLIP) -> float:
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.clip(p_true, clip, 1.0 - clip)).mean())


def compute_metrics(probs, labels, num_classes: int = 9) -> EvalReport:
    """Confusion matrix, per-class F1, macro-F1, micro accuracy, log-loss.

    A class with neither true instances nor predictions gets F1 = 0 and is
    flagged in degenerate_classes so macro-F1 stays computable.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"need one probability row per label: {probs.shape} vs {labels.shape}")
    if probs.shape[1] != num_classes:
        raise ValueError(f"probability rows have {probs.shape[1]} classes, expected {num_classes}")
    preds = probs.argmax(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    per_class_f1 = []
    degenerate = []
    for c in range(num_classes):
        tp = confusion[c, c]
        true_c = confusion[c, :].sum()
        pred_c = confusion[:, c].sum()
        if true_c == 0 and pred_c == 0:
            per_class_f1.append(0.0)
            degenerate.append(c)
            continue
        precision = tp / pred_c if pred_c else 0.0
        recall = tp / true_c if true_c else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class_f1.append(float(f1))
    total = int(confusion.sum())
    return EvalReport(
        micro_accuracy=float(np.trace(confusion) / total) if total else 0.0,
        per_class_f1=per_class_f1,
        macro_f1=float(np.mean(per_class_f1)),
        avg_log_loss=compute_log_loss(probs, labels),
        confusion=confusion,
        degenerate_classes=degenerate,
    )


class _HistoryWriter:
    """Appends one CSV line per epoch so aborted runs keep partial logs."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(HISTORY_HEADER + "\n")

    def append(self, row):
        if self.path:
            with self.path.open("a") as fh:
                fh.write("%d,%.6f,%.6f,%.6f,%.6f\n" % row)


def fit(model: Model, x_train, y_train, x_val, y_val, cfg: TrainConfig,
        history_path=None, on_epoch_end=None):
    """Run the epochs x batches loop with Adam on cross-entropy plus L2.

    History rows are (epoch, train_loss, train_acc, val_loss, val_acc) where
    the train columns are running means over the epoch's batches (dropout
    active) and the val columns come from a full inference pass. A non-finite
    loss aborts with DivergenceError. on_epoch_end(epoch, model, row) may
    return True to stop early.
    """
    batcher = make_batcher(y_train, cfg.sampler_mode, cfg.batch_size, cfg.seed,
                           num_classes=model.config.num_classes)
    model.set_dropout_rng(np.random.default_rng([cfg.seed, 2]))
    adam = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    writer = _HistoryWriter(history_path)
    history = []
    for epoch in range(cfg.epochs):
        seen = 0
        loss_sum = 0.0
        correct = 0
        for batch in batcher.epoch(epoch):
            xb = x_train[batch.indices]
            yb = y_train[batch.indices]
            logits = model.forward(xb, train=True)
            ce, probs = softmax_cross_entropy(logits, yb)
            loss = ce + model.l2_value()
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss} at epoch {epoch}, step {adam.step_count}")
            model.backward(softmax_cross_entropy_grad(probs, yb))
            adam.step(model.gradients())
            seen += len(yb)
            loss_sum += loss * len(yb)
            correct += int((probs.argmax(axis=1) == yb).sum())
        val_probs = model.predict_proba(x_val)
        row = (
            epoch,
            loss_sum / seen,
            correct / seen,
            compute_log_loss(val_probs, y_val),
            float((val_probs.argmax(axis=1) == y_val).mean()),
        )
        history.append(row)
        writer.append(row)
        if on_epoch_end is not None and on_epoch_end(epoch, model, row):
            break
    return history


def train_fold(train_samples, val_samples, model_config: ModelConfig, train_config: TrainConfig,
               history_path=None, on_epoch_end=None):
    """Train one model on a train/validation split of resampled samples."""
    train_ids = {s.sequence.sample_id for s in train_samples}
    if any(s.sequence.sample_id in train_ids for s in val_samples):
        raise ValueError("train and validation sets must be disjoint")
    x_train, y_train, _ = stack_dataset(train_samples)
    x_val, y_val, _ = stack_dataset(val_samples)
    model = Model(model_config, dtype=train_config.dtype)
    history = fit(model, x_train, y_train, x_val, y_val, train_config, history_path, on_epoch_end)
    return model, history


def cross_validate(samples, model_config: ModelConfig, train_config: TrainConfig,
                   k: int = 5, out_dir=None) -> EvalReport:
    """K-fold cross-validation with pooled out-of-fold predictions.

    Each fold trains on the other k-1 parts with fold-derived seeds (base
    seed + fold index) and predicts its held-out part; metrics are computed
    once over the pooled predictions. Final-epoch weights are used (no
    best-epoch selection inside CV).
    """
    assignment = stratified_folds(samples, k, seed=train_config.seed)
    num_classes = model_config.num_classes
    oof = np.full((len(samples), num_classes), np.nan)
    pos_of = {s.sequence.sample_id: i for i, s in enumerate(samples)}
    out_dir = Path(out_dir) if out_dir else None
    for fold in range(k):
        train_part, val_part = split_by_fold(samples, assignment, fold)
        fold_model_cfg = dataclasses.replace(model_config, seed=model_config.seed + fold)
        fold_train_cfg = dataclasses.replace(train_config, seed=train_config.seed + fold)
        history_path = out_dir / f"history_fold{fold}.csv" if out_dir else None
        try:
            model, _ = train_fold(train_part, val_part, fold_model_cfg, fold_train_cfg, history_path)
            x_val, _, val_ids = stack_dataset(val_part)
            probs = model.predict_proba(x_val)
        except Exception as exc:
            raise FoldError(fold, exc) from exc
        for sid, row in zip(val_ids, probs):
            oof[pos_of[sid]] = row
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if np.isnan(oof).any():
        raise RuntimeError("some samples received no out-of-fold prediction")
    return compute_metrics(oof, labels, num_classes)


def train_final(samples, model_config: ModelConfig, train_config: TrainConfig,
                history_path=None, val_fraction_folds: int = 10):
    """Final-model protocol: stratified 90/10 split, keep the epoch snapshot
    with the lowest validation log-loss.

    Returns (model restored to the best snapshot, history, best_epoch).
    """
    assignment = stratified_folds(samples, val_fraction_folds, seed=train_config.seed)
    train_part, val_part = split_by_fold(samples, assignment, held_out=0)
    best = {"loss": math.inf, "epoch": -1, "params": None}

    def snapshot(epoch, model, row):
        if row[3] < best["loss"]:
            best["loss"] = row[3]
            best["epoch"] = epoch
            best["params"] = [p.copy() for p in model.parameters()]
        return False

    model, history = train_fold(train_part, val_part, model_config, train_config,
                                history_path, on_epoch_end=snapshot)
    for p, saved in zip(model.parameters(), best["params"]):
        p[...] = saved
    return model, history, best["epoch"]


def format_report(report: EvalReport, family_names) -> str:
    """Human-readable evaluation report including the class-index mapping."""
    lines = ["evaluation report", "=" * 17]
    lines.append(f"micro accuracy : {report.micro_accuracy:.4f}")
    lines.append(f"macro F1       : {report.macro_f1:.4f}")
    lines.append(f"avg log-loss   : {report.avg_log_loss:.4f}")
    lines.append("")
    lines.append("class  family           F1")
    for c, name in enumerate(family_names):
        flag = "  (no instances, F1 pinned to 0)" if c in report.degenerate_classes else ""
        lines.append(f"{c:>5}  {name:<15} {report.per_class_f1[c]:.4f}{flag}")
    lines.append("")
    lines.append("confusion matrix (rows true, columns predicted):")
    for c, row in enumerate(report.confusion):
        lines.append(f"{c:>5}  " + " ".join(f"{v:>6d}" for v in row))
    return "\n".join(lines) + "\n"


def report_key_values(report: EvalReport) -> str:
    """Flat key=value serialization of an EvalReport."""
    lines = [
        f"micro_accuracy={report.micro_accuracy:.6f}",
        f"macro_f1={report.macro_f1:.6f}",
        f"avg_log_loss={report.avg_log_loss:.6f}",
    ]
    for c, f1 in enumerate(report.per_class_f1):
        lines.append(f"per_class_f1.{c}={f1:.6f}")
    for c in report.degenerate_classes:
        lines.append(f"degenerate_class.{c}=1")
    for i, row in enumerate(report.confusion):
        lines.append(f"confusion.{i}=" + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, family_names, prefix: str = "eval"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{prefix}_report.txt").write_text(format_report(report, family_names))
    (out_dir / f"{prefix}_metrics.kv").write_text(report_key_values(report))
