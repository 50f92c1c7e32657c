"""Training loop with early stopping, checkpoint I/O and batch prediction."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .classify import cross_entropy
from .config import RunConfig
from .model import MultiViewDetector, collate
from .tensor import CheckpointError, load_checkpoint, save_checkpoint, seed_everything

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc")


class EmptyDataset(ValueError):
    pass


class SingleClassDataset(ValueError):
    pass


class EarlyStopping:
    """Tracks the best validation loss; ``step`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0


@dataclass
class TrainResult:
    model: MultiViewDetector
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    train_accuracy: list = field(default_factory=list)


def stratified_split(labels, val_fraction: float, seed: int):
    """Per-class random split; returns (train_idx, val_idx) sorted."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    labels = np.asarray([int(y) for y in labels])
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction))
        if len(idx) > 1:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return sorted(train), sorted(val)


def one_hot(labels: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels, 2).to(torch.float32)


def _batches(n, batch_size, generator=None):
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size].tolist()


@torch.no_grad()
def _evaluate_loss(model, samples, labels, batch_size):
    model.eval()
    total, correct = 0.0, 0
    for idx in _batches(len(samples), batch_size):
        batch = collate([samples[i] for i in idx], [labels[i] for i in idx], model.min_rows)
        probs = model(batch)
        total += float(cross_entropy(one_hot(batch.labels), probs).sum())
        correct += int((probs.argmax(-1) == batch.labels).sum())
    return total / len(samples), correct / len(samples)


def train(samples, labels, cfg: RunConfig, val_samples=None, val_labels=None,
          track_train_accuracy: bool = False, stop_at_train_accuracy: float | None = None) -> TrainResult:
    """Fit a detector on feature samples. Without an explicit validation set a
    stratified ``cfg.val_fraction`` split is held out.

    Returns the model restored to its best-validation-loss state. With
    ``stop_at_train_accuracy`` training also ends once training accuracy
    reaches that value; the model is then kept as is.
    """
    labels = [int(y) for y in labels]
    if not samples:
        raise EmptyDataset("no training samples")
    if len(samples) != len(labels):
        raise ValueError(f"{len(samples)} samples but {len(labels)} labels")
    if len(set(labels)) < 2:
        raise SingleClassDataset(f"training labels contain a single class: {sorted(set(labels))}")
    if val_samples is None:
        tr, va = stratified_split(labels, cfg.val_fraction, cfg.seed)
        val_samples, val_labels = [samples[i] for i in va], [labels[i] for i in va]
        samples, labels = [samples[i] for i in tr], [labels[i] for i in tr]
    val_labels = [int(y) for y in val_labels]
    if not val_samples:
        raise EmptyDataset("validation split is empty")

    seed_everything(cfg.seed)
    model = MultiViewDetector(cfg)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult(model)
    best_state = copy.deepcopy(model.state_dict())

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        running = 0.0
        for idx in _batches(len(samples), cfg.batch_size, gen):
            batch = collate([samples[i] for i in idx], [labels[i] for i in idx], model.min_rows)
            loss = cross_entropy(one_hot(batch.labels), model(batch)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        val_loss, val_acc = _evaluate_loss(model, val_samples, val_labels, cfg.batch_size)
        result.history.append({"epoch": epoch, "train_loss": running / len(samples),
                               "val_loss": val_loss, "val_acc": val_acc})
        if track_train_accuracy or stop_at_train_accuracy is not None:
            result.train_accuracy.append(_evaluate_loss(model, samples, labels, cfg.batch_size)[1])
        log.info("epoch %d train_loss %.5f val_loss %.5f val_acc %.4f",
                 epoch, running / len(samples), val_loss, val_acc)
        stop = stopper.step(epoch, val_loss)
        if stopper.improved_last:
            best_state = copy.deepcopy(model.state_dict())
        result.stopped_epoch = epoch
        result.best_epoch = stopper.best_epoch
        if stop_at_train_accuracy is not None and result.train_accuracy[-1] >= stop_at_train_accuracy:
            model.eval()
            return result
        if stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return result


@torch.no_grad()
def predict_proba(model: MultiViewDetector, samples, batch_size: int = 32) -> np.ndarray:
    model.eval()
    out = []
    for idx in _batches(len(samples), batch_size):
        out.append(model(collate([samples[i] for i in idx], min_rows=model.min_rows)).numpy())
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.float32)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (f"{row[k]:.8f}" if isinstance(row[k], float) else row[k]) for k in HISTORY_COLUMNS})


# host-specific settings stay out of checkpoints so identical runs give identical bytes
OPERATIONAL_KEYS = ("cache_dir", "extract_workers")


def save_model(path, model: MultiViewDetector, cfg: RunConfig, extra: dict | None = None) -> str:
    stored = {k: v for k, v in cfg.to_dict().items() if k not in OPERATIONAL_KEYS}
    meta = {"config": stored, **(extra or {})}
    return save_checkpoint(path, model.checkpoint_tensors(), meta)


def load_model(path) -> tuple[MultiViewDetector, RunConfig, dict]:
    tensors, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: checkpoint carries no run config")
    cfg = RunConfig.from_dict(meta["config"])
    model = MultiViewDetector(cfg)
    model.load_checkpoint_tensors(tensors)
    model.eval()
    return model, cfg, meta
