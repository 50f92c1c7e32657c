"""Feed-forward malware classifier, its loss, and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import torch
from torch import nn

from .tensor import Linear, ShapeMismatch, dropout

CLASSIFIER_DIMS = (1024, 512, 256, 128, 64, 2)
PROB_CLAMP = 1e-7


class TooFewSlots(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    layer_dims: tuple[int, ...] = CLASSIFIER_DIMS
    dropout_p: float = 0.2


class Classifier(nn.Module):
    """ReLU + dropout on every hidden layer, softmax on the 2-way output."""

    def __init__(self, cfg: ClassifierConfig = ClassifierConfig()):
        super().__init__()
        self.cfg = cfg
        dims = cfg.layer_dims
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(dims, dims[1:]))

    def logits(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.cfg.layer_dims[0]:
            raise ShapeMismatch(
                f"classifier: input shape {tuple(v.shape)} and first layer {tuple(self.layers[0].weight.shape)}")
        h = v
        for layer in self.layers[:-1]:
            h = dropout(torch.relu(layer(h)), self.cfg.dropout_p, self.training)
        return self.layers[-1](h)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(v), dim=-1)


def cross_entropy(target: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """-sum_i [L_i log P_i + (1 - L_i) log(1 - P_i)] over both classes, per sample.

    Both the positive and the complementary term are summed over the two
    softmax outputs, so for two classes this is twice the usual categorical
    cross-entropy. Probabilities are clamped to [1e-7, 1 - 1e-7].
    """
    p = probs.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    return -(target * torch.log(p) + (1 - target) * torch.log(1 - p)).sum(dim=-1)


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    accuracy: float | None
    f1: float | None
    per_slot: list | None = None
    aut: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _ratio(num, den):
    return num / den if den > 0 else None


def evaluate(labels, predictions, positive: int = 0) -> EvalReport:
    """Confusion counts and metrics; malware (class ``positive``) is the positive class.

    Ratios with a zero denominator are reported as None.
    """
    labels = [int(x) for x in labels]
    predictions = [int(x) for x in predictions]
    if len(labels) != len(predictions):
        raise ValueError(f"{len(labels)} labels but {len(predictions)} predictions")
    if not labels:
        raise ValueError("evaluate needs at least one sample")
    tp = sum(1 for y, p in zip(labels, predictions) if y == positive and p == positive)
    fp = sum(1 for y, p in zip(labels, predictions) if y != positive and p == positive)
    fn = sum(1 for y, p in zip(labels, predictions) if y == positive and p != positive)
    tn = len(labels) - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    accuracy = (tp + tn) / len(labels)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    return EvalReport(tp, fp, tn, fn, precision, recall, accuracy, f1)


def aut(metric_by_slot) -> float:
    """Area Under Time: trapezoidal mean of a metric over N >= 2 ordered slots."""
    # exact rational sum, rounded once: a constant metric returns itself bit for bit
    f = [Fraction(float(x)) for x in metric_by_slot]
    n = len(f)
    if n < 2:
        raise TooFewSlots(f"AUT needs at least 2 slots, got {n}")
    return float(sum((f[k + 1] + f[k]) / 2 for k in range(n - 1)) / (n - 1))


def evaluate_slots(slots, labels, predictions, positive: int = 0) -> EvalReport:
    """Overall metrics plus one row per slot (sorted); AUT per metric when there are >= 2 slots.

    A metric that is undefined in any slot has no AUT.
    """
    report = evaluate(labels, predictions, positive)
    slots = list(slots)
    rows = []
    for s in sorted(set(slots)):
        idx = [i for i, v in enumerate(slots) if v == s]
        r = evaluate([labels[i] for i in idx], [predictions[i] for i in idx], positive)
        rows.append({"slot": s, "n": len(idx), "tp": r.tp, "fp": r.fp, "tn": r.tn, "fn": r.fn,
                     "precision": r.precision, "recall": r.recall, "accuracy": r.accuracy, "f1": r.f1})
    report.per_slot = rows
    if len(rows) >= 2:
        report.aut = {}
        for m in ("precision", "recall", "accuracy", "f1"):
            vals = [r[m] for r in rows]
            report.aut[m] = None if any(v is None for v in vals) else aut(vals)
    return report
