"""Figures and delimited tables for training histories and time-slot evaluations."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SLOT_COLUMNS = ("slot", "n", "tp", "fp", "tn", "fn", "precision", "recall", "accuracy", "f1")
METRICS = ("precision", "recall", "accuracy", "f1")
# strip the version-bearing metadata so figure bytes depend only on the data
_PNG_META = {"Software": None}


def _fmt(v):
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_slot_csv(path, per_slot):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SLOT_COLUMNS)
        for row in per_slot:
            w.writerow([_fmt(row.get(c)) for c in SLOT_COLUMNS])


def plot_history(history, path):
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.plot(epochs, [h["train_loss"] for h in history], label="train loss")
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_slots(per_slot, aut_values: dict | None, path):
    slots = [str(r["slot"]) for r in per_slot]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for m in METRICS:
        ys = [r.get(m) for r in per_slot]
        ax.plot(slots, [float("nan") if y is None else y for y in ys], marker="o",
                label=f"{m} (AUT {aut_values[m]:.3f})" if aut_values and aut_values.get(m) is not None else m)
    ax.set_xlabel("test slot")
    ax.set_ylabel("metric")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)
