"""View-subset ablation: train one detector per non-empty subset of views."""

from __future__ import annotations

import itertools

import numpy as np

from .classify import evaluate
from .config import RunConfig
from .train import stratified_split, predict_proba, train

ALL_VIEWS = ("sensitivity", "context", "environment")


def view_subsets():
    for r in (1, 2, 3):
        yield from itertools.combinations(ALL_VIEWS, r)


def run_ablation(samples, labels, cfg: RunConfig, test_fraction: float = 0.25) -> dict:
    """Test accuracy for every view subset on one stratified held-out split.

    All subsets share the split, the seed and every other setting.
    """
    labels = [int(y) for y in labels]
    tr, te = stratified_split(labels, test_fraction, cfg.seed)
    tr_s, tr_y = [samples[i] for i in tr], [labels[i] for i in tr]
    te_s, te_y = [samples[i] for i in te], [labels[i] for i in te]
    out = {}
    for views in view_subsets():
        res = train(tr_s, tr_y, cfg.replace(views=views))
        pred = np.argmax(predict_proba(res.model, te_s), axis=1)
        out[views] = evaluate(te_y, pred).accuracy
    return out


def ordering_holds(acc: dict) -> bool:
    """Every 3-view accuracy >= every 2-view one >= every 1-view one (ties allowed)."""
    by_size = {n: [a for v, a in acc.items() if len(v) == n] for n in (1, 2, 3)}
    return min(by_size[3]) >= max(by_size[2]) and min(by_size[2]) >= max(by_size[1])
