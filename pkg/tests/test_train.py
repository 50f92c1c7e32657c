import csv

import numpy as np
import pytest
import torch

from apkviews.classify import Classifier, ClassifierConfig, cross_entropy
from apkviews.config import RunConfig
from apkviews.model import MultiViewDetector, collate
from apkviews.tensor import checkpoint_digest
from apkviews.train import (HISTORY_COLUMNS, EarlyStopping, EmptyDataset, SingleClassDataset, load_model,
                            one_hot, predict_proba, save_model, stratified_split, train, write_history)
from conftest import SMALL


def test_early_stopping_counts_patience():
    stopper = EarlyStopping(20)
    losses = [1.0] + [1.0 + 0.1 * i for i in range(1, 100)]
    stopped = next(epoch for epoch, loss in enumerate(losses, 1) if stopper.step(epoch, loss))
    assert stopper.best_epoch == 1 and stopped == 21


def test_early_stopping_resets_on_improvement():
    stopper = EarlyStopping(2)
    assert not stopper.step(1, 1.0)
    assert not stopper.step(2, 1.5)
    assert not stopper.step(3, 0.9) and stopper.improved_last
    assert not stopper.step(4, 0.95)
    assert stopper.step(5, 0.95)
    assert stopper.best_epoch == 3


def test_empty_and_single_class(small_cfg, overfit_features):
    _, feats, labels = overfit_features
    with pytest.raises(EmptyDataset):
        train([], [], small_cfg)
    with pytest.raises(SingleClassDataset):
        train(feats[:4], [0, 0, 0, 0], small_cfg)


def test_stratified_split_keeps_both_classes():
    labels = [0] * 10 + [1] * 30
    tr, va = stratified_split(labels, 0.2, seed=3)
    assert sorted(tr + va) == list(range(40))
    assert sum(labels[i] == 0 for i in va) == 2 and sum(labels[i] == 1 for i in va) == 6
    assert stratified_split(labels, 0.2, seed=3) == (tr, va)
    assert stratified_split(labels, 0.2, seed=4) != (tr, va)


def test_classifier_loss_nonincreasing_on_separable_data():
    torch.manual_seed(0)
    x = torch.cat([torch.randn(16, 8) + 2, torch.randn(16, 8) - 2])
    y = one_hot(torch.tensor([0] * 16 + [1] * 16))
    clf = Classifier(ClassifierConfig((8, 16, 8, 2), 0.0))
    opt = torch.optim.Adam(clf.parameters(), lr=1e-3)
    losses = []
    for _ in range(200):
        loss = cross_entropy(y, clf(x)).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    windows = np.asarray(losses).reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)
    assert losses[-1] < 0.1 * losses[0]


def test_same_seed_same_checkpoint(small_cfg, overfit_features):
    _, feats, labels = overfit_features
    cfg = small_cfg.replace(max_epochs=3)
    a = train(feats, labels, cfg).model.checkpoint_tensors()
    b = train(feats, labels, cfg).model.checkpoint_tensors()
    assert checkpoint_digest(a, {}) == checkpoint_digest(b, {})
    c = train(feats, labels, cfg.replace(seed=1)).model.checkpoint_tensors()
    assert checkpoint_digest(a, {}) != checkpoint_digest(c, {})


def test_history_and_best_restore(small_cfg, overfit_features, tmp_path):
    _, feats, labels = overfit_features
    res = train(feats, labels, small_cfg.replace(max_epochs=4))
    assert [r["epoch"] for r in res.history] == [1, 2, 3, 4]
    best = min(res.history, key=lambda r: r["val_loss"])
    assert res.best_epoch == best["epoch"]
    write_history(tmp_path / "h.csv", res.history)
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert tuple(rows[0]) == HISTORY_COLUMNS and len(rows) == 5


def test_freeze_encoders(small_cfg, overfit_features):
    _, feats, labels = overfit_features
    cfg = small_cfg.replace(max_epochs=2, freeze_encoders=True)
    torch.manual_seed(cfg.seed)
    fresh = MultiViewDetector(cfg).state_dict()
    model = train(feats, labels, cfg).model
    for name, value in model.state_dict().items():
        if name.startswith("encoders."):
            assert torch.equal(value, fresh[name]), name
    assert not torch.equal(model.state_dict()["classifier.layers.0.weight"], fresh["classifier.layers.0.weight"])


def test_save_load_roundtrip(small_cfg, overfit_features, tmp_path):
    _, feats, labels = overfit_features
    model = train(feats, labels, small_cfg.replace(max_epochs=1)).model
    save_model(tmp_path / "m.ckpt", model, small_cfg, {"note": "x"})
    back, cfg, meta = load_model(tmp_path / "m.ckpt")
    assert cfg == small_cfg.replace(cache_dir="cache") and meta["note"] == "x"
    assert "cache_dir" not in meta["config"]
    np.testing.assert_array_equal(predict_proba(model, feats), predict_proba(back, feats))
    assert "mfb.v1v2.w" in model.checkpoint_tensors()


def test_single_view_model_runs(overfit_features):
    _, feats, labels = overfit_features
    cfg = RunConfig(**SMALL, views=("context",))
    model = MultiViewDetector(cfg).eval()
    assert set(model.encoders) == {"seq"}
    probs = model(collate(feats[:3], min_rows=model.min_rows))
    torch.testing.assert_close(probs.sum(-1), torch.ones(3))
