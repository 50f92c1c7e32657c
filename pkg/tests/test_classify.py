import math
from fractions import Fraction

import pytest
import torch
from hypothesis import given, settings, strategies as st

from apkviews.classify import (Classifier, ClassifierConfig, TooFewSlots, aut, cross_entropy, evaluate,
                               evaluate_slots)
from apkviews.tensor import ShapeMismatch


def zeroed(dims=(8, 4, 2)):
    clf = Classifier(ClassifierConfig(dims, 0.2)).eval()
    with torch.no_grad():
        for p in clf.parameters():
            p.zero_()
    return clf


def test_zero_weights_half_half():
    out = zeroed()(torch.randn(3, 8))
    torch.testing.assert_close(out, torch.full((3, 2), 0.5))


def test_default_layer_dims():
    clf = Classifier()
    assert [tuple(l.weight.shape) for l in clf.layers] == [(512, 1024), (256, 512), (128, 256), (64, 128), (2, 64)]


def test_outputs_sum_to_one_and_deterministic():
    torch.manual_seed(0)
    clf = Classifier(ClassifierConfig((8, 6, 2), 0.2)).eval()
    x = torch.randn(5, 8) * 4
    a, b = clf(x), clf(x)
    torch.testing.assert_close(a.sum(-1), torch.ones(5))
    assert torch.equal(a, b)


def test_input_shape_checked():
    with pytest.raises(ShapeMismatch):
        Classifier(ClassifierConfig((8, 2), 0.0))(torch.ones(1, 7))


def test_loss_at_half():
    loss = cross_entropy(torch.tensor([[1.0, 0.0]]), torch.tensor([[0.5, 0.5]]))
    assert math.isclose(float(loss), 2 * math.log(2), rel_tol=1e-6)


def test_loss_perfect_prediction_small():
    loss = cross_entropy(torch.tensor([[0.0, 1.0]], dtype=torch.float64), torch.tensor([[0.0, 1.0]], dtype=torch.float64))
    assert 0 <= float(loss) <= 2.0000001e-7


def test_loss_finite_at_extremes():
    loss = cross_entropy(torch.tensor([[1.0, 0.0]]), torch.tensor([[0.0, 1.0]]))
    assert torch.isfinite(loss).all() and float(loss) > 20


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 0.999))
def test_loss_symmetric_under_class_swap(p):
    probs = torch.tensor([[p, 1 - p]], dtype=torch.float64)
    a = cross_entropy(torch.tensor([[1.0, 0.0]], dtype=torch.float64), probs)
    b = cross_entropy(torch.tensor([[0.0, 1.0]], dtype=torch.float64), probs.flip(-1))
    assert math.isclose(float(a), float(b), rel_tol=1e-12)


def test_evaluate_example():
    # tp=3 fp=1 fn=1 tn=5 with malicious = 0 positive
    labels = [0, 0, 0, 1, 0, 1, 1, 1, 1, 1]
    preds = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1]
    r = evaluate(labels, preds)
    assert (r.tp, r.fp, r.fn, r.tn) == (3, 1, 1, 5)
    assert r.precision == 0.75 and r.recall == 0.75 and r.accuracy == 0.8 and r.f1 == 0.75


def test_evaluate_all_correct():
    r = evaluate([0, 1, 0, 1], [0, 1, 0, 1])
    assert r.precision == r.recall == r.accuracy == r.f1 == 1.0


def test_no_predicted_positives():
    r = evaluate([0, 1, 1], [1, 1, 1])
    assert r.precision is None and r.recall == 0.0 and r.f1 is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_counts_sum(pairs):
    labels, preds = zip(*pairs)
    r = evaluate(labels, preds)
    assert r.total == len(pairs)


def test_aut_examples():
    assert aut([1.0, 0.5]) == 0.75
    assert aut([0.9, 0.8, 1.0]) == pytest.approx(0.875, abs=1e-12)


def test_aut_needs_two_slots():
    with pytest.raises(TooFewSlots):
        aut([0.9])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.integers(2, 12))
def test_aut_constant_identity(c, n):
    assert aut([c] * n) == c


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=12))
def test_aut_matches_exact_rational(vals):
    f = [Fraction(v) for v in vals]
    expect = sum((f[i] + f[i + 1]) / 2 for i in range(len(f) - 1)) / (len(f) - 1)
    assert abs(aut(vals) - float(expect)) <= 1e-12


def test_evaluate_slots():
    slots = [2020, 2019, 2020, 2019]
    r = evaluate_slots(slots, [0, 0, 1, 1], [0, 0, 1, 0])
    assert [row["slot"] for row in r.per_slot] == [2019, 2020]
    assert r.per_slot[0]["accuracy"] == 0.5 and r.per_slot[1]["accuracy"] == 1.0
    assert r.aut["accuracy"] == 0.75
    single = evaluate_slots([2019] * 4, [0, 0, 1, 1], [0, 0, 1, 0])
    assert single.aut is None and len(single.per_slot) == 1
