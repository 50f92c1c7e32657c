import numpy as np
import pytest

from apkviews.config import RunConfig
from apkviews.encoders import View
from apkviews.features import extract_features
from apkviews.ingest import Label, load_manifest
from apkviews.synth import make_corpus, marker_plan


def test_single_mode_one_marker_each():
    plan = marker_plan(9, "single", np.random.default_rng(0))
    assert all(len(m) == 1 for m in plan)
    assert sorted(next(iter(m)).value for m in plan) == sorted([v.value for v in View] * 3)
    with pytest.raises(ValueError):
        marker_plan(3, "some", np.random.default_rng(0))


def test_corpus_layout_and_determinism(tmp_path):
    m1, s1 = make_corpus(tmp_path / "a", 3, seed=5, years=(2019, 2020))
    m2, _ = make_corpus(tmp_path / "b", 3, seed=5, years=(2019, 2020))
    entries = load_manifest(m1)
    assert [e.label for e in entries] == [Label.MALICIOUS] * 3 + [Label.BENIGN] * 3
    assert {e.timestamp_year for e in entries if e.label is Label.BENIGN} == {2019, 2020}
    assert all(s.markers == frozenset(View) for s in s1[:3]) and not any(s.markers for s in s1[3:])
    for a, b in zip(entries, load_manifest(m2)):
        assert a.apk_path.read_bytes() == b.apk_path.read_bytes()


def test_markers_visible_in_features(tmp_path):
    manifest, _ = make_corpus(tmp_path, 2, seed=1)
    cfg = RunConfig(image_size=32, plane_width=64)
    feats = [extract_features(e.apk_path, cfg) for e in load_manifest(manifest)]
    mal, ben = feats[0], feats[-1]
    assert mal.graph.features.any() and not ben.graph.features.any()
    assert mal.image.pixels[2].mean() > ben.image.pixels[2].mean()
    # if/goto windows only in the marked app
    if_goto = np.zeros(32, dtype=np.uint8)
    if_goto[[3, 8 + 4, 16 + 3, 24 + 4]] = 1
    assert (mal.gram.data == if_goto).all(axis=1).any()
    assert not (ben.gram.data == if_goto).all(axis=1).any()
