"""Per-APK feature extraction for the three views, and the on-disk feature cache."""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import callgraph, image, opcodes
from .callgraph import AbstractCallgraph
from .config import RunConfig
from .dex import parse_dex
from .ingest import ApkArtifacts, extract_artifacts, write_stream_cache

log = logging.getLogger(__name__)


@dataclass
class SampleFeatures:
    graph: AbstractCallgraph
    gram: opcodes.OpcodeGramMatrix
    image: image.ViewImage
    flags: dict = field(default_factory=dict)


_TABLES: dict = {}


def subsignature_table(cfg: RunConfig):
    key = cfg.permission_map or ""
    if key not in _TABLES:
        pmap = callgraph.load_permission_map(cfg.permission_map or None)
        _TABLES[key] = callgraph.build_subsignature_table(pmap)
    return _TABLES[key]


def features_from_artifacts(art: ApkArtifacts, cfg: RunConfig) -> SampleFeatures:
    dex_files = parse_dex(art.dex_bytes, art.index("dex") or None)
    graph = callgraph.callgraph_from_dex(dex_files, subsignature_table(cfg))
    gram = opcodes.opcode_gram_from_dex(dex_files, cfg.window_length, cfg.row_cap)
    img, malformed = image.image_from_artifacts(
        art, (cfg.image_size, cfg.image_size), cfg.plane_width, cfg.so_sections)
    flags = {
        "empty_graph": len(graph.node_ids) == 0,
        "empty_gram": gram.rows == 0,
        "gram_truncated_from": gram.truncated_from,
        "denoise_passthrough": malformed,
        "has_native": bool(art.so_bytes),
    }
    return SampleFeatures(graph, gram, img, flags)


def extract_features(apk_path, cfg: RunConfig) -> SampleFeatures:
    return features_from_artifacts(extract_artifacts(apk_path), cfg)


# -- cache ---------------------------------------------------------------------


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class FeatureCache:
    """One directory; per sample: stream blobs, graph, opcode-gram and image records."""

    def __init__(self, root, cfg: RunConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)

    def _p(self, sample_id, suffix):
        return self.root / f"{sample_id}.{suffix}"

    def stamp(self, apk_path) -> dict:
        return {"apk_sha256": _file_digest(apk_path), "features": self.cfg.feature_digest()}

    def is_fresh(self, sample_id, apk_path) -> bool:
        p = self._p(sample_id, "stamp.json")
        if not p.exists():
            return False
        try:
            return json.loads(p.read_text()) == self.stamp(apk_path)
        except (OSError, ValueError):
            return False

    def store(self, sample_id, apk_path, art: ApkArtifacts, feats: SampleFeatures):
        write_stream_cache(self.root, sample_id, art)
        buf = io.BytesIO()
        np.savez(buf, features=feats.graph.features, edges=feats.graph.edges,
                 node_ids=np.asarray(feats.graph.node_ids, dtype=str))
        self._p(sample_id, "graph.npz").write_bytes(buf.getvalue())
        self._p(sample_id, "opgram.bin").write_bytes(opcodes.dump_gram(feats.gram))
        self._p(sample_id, "image.bin").write_bytes(image.dump_image(feats.image))
        self._p(sample_id, "flags.json").write_text(json.dumps(feats.flags, sort_keys=True))
        # stamp last: its presence marks a complete record
        self._p(sample_id, "stamp.json").write_text(json.dumps(self.stamp(apk_path), sort_keys=True))

    def load(self, sample_id) -> SampleFeatures:
        with np.load(self._p(sample_id, "graph.npz")) as z:
            graph = AbstractCallgraph([str(s) for s in z["node_ids"]], z["features"].astype(np.uint8),
                                      z["edges"].astype(np.int64).reshape(-1, 2))
        gram = opcodes.load_gram(self._p(sample_id, "opgram.bin").read_bytes())
        img = image.load_image(self._p(sample_id, "image.bin").read_bytes())
        flags = json.loads(self._p(sample_id, "flags.json").read_text())
        return SampleFeatures(graph, gram, img, flags)

    def record_digest(self, sample_id) -> str:
        h = hashlib.sha256()
        for suffix in ("graph.npz", "opgram.bin", "image.bin"):
            h.update(self._p(sample_id, suffix).read_bytes())
        return h.hexdigest()

    def ensure(self, entry) -> tuple[SampleFeatures, bool]:
        """Load the cached record or compute and store it; returns (features, computed)."""
        if self.is_fresh(entry.sample_id, entry.apk_path):
            return self.load(entry.sample_id), False
        art = extract_artifacts(entry.apk_path)
        feats = features_from_artifacts(art, self.cfg)
        self.store(entry.sample_id, entry.apk_path, art, feats)
        return feats, True
