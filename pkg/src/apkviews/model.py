"""The full detector: view encoders -> fusion -> classifier."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .classify import Classifier, ClassifierConfig
from .config import RunConfig
from .encoders import (GCNEncoder, GramBatch, GraphBatch, ImageCNNEncoder, TextCNNEncoder, View,
                       image_tensor)
from .fusion import AttentionConfig, FusionBlock, MfbConfig
from .opcodes import N_CATEGORIES


@dataclass
class Batch:
    graphs: GraphBatch
    grams: GramBatch
    images: torch.Tensor
    labels: torch.Tensor | None = None

    def __len__(self):
        return self.images.shape[0]


def collate(samples, labels=None, min_rows: int = 1, dtype=torch.float32) -> Batch:
    y = None if labels is None else torch.as_tensor([int(v) for v in labels], dtype=torch.int64)
    return Batch(
        GraphBatch.from_graphs([s.graph for s in samples], dtype=dtype),
        GramBatch.from_matrices([s.gram for s in samples], min_rows=min_rows, dtype=dtype),
        image_tensor([s.image for s in samples], dtype=dtype),
        y,
    )


class MultiViewDetector(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.views = tuple(View(v) for v in cfg.views)
        d = cfg.embed_dim
        enc = {}
        if View.SENSITIVITY in self.views:
            enc["gcn"] = GCNEncoder(15, cfg.gcn_hidden, cfg.gcn_layers, d)
        if View.CONTEXT in self.views:
            enc["seq"] = TextCNNEncoder(N_CATEGORIES * cfg.window_length, cfg.kernel_heights, cfg.filters, d)
        if View.ENVIRONMENT in self.views:
            enc["img"] = ImageCNNEncoder((cfg.image_size, cfg.image_size), cfg.cnn_channels, d)
        self.encoders = nn.ModuleDict(enc)
        self.fusion = FusionBlock(
            d,
            MfbConfig(cfg.mfb_k, cfg.mfb_o, cfg.mfb_dropout),
            AttentionConfig(cfg.attn_heads, cfg.attn_u, cfg.attn_u, cfg.attn_u,
                            cfg.attn_p, cfg.attn_p, cfg.attn_p, cfg.fused_dim),
            self.views,
        )
        self.classifier = Classifier(ClassifierConfig((cfg.fused_dim, *cfg.hidden_dims, 2), cfg.dropout))
        if cfg.freeze_encoders:
            self.encoders.requires_grad_(False)

    @property
    def min_rows(self) -> int:
        return self.encoders["seq"].min_rows if "seq" in self.encoders else 1

    def embed(self, batch: Batch) -> dict:
        out = {}
        if "gcn" in self.encoders:
            out[View.SENSITIVITY] = self.encoders["gcn"](batch.graphs)
        if "seq" in self.encoders:
            out[View.CONTEXT] = self.encoders["seq"](batch.grams)
        if "img" in self.encoders:
            out[View.ENVIRONMENT] = self.encoders["img"](batch.images)
        return out

    def fused(self, batch: Batch) -> torch.Tensor:
        return self.fusion(self.embed(batch))

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.classifier(self.fused(batch))

    # checkpoint names: fusion parameters appear as mfb.* / attn.*
    def checkpoint_tensors(self) -> dict:
        return {_to_ckpt(k): v for k, v in self.state_dict().items()}

    def load_checkpoint_tensors(self, tensors: dict):
        self.load_state_dict({_from_ckpt(k): v for k, v in tensors.items()})


def _to_ckpt(name: str) -> str:
    return name[len("fusion."):] if name.startswith("fusion.") else name


def _from_ckpt(name: str) -> str:
    return "fusion." + name if name.startswith(("mfb.", "attn.")) else name
