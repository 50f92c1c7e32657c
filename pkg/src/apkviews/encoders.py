"""Per-view encoders: graph convolution, opcode-gram TextCNN and a small image CNN.

Each encoder maps a batch of one view to (B, d) embeddings. Empty inputs (no
graph nodes, zero-row opcode matrices) produce exact zero embeddings and are
reported through the ``empty`` mask of the batch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .tensor import Linear, glorot_uniform_


class View(enum.Enum):
    SENSITIVITY = "sensitivity"
    CONTEXT = "context"
    ENVIRONMENT = "environment"


@dataclass
class ViewEmbedding:
    view: View
    vector: torch.Tensor


def normalized_adjacency(n_nodes: int, edges: np.ndarray):
    """Entries of D^-1/2 (A + I) D^-1/2 over the undirected closure of ``edges``.

    A is binary: duplicate and reversed edges collapse, and a self-call
    does not double the self-loop weight.
    """
    pairs = {(i, i) for i in range(n_nodes)}
    for a, b in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        pairs.add((int(a), int(b)))
        pairs.add((int(b), int(a)))
    ordered = sorted(pairs)
    rows = np.fromiter((p[0] for p in ordered), dtype=np.int64, count=len(ordered))
    cols = np.fromiter((p[1] for p in ordered), dtype=np.int64, count=len(ordered))
    deg = np.bincount(rows, minlength=n_nodes).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return rows, cols, vals


@dataclass
class GraphBatch:
    x: torch.Tensor  # (N, 15)
    rows: torch.Tensor
    cols: torch.Tensor
    vals: torch.Tensor
    graph_of_node: torch.Tensor  # (N,)
    n_graphs: int

    @property
    def empty(self) -> torch.Tensor:
        counts = torch.bincount(self.graph_of_node, minlength=self.n_graphs)
        return counts == 0

    @classmethod
    def from_graphs(cls, graphs, dtype=torch.float32):
        xs, rows, cols, vals, owner = [], [], [], [], []
        offset = 0
        for gi, g in enumerate(graphs):
            n = len(g.node_ids)
            if n:
                r, c, v = normalized_adjacency(n, g.edges)
                rows.append(r + offset)
                cols.append(c + offset)
                vals.append(v)
                xs.append(np.asarray(g.features, dtype=np.float64))
                owner.append(np.full(n, gi, dtype=np.int64))
            offset += n
        width = graphs[0].features.shape[1] if graphs else 15

        def cat(parts, dt, shape=(0,)):
            return np.concatenate(parts) if parts else np.zeros(shape, dtype=dt)

        return cls(
            x=torch.as_tensor(cat(xs, np.float64, (0, width)), dtype=dtype),
            rows=torch.as_tensor(cat(rows, np.int64)),
            cols=torch.as_tensor(cat(cols, np.int64)),
            vals=torch.as_tensor(cat(vals, np.float64), dtype=dtype),
            graph_of_node=torch.as_tensor(cat(owner, np.int64)),
            n_graphs=len(graphs),
        )


class GCNEncoder(nn.Module):
    def __init__(self, in_dim: int = 15, hidden: int = 64, layers: int = 2, out_dim: int = 256):
        super().__init__()
        dims = [in_dim] + [hidden] * layers
        self.layers = nn.ModuleList(Linear(a, b, bias=False) for a, b in zip(dims, dims[1:]))
        self.out = Linear(dims[-1], out_dim)

    def propagate(self, batch: GraphBatch) -> torch.Tensor:
        """Node representations after the graph-convolution rounds."""
        h = batch.x
        for layer in self.layers:
            hw = layer(h)
            msg = hw[batch.cols] * batch.vals[:, None]
            h = torch.relu(torch.zeros_like(hw).index_add_(0, batch.rows, msg))
        return h

    def readout(self, h: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        sums = h.new_zeros(batch.n_graphs, h.shape[1]).index_add_(0, batch.graph_of_node, h)
        counts = torch.bincount(batch.graph_of_node, minlength=batch.n_graphs).clamp(min=1)
        return sums / counts[:, None].to(h.dtype)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        pooled = self.readout(self.propagate(batch), batch)
        out = self.out(pooled)
        return out.masked_fill(batch.empty[:, None], 0.0)


@dataclass
class GramBatch:
    x: torch.Tensor  # (B, width, R) channels-first, zero padded
    lengths: torch.Tensor  # (B,) true row counts

    @property
    def empty(self) -> torch.Tensor:
        return self.lengths == 0

    @classmethod
    def from_matrices(cls, mats, min_rows: int = 1, dtype=torch.float32):
        width = mats[0].data.shape[1]
        rows = max([m.rows for m in mats] + [min_rows])
        x = np.zeros((len(mats), rows, width), dtype=np.float32)
        for i, m in enumerate(mats):
            x[i, :m.rows] = m.data
        return cls(torch.as_tensor(x, dtype=dtype).transpose(1, 2).contiguous(),
                   torch.as_tensor([m.rows for m in mats], dtype=torch.int64))


class TextCNNEncoder(nn.Module):
    """Convolutions spanning the full row width, max-pooled over valid windows."""

    def __init__(self, row_width: int, kernel_heights=(3, 4, 5), filters: int = 64, out_dim: int = 256):
        super().__init__()
        self.kernel_heights = tuple(kernel_heights)
        self.convs = nn.ModuleList()
        for kh in self.kernel_heights:
            conv = nn.Conv1d(row_width, filters, kh)
            glorot_uniform_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.convs.append(conv)
        self.out = Linear(filters * len(self.kernel_heights), out_dim)

    @property
    def min_rows(self) -> int:
        return max(self.kernel_heights)

    def pooled(self, batch: GramBatch) -> torch.Tensor:
        x = batch.x
        if x.shape[2] < self.min_rows:
            x = F.pad(x, (0, self.min_rows - x.shape[2]))
        feats = []
        for kh, conv in zip(self.kernel_heights, self.convs):
            resp = torch.relu(conv(x))  # (B, F, R - kh + 1)
            n_valid = torch.clamp(batch.lengths - kh + 1, min=1)
            pos = torch.arange(resp.shape[2])
            mask = pos[None, :] < n_valid[:, None]
            resp = resp.masked_fill(~mask[:, None, :], float("-inf"))
            feats.append(resp.max(dim=2).values)
        return torch.cat(feats, dim=1)

    def forward(self, batch: GramBatch) -> torch.Tensor:
        pooled = self.pooled(batch).masked_fill(batch.empty[:, None], 0.0)
        return self.out(pooled).masked_fill(batch.empty[:, None], 0.0)


class ImageCNNEncoder(nn.Module):
    """Stages of 3x3 conv + ReLU + 2x2 mean pooling, then a linear map."""

    def __init__(self, image_size=(224, 224), channels=(8, 16, 32, 32), out_dim: int = 256, in_channels: int = 3):
        super().__init__()
        self.convs = nn.ModuleList()
        c = in_channels
        h, w = image_size
        for out_c in channels:
            conv = nn.Conv2d(c, out_c, 3, padding=1)
            glorot_uniform_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.convs.append(conv)
            c = out_c
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValueError(f"image {image_size} too small for {len(channels)} pooling stages")
        self.flat_dim = c * h * w
        self.out = Linear(self.flat_dim, out_dim)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.avg_pool2d(torch.relu(conv(x)), 2)
        return x.flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.features(x))


def image_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack ViewImages into a (B, 3, H, W) tensor scaled to [0, 1]."""
    arr = np.stack([img.pixels for img in images]).astype(np.float32) / 255.0
    return torch.as_tensor(arr, dtype=dtype)
