"""Local-to-global fusion of the three view embeddings.

Local: factorized bilinear pooling of each view pair, followed by signed
square root and L2 normalisation. Global: multi-head self-attention over the
pairwise vectors (one token per pair), projected and mean-pooled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .encoders import View
from .tensor import ShapeMismatch, dropout, glorot_uniform_, l2_normalize, sqrt_signed, sum_pool_1d

VIEW_ORDER = (View.SENSITIVITY, View.CONTEXT, View.ENVIRONMENT)


class MissingView(KeyError):
    pass


class NonFiniteAttention(ArithmeticError):
    pass


@dataclass(frozen=True)
class MfbConfig:
    k: int = 5
    o: int = 512
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.k < 1 or self.o < 1:
            raise ValueError(f"k and o must be >= 1, got k={self.k}, o={self.o}")


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    u_q: int = 256
    u_k: int = 256
    u_v: int = 256
    p_q: int = 64
    p_k: int = 64
    p_v: int = 64
    p_o: int = 1024

    def __post_init__(self):
        if self.p_q != self.p_k:
            raise ValueError(f"query and key head dims must match, got {self.p_q} and {self.p_k}")


def factor_tensor_to_matrix(w: torch.Tensor) -> torch.Tensor:
    """(d, k, o) factor tensor -> (d, k*o) matrix whose k-windows are the outputs."""
    d, k, o = w.shape
    return w.permute(0, 2, 1).reshape(d, o * k)


def matrix_to_factor_tensor(m: torch.Tensor, k: int) -> torch.Tensor:
    d, ko = m.shape
    return m.reshape(d, ko // k, k).permute(0, 2, 1)


class MFB(nn.Module):
    """Factorized bilinear pooling of an x (d-dim) and a y (e-dim) vector."""

    def __init__(self, d: int, e: int, cfg: MfbConfig = MfbConfig()):
        super().__init__()
        self.cfg = cfg
        self.d, self.e = d, e
        self.w = nn.Parameter(glorot_uniform_(torch.empty(d, cfg.k * cfg.o)))
        self.q = nn.Parameter(glorot_uniform_(torch.empty(e, cfg.k * cfg.o)))

    def raw(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Sum-pooled interaction before the normalisations."""
        if x.shape[-1] != self.d:
            raise ShapeMismatch(f"mfb: x shape {tuple(x.shape)} and W shape {tuple(self.w.shape)}")
        if y.shape[-1] != self.e:
            raise ShapeMismatch(f"mfb: y shape {tuple(y.shape)} and Q shape {tuple(self.q.shape)}")
        joint = (x @ self.w) * (y @ self.q)
        joint = dropout(joint, self.cfg.dropout_p, self.training)
        return sum_pool_1d(joint, self.cfg.k)

    def forward(self, x, y):
        return l2_normalize(sqrt_signed(self.raw(x, y)))


def view_pairs(views) -> list[tuple[View, View]]:
    """Pairs in the fixed order (V1V2, V1V3, V2V3) restricted to ``views``.

    A single view is paired with itself.
    """
    active = [v for v in VIEW_ORDER if v in set(views)]
    if not active:
        raise ValueError("at least one view is required")
    if len(active) == 1:
        return [(active[0], active[0])]
    return [(a, b) for i, a in enumerate(active) for b in active[i + 1:]]


def pair_key(a: View, b: View) -> str:
    return f"v{VIEW_ORDER.index(a) + 1}v{VIEW_ORDER.index(b) + 1}"


class GlobalFusion(nn.Module):
    """Two-stage-projected multi-head self-attention followed by mean pooling."""

    def __init__(self, o: int, cfg: AttentionConfig = AttentionConfig()):
        super().__init__()
        self.cfg = cfg
        h = cfg.heads

        def param(*shape):
            return nn.Parameter(glorot_uniform_(torch.empty(*shape)))

        self.w_q = param(cfg.u_q, o)
        self.w_k = param(cfg.u_k, o)
        self.w_v = param(cfg.u_v, o)
        self.head_q = param(h, cfg.p_q, cfg.u_q)
        self.head_k = param(h, cfg.p_k, cfg.u_k)
        self.head_v = param(h, cfg.p_v, cfg.u_v)
        self.w_o = param(cfg.p_o, h * cfg.p_v)

    def attend(self, m: torch.Tensor):
        """m: (B, T, o) -> (per-token outputs (B, T, p_o), weights (B, h, T, T))."""
        q = torch.einsum("bto,uo->btu", m, self.w_q)
        k = torch.einsum("bto,uo->btu", m, self.w_k)
        v = torch.einsum("bto,uo->btu", m, self.w_v)
        qh = torch.einsum("btu,hpu->bhtp", q, self.head_q)
        kh = torch.einsum("btu,hpu->bhtp", k, self.head_k)
        vh = torch.einsum("btu,hpu->bhtp", v, self.head_v)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(self.cfg.p_k)
        if not torch.isfinite(scores).all():
            raise NonFiniteAttention("attention scores overflowed")
        weights = torch.softmax(scores, dim=-1)
        heads = weights @ vh  # (B, h, T, p_v)
        concat = heads.permute(0, 2, 1, 3).reshape(m.shape[0], m.shape[1], -1)
        return concat @ self.w_o.T, weights

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        out, _ = self.attend(m)
        return out.mean(dim=1)


class FusionBlock(nn.Module):
    """Pairwise pooling then attention; parameters live under ``mfb.{pair}.*`` and ``attn.*``."""

    def __init__(self, d: int, mfb: MfbConfig = MfbConfig(), attn: AttentionConfig = AttentionConfig(),
                 views=VIEW_ORDER):
        super().__init__()
        self.pairs = view_pairs(views)
        self.mfb = nn.ModuleDict({pair_key(a, b): MFB(d, d, mfb) for a, b in self.pairs})
        self.attn = GlobalFusion(mfb.o, attn)

    def local_fuse(self, embeddings: dict) -> torch.Tensor:
        """dict View -> (B, d) tensor  ->  (B, n_pairs, o), rows in pair order."""
        rows = []
        for a, b in self.pairs:
            for v in (a, b):
                if v not in embeddings:
                    raise MissingView(f"view {v.value} missing from fusion input")
            rows.append(self.mfb[pair_key(a, b)](embeddings[a], embeddings[b]))
        return torch.stack(rows, dim=-2)

    def forward(self, embeddings: dict) -> torch.Tensor:
        return self.attn(self.local_fuse(embeddings))
