"""Dense tensor ops, initialisation, gradient checking and checkpoint files.

Autodiff and storage come from torch; this module adds shape-checked op
wrappers, the zero-safe normalisations used by the fusion block, Glorot
initialisation and a checksummed checkpoint container.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import random
import struct

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _mismatch(op, a, b):
    raise ShapeMismatch(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != (b.shape[-2] if b.dim() > 1 else b.shape[0]):
        _mismatch("matmul", a, b)
    return a @ b


def _broadcastable(a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
        return True
    except RuntimeError:
        return False


def add(a, b):
    if not _broadcastable(a, b):
        _mismatch("add", a, b)
    return a + b


def mul(a, b):
    if not _broadcastable(a, b):
        _mismatch("mul", a, b)
    return a * b


def relu(x):
    return torch.relu(x)


def softmax(x, dim: int = -1):
    return torch.softmax(x, dim=dim)


def dropout(x, p: float, training: bool):
    """Inverted dropout: survivors are scaled by 1/(1-p) while training."""
    if not training or p == 0.0:
        return x
    return F.dropout(x, p=p, training=True)


def conv1d(x, weight, bias=None):
    if x.shape[-2] != weight.shape[1]:
        _mismatch("conv1d", x, weight)
    return F.conv1d(x, weight, bias)


def conv2d(x, weight, bias=None, padding=0):
    if x.shape[-3] != weight.shape[1]:
        _mismatch("conv2d", x, weight)
    return F.conv2d(x, weight, bias, padding=padding)


def sum_pool_1d(x: torch.Tensor, k: int) -> torch.Tensor:
    """Sum over non-overlapping windows of size k along the last axis."""
    if k < 1 or x.shape[-1] % k:
        raise ShapeMismatch(f"sum_pool_1d: last axis {x.shape[-1]} not divisible by window {k}")
    return x.reshape(*x.shape[:-1], x.shape[-1] // k, k).sum(-1)


def mean_over_axis(x, dim: int):
    return x.mean(dim=dim)


class _SignedSqrt(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z):
        out = torch.sign(z) * torch.sqrt(torch.abs(z))
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad):
        (out,) = ctx.saved_tensors
        # d/dz sign(z)sqrt|z| = 1 / (2 sqrt|z|); taken as 0 at z = 0
        mag = out.abs()
        safe = torch.where(mag > 0, mag, torch.ones_like(mag))
        return torch.where(mag > 0, grad / (2 * safe), torch.zeros_like(grad))


def sqrt_signed(z):
    return _SignedSqrt.apply(z)


def l2_normalize(z, dim: int = -1):
    """Unit L2 norm along ``dim``; an all-zero vector stays zero."""
    norm = torch.linalg.vector_norm(z, dim=dim, keepdim=True)
    safe = torch.where(norm > 0, norm, torch.ones_like(norm))
    return torch.where(norm > 0, z / safe, torch.zeros_like(z))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform_(w: torch.Tensor) -> torch.Tensor:
    fan_in, fan_out = nn.init._calculate_fan_in_and_fan_out(w)
    bound = glorot_bound(fan_in, fan_out)
    with torch.no_grad():
        return w.uniform_(-bound, bound)


class Linear(nn.Module):
    """y = x W^T + b with Glorot-uniform W and zero b."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        glorot_uniform_(self.weight)
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(
                f"linear: input shape {tuple(x.shape)} and weight shape {tuple(self.weight.shape)}")
        return F.linear(x, self.weight, self.bias)


def grad_check(f, x: torch.Tensor, eps: float = 1e-3) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor. The check runs in float64;
    relative error per entry is |a - n| / max(1e-8, |a| + |n|).
    """
    x0 = x.detach().to(torch.float64).clone()
    xa = x0.clone().requires_grad_(True)
    out = f(xa)
    if out.numel() != 1:
        raise ShapeMismatch(f"grad_check: f must return a scalar, got shape {tuple(out.shape)}")
    if not torch.isfinite(out).all():
        raise NonFiniteValue(f"grad_check: f(x) = {out.item()}")
    (analytic,) = torch.autograd.grad(out, xa, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x0)
    if not torch.isfinite(analytic).all():
        raise NonFiniteValue("grad_check: non-finite analytic gradient")
    numeric = torch.zeros_like(x0)
    flat = x0.view(-1)
    num_flat = numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = f(x0).item()
            flat[i] = orig - eps
            fm = f(x0).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteValue(f"grad_check: non-finite value at entry {i}")
            num_flat[i] = (fp - fm) / (2 * eps)
    err = (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=1e-8)
    return float(err.max().item()) if err.numel() else 0.0


def flat_parameter_fn(module: nn.Module, loss_fn):
    """Return (theta, f) with f(theta) = loss_fn(module with parameters theta).

    Lets grad_check differentiate a whole model with respect to all of its
    parameters at once.
    """
    names = [n for n, p in module.named_parameters() if p.requires_grad]
    params = [p for _, p in module.named_parameters() if p.requires_grad]
    shapes = [p.shape for p in params]
    sizes = [p.numel() for p in params]
    theta = torch.cat([p.detach().reshape(-1) for p in params])

    def f(vec):
        chunks = torch.split(vec, sizes)
        state = {n: c.reshape(s) for n, c, s in zip(names, chunks, shapes)}
        return loss_fn(lambda *a, **k: torch.func.functional_call(module, state, a, k))

    return theta, f


# -- checkpoint container --------------------------------------------------------
# "AVCK" | version u32 | meta_len u32 | meta JSON | count u32 |
#   per tensor: name_len u16 | name | ndim u8 | dims u32[ndim] | float32 LE payload
# | sha256 of all preceding bytes

CKPT_MAGIC = b"AVCK"
CKPT_VERSION = 1


def dumps_checkpoint(tensors: dict, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(meta_blob)) + meta_blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        src = tensors[name].detach().cpu().numpy() if torch.is_tensor(tensors[name]) else tensors[name]
        # np.array keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
        arr = np.array(src, dtype="<f4", order="C")
        enc = name.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)) + enc + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def loads_checkpoint(blob: bytes) -> tuple[dict, dict]:
    if len(blob) < 44 or blob[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        tensors[name] = torch.from_numpy(arr.copy())
    return tensors, meta


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> str:
    blob = dumps_checkpoint(tensors, meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob[-32:].hex()


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())


def checkpoint_digest(tensors: dict, meta: dict | None = None) -> str:
    return dumps_checkpoint(tensors, meta)[-32:].hex()
