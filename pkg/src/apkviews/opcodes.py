"""Opcode category sequences and sliding-window opcode-gram matrices."""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dex import DexFile, opcode_name

DEFAULT_WINDOW = 4
DEFAULT_ROW_CAP = 200_000
N_CATEGORIES = 8


class OpcodeCategory(enum.IntEnum):
    MOVE = 0
    GET = 1
    PUT = 2
    IF = 3
    GOTO = 4
    INVOKE = 5
    RETURN = 6
    SEPARATOR = 7


class EmptySequence(UserWarning):
    pass


def category_of(mnemonic: str) -> OpcodeCategory | None:
    """Map a Dalvik mnemonic to its family, or None when it belongs to none."""
    if mnemonic.startswith("move"):
        return OpcodeCategory.MOVE
    if mnemonic.startswith("invoke"):
        return OpcodeCategory.INVOKE
    if mnemonic.startswith("return"):
        return OpcodeCategory.RETURN
    if mnemonic.startswith("goto"):
        return OpcodeCategory.GOTO
    if mnemonic.startswith("if-"):
        return OpcodeCategory.IF
    head = mnemonic.split("/")[0].split("-")[0]
    if head in ("aget", "iget", "sget"):
        return OpcodeCategory.GET
    if head in ("aput", "iput", "sput"):
        return OpcodeCategory.PUT
    return None


# opcode byte -> category (or None), precomputed once
OPCODE_CATEGORY = tuple(category_of(opcode_name(op)) for op in range(256))


def method_bodies(dex_files: list[DexFile]):
    """Local method bodies across all files, sorted by (class, name, proto)."""
    bodies = []
    for dex in dex_files:
        for ref, code in dex.local_methods():
            bodies.append((ref.key, code))
    bodies.sort(key=lambda b: b[0])
    return [code for _, code in bodies]


def categorize_opcodes(bodies) -> list[OpcodeCategory]:
    """Categorize each body's opcodes, with one SEPARATOR between consecutive bodies.

    ``bodies`` is an iterable of CodeItems (or of plain opcode lists), already
    in the order they should be read.
    """
    seq: list[OpcodeCategory] = []
    first = True
    for body in bodies:
        ops = [ins.opcode for ins in body.instructions] if hasattr(body, "instructions") else body
        if not first:
            seq.append(OpcodeCategory.SEPARATOR)
        first = False
        for op in ops:
            cat = OPCODE_CATEGORY[op]
            if cat is not None:
                seq.append(cat)
    return seq


@dataclass
class OpcodeGramMatrix:
    window_length: int
    data: np.ndarray  # (rows, 8 * window_length) uint8
    truncated_from: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def rows(self) -> int:
        return self.data.shape[0]


def build_gram_matrix(seq, window_length: int = DEFAULT_WINDOW, step: int = 1,
                      row_cap: int | None = DEFAULT_ROW_CAP) -> OpcodeGramMatrix:
    if window_length < 1:
        raise ValueError(f"window_length must be >= 1, got {window_length}")
    if step != 1:
        raise ValueError(f"only step 1 is supported, got {step}")
    codes = np.asarray([int(c) for c in seq], dtype=np.int64)
    n_rows = max(0, len(codes) - window_length + 1)
    width = N_CATEGORIES * window_length
    if n_rows == 0:
        warnings.warn(f"opcode sequence of length {len(codes)} shorter than window {window_length}",
                      EmptySequence, stacklevel=2)
        return OpcodeGramMatrix(window_length, np.zeros((0, width), dtype=np.uint8))
    truncated = None
    if row_cap is not None and n_rows > row_cap:
        truncated = n_rows
        n_rows = row_cap
    windows = np.lib.stride_tricks.sliding_window_view(codes, window_length)[:n_rows]
    data = np.zeros((n_rows, window_length, N_CATEGORIES), dtype=np.uint8)
    r = np.arange(n_rows)[:, None]
    b = np.arange(window_length)[None, :]
    data[r, b, windows] = 1
    return OpcodeGramMatrix(window_length, data.reshape(n_rows, width), truncated)


def opcode_gram_from_dex(dex_files, window_length=DEFAULT_WINDOW, row_cap=DEFAULT_ROW_CAP):
    seq = categorize_opcodes(method_bodies(dex_files))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySequence)
        return build_gram_matrix(seq, window_length, 1, row_cap)


# -- cache format --------------------------------------------------------------
# magic(4) | rows u32 | window_length u32 | truncated_from u32 (0 = none) | packed bits

_GRAM_MAGIC = b"OPGM"
_GRAM_HEADER = struct.Struct("<4sIII")


def dump_gram(m: OpcodeGramMatrix) -> bytes:
    packed = np.packbits(m.data, axis=1) if m.rows else b""
    return _GRAM_HEADER.pack(_GRAM_MAGIC, m.rows, m.window_length, m.truncated_from or 0) + bytes(packed)


def load_gram(blob: bytes) -> OpcodeGramMatrix:
    magic, rows, w, trunc = _GRAM_HEADER.unpack_from(blob, 0)
    if magic != _GRAM_MAGIC:
        raise ValueError(f"not an opcode-gram blob (magic {magic!r})")
    width = N_CATEGORIES * w
    packed_width = (width + 7) // 8
    raw = np.frombuffer(blob, dtype=np.uint8, offset=_GRAM_HEADER.size)
    if raw.size != rows * packed_width:
        raise ValueError(f"opcode-gram payload has {raw.size} bytes, expected {rows * packed_width}")
    data = np.unpackbits(raw.reshape(rows, packed_width), axis=1, count=width) if rows else np.zeros((0, width), np.uint8)
    return OpcodeGramMatrix(w, np.ascontiguousarray(data), trunc or None)
