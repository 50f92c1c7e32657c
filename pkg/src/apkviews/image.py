"""Byte images built from the denoised dex / xml / so streams."""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import axml, elf
from .dex import DexError, split_dex_stream, parse_header

log = logging.getLogger(__name__)

DEFAULT_PLANE_WIDTH = 256
DEFAULT_TARGET = (224, 224)
DEFAULT_SO_SECTIONS = (".text", ".data", ".rodata")


class ArtifactKind(enum.Enum):
    DEX = "dex"
    XML = "xml"
    SO = "so"


def _split(data, index):
    if index:
        return [data[off:off + n] for _, off, n in index]
    return [data] if data else []


def _denoise_one(part: bytes, kind: ArtifactKind, so_sections) -> bytes:
    if kind is ArtifactKind.DEX:
        h = parse_header(part)
        if h.data_off + h.data_size > len(part):
            raise DexError("data area exceeds file")
        return part[h.data_off:h.data_off + h.data_size]
    if kind is ArtifactKind.XML:
        return axml.content_payload(part)
    return elf.section_contents(part, so_sections)


def denoise(data: bytes, kind, index=None, so_sections=DEFAULT_SO_SECTIONS) -> tuple[bytes, bool]:
    """Keep only the data areas of each file in a concatenated stream.

    Returns (denoised bytes, malformed flag). A file that does not parse under
    its format is passed through unchanged and sets the flag.
    """
    kind = ArtifactKind(kind)
    if kind is ArtifactKind.DEX and not index:
        try:
            parts = split_dex_stream(data)
        except DexError:
            parts = _split(data, None)
    else:
        parts = _split(data, index)
    out = bytearray()
    malformed = False
    for part in parts:
        try:
            out += _denoise_one(part, kind, so_sections)
        except (ValueError, struct.error) as exc:
            log.warning("passing %s file through undenoised: %s", kind.value, exc)
            malformed = True
            out += part
    return bytes(out), malformed


def bytes_to_plane(data: bytes, width: int = DEFAULT_PLANE_WIDTH) -> np.ndarray:
    """Row-major uint8 plane of the given width; last row zero-padded."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if not data:
        return np.zeros((1, width), dtype=np.uint8)
    height = math.ceil(len(data) / width)
    plane = np.zeros(height * width, dtype=np.uint8)
    plane[:len(data)] = np.frombuffer(data, dtype=np.uint8)
    return plane.reshape(height, width)


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(plane: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centre bilinear resampling (source coordinate clamped)."""
    plane = np.asarray(plane, dtype=np.float64)
    h_out, w_out = target
    r0, r1, fy = _axis_weights(plane.shape[0], h_out)
    c0, c1, fx = _axis_weights(plane.shape[1], w_out)
    top = plane[r0][:, c0] * (1 - fx) + plane[r0][:, c1] * fx
    bottom = plane[r1][:, c0] * (1 - fx) + plane[r1][:, c1] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


@dataclass(frozen=True)
class ViewImage:
    pixels: np.ndarray  # (3, H, W) uint8, channels R=dex G=xml B=so

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def assemble_and_resize(planes, target=DEFAULT_TARGET) -> ViewImage:
    if len(planes) != 3:
        raise ValueError(f"expected 3 planes (dex, xml, so), got {len(planes)}")
    out = np.stack([bilinear_resize(p, target) for p in planes])
    return ViewImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def image_from_artifacts(artifacts, target=DEFAULT_TARGET, plane_width=DEFAULT_PLANE_WIDTH,
                         so_sections=DEFAULT_SO_SECTIONS) -> tuple[ViewImage, bool]:
    planes = []
    malformed = False
    for kind in ("dex", "xml", "so"):
        stream = artifacts.stream(kind)
        if not stream:
            planes.append(np.zeros((1, plane_width), dtype=np.uint8))
            continue
        clean, bad = denoise(stream, kind, artifacts.index(kind), so_sections)
        malformed |= bad
        planes.append(bytes_to_plane(clean, plane_width))
    return assemble_and_resize(planes, target), malformed


def save_png(img: ViewImage, path):
    from PIL import Image

    Image.fromarray(np.transpose(img.pixels, (1, 2, 0)), mode="RGB").save(path)


# -- cache format: magic(4) | height u32 | width u32 | channels u32 | uint8 payload

_IMG_MAGIC = b"VIMG"
_IMG_HEADER = struct.Struct("<4sIII")


def dump_image(img: ViewImage) -> bytes:
    c, h, w = img.pixels.shape
    return _IMG_HEADER.pack(_IMG_MAGIC, h, w, c) + img.pixels.tobytes()


def load_image(blob: bytes) -> ViewImage:
    magic, h, w, c = _IMG_HEADER.unpack_from(blob, 0)
    if magic != _IMG_MAGIC:
        raise ValueError(f"not a view-image blob (magic {magic!r})")
    px = np.frombuffer(blob, dtype=np.uint8, offset=_IMG_HEADER.size)
    if px.size != c * h * w:
        raise ValueError(f"image payload has {px.size} bytes, expected {c * h * w}")
    return ViewImage(px.reshape(c, h, w).copy())
