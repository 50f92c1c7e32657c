"""Android binary XML chunk walking."""

from __future__ import annotations

import struct
from dataclasses import dataclass

RES_XML_TYPE = 0x0003
RES_STRING_POOL_TYPE = 0x0001
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_CDATA_TYPE = 0x0104
RES_XML_RESOURCE_MAP_TYPE = 0x0180

# chunks whose payloads carry document content; the rest is bookkeeping
CONTENT_CHUNKS = frozenset({RES_STRING_POOL_TYPE, RES_XML_START_ELEMENT_TYPE, RES_XML_END_ELEMENT_TYPE})


class MalformedAxml(ValueError):
    pass


@dataclass(frozen=True)
class Chunk:
    type: int
    header_size: int
    size: int
    offset: int  # absolute offset of the chunk header in the document

    @property
    def payload_range(self) -> tuple[int, int]:
        return self.offset + self.header_size, self.offset + self.size


def walk_chunks(data: bytes) -> list[Chunk]:
    """Return the top-level chunks nested in an RES_XML_TYPE document."""
    if len(data) < 8:
        raise MalformedAxml("document shorter than a chunk header")
    doc_type, doc_header, doc_size = struct.unpack_from("<HHI", data, 0)
    if doc_type != RES_XML_TYPE:
        raise MalformedAxml(f"not a binary XML document (type {doc_type:#06x})")
    if doc_header < 8 or doc_size > len(data) or doc_size < doc_header:
        raise MalformedAxml(f"bad document header (header {doc_header}, size {doc_size}, have {len(data)})")
    chunks = []
    pos = doc_header
    while pos < doc_size:
        if pos + 8 > doc_size:
            raise MalformedAxml(f"truncated chunk header at {pos:#x}")
        ctype, hsize, csize = struct.unpack_from("<HHI", data, pos)
        if hsize < 8 or csize < hsize or pos + csize > doc_size:
            raise MalformedAxml(f"bad chunk at {pos:#x}: type {ctype:#06x} header {hsize} size {csize}")
        chunks.append(Chunk(ctype, hsize, csize, pos))
        pos += csize
    return chunks


def content_payload(data: bytes) -> bytes:
    """Concatenate string-pool and element chunk payloads, headers dropped."""
    out = bytearray()
    for c in walk_chunks(data):
        if c.type in CONTENT_CHUNKS:
            start, end = c.payload_range
            out += data[start:end]
    return bytes(out)


def string_pool(data: bytes) -> list[str]:
    """Decode the first string pool of a document (UTF-8 or UTF-16)."""
    for c in walk_chunks(data):
        if c.type != RES_STRING_POOL_TYPE:
            continue
        count, _styles, flags, strings_start, _ = struct.unpack_from("<IIIII", data, c.offset + 8)
        offs = struct.unpack_from(f"<{count}I", data, c.offset + c.header_size)
        base = c.offset + strings_start
        utf8 = bool(flags & 0x100)
        out = []
        for o in offs:
            p = base + o
            if utf8:
                p += 2 if data[p] & 0x80 else 1  # utf-16 length
                n = data[p]
                if n & 0x80:
                    n = ((n & 0x7F) << 8) | data[p + 1]
                    p += 2
                else:
                    p += 1
                out.append(data[p:p + n].decode("utf-8", "replace"))
            else:
                n = struct.unpack_from("<H", data, p)[0]
                p += 2
                if n & 0x8000:
                    n = ((n & 0x7FFF) << 16) | struct.unpack_from("<H", data, p)[0]
                    p += 2
                out.append(data[p:p + 2 * n].decode("utf-16-le", "replace"))
        return out
    return []
