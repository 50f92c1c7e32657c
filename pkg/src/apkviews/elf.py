"""ELF section-table parsing for shared objects."""

from __future__ import annotations

import struct
from dataclasses import dataclass

SHT_NOBITS = 8


class MalformedElf(ValueError):
    pass


@dataclass(frozen=True)
class Section:
    name: str
    type: int
    offset: int
    size: int


def parse_sections(data: bytes) -> list[Section]:
    if len(data) < 16 or data[:4] != b"\x7fELF":
        raise MalformedElf("missing ELF magic")
    ei_class, ei_data = data[4], data[5]
    if ei_class not in (1, 2) or ei_data not in (1, 2):
        raise MalformedElf(f"unsupported ELF class/data ({ei_class}, {ei_data})")
    e = "<" if ei_data == 1 else ">"
    is64 = ei_class == 2
    ehsize = 64 if is64 else 52
    if len(data) < ehsize:
        raise MalformedElf("truncated ELF header")
    if is64:
        shoff = struct.unpack_from(e + "Q", data, 0x28)[0]
        shentsize, shnum, shstrndx = struct.unpack_from(e + "HHH", data, 0x3A)
        shfmt = e + "IIQQQQIIQQ"
    else:
        shoff = struct.unpack_from(e + "I", data, 0x20)[0]
        shentsize, shnum, shstrndx = struct.unpack_from(e + "HHH", data, 0x2E)
        shfmt = e + "IIIIIIIIII"
    if shnum == 0:
        return []
    if shentsize < struct.calcsize(shfmt) or shoff + shnum * shentsize > len(data):
        raise MalformedElf(f"section table [{shoff:#x}, +{shnum}x{shentsize}) out of bounds")
    raw = []
    for i in range(shnum):
        fields = struct.unpack_from(shfmt, data, shoff + i * shentsize)
        name_off, stype, _flags, _addr, off, size = fields[:6]
        raw.append((name_off, stype, off, size))
    if shstrndx >= shnum:
        raise MalformedElf(f"shstrndx {shstrndx} >= {shnum}")
    _, _, str_off, str_size = raw[shstrndx]
    if str_off + str_size > len(data):
        raise MalformedElf("section name table out of bounds")
    names = data[str_off:str_off + str_size]
    sections = []
    for name_off, stype, off, size in raw:
        end = names.find(b"\x00", name_off)
        name = names[name_off:end if end >= 0 else None].decode("ascii", "replace")
        if stype != SHT_NOBITS and off + size > len(data):
            raise MalformedElf(f"section {name!r} [{off:#x}, {off + size:#x}) out of bounds")
        sections.append(Section(name, stype, off, size))
    return sections


def section_contents(data: bytes, names=(".text", ".data", ".rodata")) -> bytes:
    """Concatenate the contents of whitelisted sections in section-table order."""
    wanted = set(names)
    out = bytearray()
    for s in parse_sections(data):
        if s.name in wanted and s.type != SHT_NOBITS:
            out += data[s.offset:s.offset + s.size]
    return bytes(out)
