"""Writers for small but well-formed DEX, binary XML, ELF and APK files.

Used to hand-assemble test fixtures and to generate synthetic corpora.
"""

from __future__ import annotations

import hashlib
import io
import struct
import zipfile
import zlib
from dataclasses import dataclass, field

from .dex import FORMAT_UNITS, OPCODES

_OPCODE_BY_NAME = {name: op for op, (name, _fmt) in OPCODES.items()}

_SHORTY = {"V": "V", "Z": "Z", "B": "B", "S": "S", "C": "C", "I": "I", "J": "J", "F": "F", "D": "D"}


def _uleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _mutf8(s: str) -> bytes:
    out = bytearray()
    for unit in struct.unpack(f"<{len(s.encode('utf-16-le')) // 2}H", s.encode("utf-16-le")):
        if 0 < unit < 0x80:
            out.append(unit)
        elif unit < 0x800:
            out += bytes([0xC0 | (unit >> 6), 0x80 | (unit & 0x3F)])
        else:
            out += bytes([0xE0 | (unit >> 12), 0x80 | ((unit >> 6) & 0x3F), 0x80 | (unit & 0x3F)])
    return bytes(out)


def _utf16_units(s: str) -> int:
    return len(s.encode("utf-16-le")) // 2


def _align(buf: bytearray, n: int = 4):
    while len(buf) % n:
        buf.append(0)


@dataclass(frozen=True)
class MethodSig:
    class_descriptor: str
    name: str
    return_type: str = "V"
    params: tuple[str, ...] = ()


@dataclass(frozen=True)
class FieldSig:
    class_descriptor: str
    name: str
    type_descriptor: str = "I"


@dataclass
class _Method:
    sig: MethodSig
    code: list | None


@dataclass
class _Class:
    descriptor: str
    superclass: str
    methods: list = field(default_factory=list)


class DexBuilder:
    """Collects classes and methods, then lays out a DEX file.

    Code is a list whose items are an opcode mnemonic (``"return-void"``), a
    pair of mnemonic and reference (``("invoke-static", MethodSig(...))``) or
    raw ``bytes`` holding already-encoded code units.
    """

    def __init__(self, version: str = "035"):
        self.version = version
        self.classes: dict[str, _Class] = {}
        self._extra_methods: set[MethodSig] = set()
        self._extra_fields: set[FieldSig] = set()
        self._extra_strings: set[str] = set()

    def add_class(self, descriptor: str, superclass: str = "Ljava/lang/Object;") -> _Class:
        if descriptor not in self.classes:
            self.classes[descriptor] = _Class(descriptor, superclass)
        return self.classes[descriptor]

    def add_method(self, sig: MethodSig, code: list | None):
        cls = self.add_class(sig.class_descriptor)
        cls.methods.append(_Method(sig, list(code) if code is not None else None))
        return sig

    def reference_method(self, sig: MethodSig):
        self._extra_methods.add(sig)

    def add_string(self, s: str):
        self._extra_strings.add(s)

    # -- layout --------------------------------------------------------------

    def _collect(self):
        strings, types, protos, fields_, methods = set(self._extra_strings), set(), set(), set(self._extra_fields), set(self._extra_methods)
        for cls in self.classes.values():
            types.add(cls.descriptor)
            types.add(cls.superclass)
            for m in cls.methods:
                methods.add(m.sig)
                for item in m.code or []:
                    if isinstance(item, tuple):
                        ref = item[1]
                        if isinstance(ref, MethodSig):
                            methods.add(ref)
                        elif isinstance(ref, FieldSig):
                            fields_.add(ref)
                        elif isinstance(ref, str) and item[0].startswith("const-string"):
                            strings.add(ref)
                        elif isinstance(ref, str):
                            types.add(ref)
        for m in methods:
            types.add(m.class_descriptor)
            types.add(m.return_type)
            types.update(m.params)
            strings.add(m.name)
            protos.add((m.return_type, m.params))
        for f in fields_:
            types.update((f.class_descriptor, f.type_descriptor))
            strings.add(f.name)
        shorties = {self._shorty(p) for p in protos}
        strings |= types | shorties
        return strings, types, protos, fields_, methods

    @staticmethod
    def _shorty(proto):
        ret, params = proto
        return "".join(_SHORTY.get(t[0], "L") for t in (ret, *params))

    def build(self) -> bytes:
        strings, types, protos, fields_, methods = self._collect()
        string_list = sorted(strings, key=lambda s: s.encode("utf-16-be"))
        sidx = {s: i for i, s in enumerate(string_list)}
        type_list = sorted(types, key=lambda t: sidx[t])
        tidx = {t: i for i, t in enumerate(type_list)}
        proto_list = sorted(protos, key=lambda p: (tidx[p[0]], [tidx[t] for t in p[1]]))
        pidx = {p: i for i, p in enumerate(proto_list)}
        field_list = sorted(fields_, key=lambda f: (tidx[f.class_descriptor], sidx[f.name], tidx[f.type_descriptor]))
        fidx = {f: i for i, f in enumerate(field_list)}
        method_list = sorted(methods, key=lambda m: (tidx[m.class_descriptor], sidx[m.name], pidx[(m.return_type, m.params)]))
        midx = {m: i for i, m in enumerate(method_list)}
        class_list = sorted(self.classes.values(), key=lambda c: tidx[c.descriptor])

        off = 0x70
        string_ids_off = off
        off += 4 * len(string_list)
        type_ids_off = off
        off += 4 * len(type_list)
        proto_ids_off = off
        off += 12 * len(proto_list)
        field_ids_off = off
        off += 8 * len(field_list)
        method_ids_off = off
        off += 8 * len(method_list)
        class_defs_off = off
        off += 32 * len(class_list)
        data_off = off

        data = bytearray()

        def here():
            return data_off + len(data)

        # code items
        code_offs = {}
        code_count = 0
        for cls in class_list:
            for m in cls.methods:
                if m.code is None:
                    continue
                _align(data)
                code_offs[m.sig] = here()
                insns = self._encode(m.code, sidx, tidx, fidx, midx, pidx)
                data += struct.pack("<HHHHII", 4, 0, 0, 0, 0, len(insns) // 2)
                data += insns
                code_count += 1
        # type lists
        _align(data)
        type_list_offs = {}
        for p in proto_list:
            params = p[1]
            if not params or params in type_list_offs:
                continue
            _align(data)
            type_list_offs[params] = here()
            data += struct.pack("<I", len(params))
            data += struct.pack(f"<{len(params)}H", *[tidx[t] for t in params])
        # string data
        string_data_offs = []
        string_data_start = here()
        for s in string_list:
            string_data_offs.append(here())
            data += _uleb128(_utf16_units(s)) + _mutf8(s) + b"\x00"
        # class data
        class_data_offs = {}
        class_data_start = here()
        for cls in class_list:
            if not cls.methods:
                continue
            class_data_offs[cls.descriptor] = here()
            ms = sorted(cls.methods, key=lambda m: midx[m.sig])
            data += _uleb128(0) + _uleb128(0) + _uleb128(len(ms)) + _uleb128(0)
            prev = 0
            for m in ms:
                i = midx[m.sig]
                flags = 0x9 if m.code is not None else 0x109  # public static [native]
                data += _uleb128(i - prev) + _uleb128(flags) + _uleb128(code_offs.get(m.sig, 0))
                prev = i
        _align(data)
        map_off = here()
        map_items = [(0x0000, 1, 0)]
        for code, size, o in [
            (0x0001, len(string_list), string_ids_off), (0x0002, len(type_list), type_ids_off),
            (0x0003, len(proto_list), proto_ids_off), (0x0004, len(field_list), field_ids_off),
            (0x0005, len(method_list), method_ids_off), (0x0006, len(class_list), class_defs_off),
        ]:
            if size:
                map_items.append((code, size, o))
        if code_count:
            map_items.append((0x2001, code_count, min(code_offs.values())))
        if type_list_offs:
            map_items.append((0x1001, len(type_list_offs), min(type_list_offs.values())))
        if string_list:
            map_items.append((0x2002, len(string_list), string_data_start))
        if class_data_offs:
            map_items.append((0x2000, len(class_data_offs), class_data_start))
        map_items.append((0x1000, 1, map_off))
        map_items.sort(key=lambda t: t[2])
        data += struct.pack("<I", len(map_items))
        for code, size, o in map_items:
            data += struct.pack("<HHII", code, 0, size, o)

        index = bytearray()
        index += struct.pack(f"<{len(string_data_offs)}I", *string_data_offs)
        index += struct.pack(f"<{len(type_list)}I", *[sidx[t] for t in type_list])
        for p in proto_list:
            index += struct.pack("<III", sidx[self._shorty(p)], tidx[p[0]], type_list_offs.get(p[1], 0))
        for f in field_list:
            index += struct.pack("<HHI", tidx[f.class_descriptor], tidx[f.type_descriptor], sidx[f.name])
        for m in method_list:
            index += struct.pack("<HHI", tidx[m.class_descriptor], pidx[(m.return_type, m.params)], sidx[m.name])
        for cls in class_list:
            index += struct.pack(
                "<8I", tidx[cls.descriptor], 0x1, tidx[cls.superclass], 0, 0xFFFFFFFF, 0,
                class_data_offs.get(cls.descriptor, 0), 0)
        assert 0x70 + len(index) == data_off

        file_size = data_off + len(data)

        def sized(n, o):
            return (n, o if n else 0)

        header = struct.pack(
            "<8sI20s" + "I" * 20,
            b"dex\n" + self.version.encode() + b"\x00", 0, b"\x00" * 20, file_size, 0x70,
            0x12345678, 0, 0, map_off,
            *sized(len(string_list), string_ids_off), *sized(len(type_list), type_ids_off),
            *sized(len(proto_list), proto_ids_off), *sized(len(field_list), field_ids_off),
            *sized(len(method_list), method_ids_off), *sized(len(class_list), class_defs_off),
            len(data), data_off,
        )
        blob = bytearray(header + index + data)
        blob[12:32] = hashlib.sha1(bytes(blob[32:])).digest()
        blob[8:12] = struct.pack("<I", zlib.adler32(bytes(blob[12:])))
        return bytes(blob)

    @staticmethod
    def _encode(code, sidx, tidx, fidx, midx, pidx) -> bytes:
        out = bytearray()
        for item in code:
            if isinstance(item, (bytes, bytearray)):
                out += item
                continue
            name, ref = (item, None) if isinstance(item, str) else item
            op = _OPCODE_BY_NAME[name]
            fmt = OPCODES[op][1]
            width = FORMAT_UNITS[fmt]
            r = 0
            if isinstance(ref, MethodSig):
                r = midx[ref]
            elif isinstance(ref, FieldSig):
                r = fidx[ref]
            elif isinstance(ref, str):
                r = sidx[ref] if name.startswith("const-string") else tidx[ref]
            elif isinstance(ref, int):
                r = ref
            units = [op] + [0] * (width - 1)
            if fmt == "10t":
                units[0] |= 1 << 8
            elif fmt in ("20t", "21t", "22t"):
                units[1] = width
            elif fmt == "30t":
                units[1] = width
            elif fmt in ("21c", "22c", "35c", "3rc", "45cc", "4rcc"):
                units[1] = r & 0xFFFF
            elif fmt == "31c":
                units[1], units[2] = r & 0xFFFF, r >> 16
            elif fmt == "31t":
                raise ValueError(f"{name} needs a payload; pass raw code units instead")
            out += struct.pack(f"<{width}H", *units)
        return bytes(out)


# -- binary XML ---------------------------------------------------------------

RES_XML_TYPE = 0x0003
RES_STRING_POOL_TYPE = 0x0001
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_RESOURCE_MAP_TYPE = 0x0180


def chunk(ctype: int, header_extra: bytes, payload: bytes) -> bytes:
    header_size = 8 + len(header_extra)
    return struct.pack("<HHI", ctype, header_size, header_size + len(payload)) + header_extra + payload


def string_pool_chunk(strings: list[str]) -> bytes:
    offsets = bytearray()
    blob = bytearray()
    for s in strings:
        offsets += struct.pack("<I", len(blob))
        enc = s.encode("utf-16-le")
        blob += struct.pack("<H", len(enc) // 2) + enc + b"\x00\x00"
    _align(blob)
    strings_start = 28 + len(offsets)
    extra = struct.pack("<IIIII", len(strings), 0, 0, strings_start, 0)
    return chunk(RES_STRING_POOL_TYPE, extra, bytes(offsets + blob))


def _node_extra(line: int = 1) -> bytes:
    return struct.pack("<II", line, 0xFFFFFFFF)


def start_element_chunk(name_idx: int, attrs: list[tuple[int, int, int]] = (), ns_idx: int = 0xFFFFFFFF) -> bytes:
    """attrs: (name string index, raw value string index or 0xFFFFFFFF, typed int data)."""
    ext = struct.pack("<IIHHHHHH", ns_idx, name_idx, 0x14, 0x14, len(attrs), 0, 0, 0)
    body = bytearray(ext)
    for name, raw, value in attrs:
        data_type = 0x03 if raw != 0xFFFFFFFF else 0x10
        body += struct.pack("<IIIHBBI", 0xFFFFFFFF, name, raw, 8, 0, data_type, value)
    return chunk(RES_XML_START_ELEMENT_TYPE, _node_extra(), bytes(body))


def end_element_chunk(name_idx: int, ns_idx: int = 0xFFFFFFFF) -> bytes:
    return chunk(RES_XML_END_ELEMENT_TYPE, _node_extra(), struct.pack("<II", ns_idx, name_idx))


def axml_document(chunks: list[bytes]) -> bytes:
    body = b"".join(chunks)
    return struct.pack("<HHI", RES_XML_TYPE, 8, 8 + len(body)) + body


def manifest_axml(package: str, permissions: list[str]) -> bytes:
    """A small binary AndroidManifest.xml with uses-permission children."""
    strings = ["manifest", "package", "uses-permission", "name", package, *permissions]
    chunks = [string_pool_chunk(strings),
              start_element_chunk(0, [(1, 4, 4)])]
    for i, _perm in enumerate(permissions):
        chunks.append(start_element_chunk(2, [(3, 5 + i, 5 + i)]))
        chunks.append(end_element_chunk(2))
    chunks.append(end_element_chunk(0))
    return axml_document(chunks)


# -- ELF ------------------------------------------------------------------------

SHT_PROGBITS = 1
SHT_STRTAB = 3
SHT_NOBITS = 8


def elf_shared_object(sections: dict[str, bytes], *, elf64: bool = True, little: bool = True,
                      bss_size: int = 0) -> bytes:
    """Build an ET_DYN ELF with the given PROGBITS sections plus .shstrtab.

    Layout: ELF header, section contents in insertion order, .shstrtab,
    section header table.
    """
    e = "<" if little else ">"
    ehsize = 64 if elf64 else 52
    shentsize = 64 if elf64 else 40
    names = list(sections) + ([".bss"] if bss_size else []) + [".shstrtab"]
    shstrtab = bytearray(b"\x00")
    name_off = {}
    for n in names:
        name_off[n] = len(shstrtab)
        shstrtab += n.encode() + b"\x00"

    body = bytearray()
    headers = [(0, 0, 0, 0, 0)]  # name, type, flags, offset, size
    for n, content in sections.items():
        _align(body, 8)
        flags = 0x6 if n == ".text" else 0x3 if n == ".data" else 0x2
        headers.append((name_off[n], SHT_PROGBITS, flags, ehsize + len(body), len(content)))
        body += content
    if bss_size:
        headers.append((name_off[".bss"], SHT_NOBITS, 0x3, ehsize + len(body), bss_size))
    headers.append((name_off[".shstrtab"], SHT_STRTAB, 0, ehsize + len(body), len(shstrtab)))
    body += shstrtab
    _align(body, 8)
    shoff = ehsize + len(body)

    ident = b"\x7fELF" + bytes([2 if elf64 else 1, 1 if little else 2, 1, 0]) + b"\x00" * 8
    if elf64:
        hdr = ident + struct.pack(e + "HHIQQQIHHHHHH", 3, 0xB7, 1, 0, 0, shoff, 0,
                                  ehsize, 56, 0, shentsize, len(headers), len(headers) - 1)
    else:
        hdr = ident + struct.pack(e + "HHIIIIIHHHHHH", 3, 0x28, 1, 0, 0, shoff, 0,
                                  ehsize, 32, 0, shentsize, len(headers), len(headers) - 1)
    table = bytearray()
    for name, stype, flags, off, size in headers:
        if elf64:
            table += struct.pack(e + "IIQQQQIIQQ", name, stype, flags, 0, off, size, 0, 0, 1, 0)
        else:
            table += struct.pack(e + "IIIIIIIIII", name, stype, flags, 0, off, size, 0, 0, 1, 0)
    return bytes(hdr + body + table)


# -- APK ----------------------------------------------------------------------

def write_apk(path_or_file, entries: dict[str, bytes]):
    """Write a ZIP with fixed timestamps so output bytes are reproducible."""
    with zipfile.ZipFile(path_or_file, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, entries[name])


def apk_bytes(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    write_apk(buf, entries)
    return buf.getvalue()
