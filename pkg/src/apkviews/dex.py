"""DEX container parsing.

Resolves the string, type, proto, field and method tables, walks class data
to find code items, and decodes each code item into (opcode, operands)
instructions using the Dalvik instruction-format widths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

HEADER_SIZE = 0x70
NO_INDEX = 0xFFFFFFFF
ENDIAN_CONSTANT = 0x12345678

_HEADER = struct.Struct("<8sI20s" + "I" * 20)


class DexError(ValueError):
    pass


class BadMagic(DexError):
    pass


class TruncatedFile(DexError):
    pass


class IndexOutOfRange(DexError):
    pass


# format id -> width in 16-bit code units
FORMAT_UNITS = {
    "10x": 1, "12x": 1, "11n": 1, "11x": 1, "10t": 1,
    "20t": 2, "22x": 2, "21t": 2, "21s": 2, "21h": 2, "21c": 2,
    "23x": 2, "22b": 2, "22t": 2, "22s": 2, "22c": 2,
    "30t": 3, "32x": 3, "31i": 3, "31t": 3, "31c": 3, "35c": 3, "3rc": 3,
    "45cc": 4, "4rcc": 4,
    "51l": 5,
}


def _build_opcode_table():
    table = {}

    def put(op, name, fmt):
        table[op] = (name, fmt)

    singles = [
        (0x00, "nop", "10x"), (0x01, "move", "12x"), (0x02, "move/from16", "22x"),
        (0x03, "move/16", "32x"), (0x04, "move-wide", "12x"),
        (0x05, "move-wide/from16", "22x"), (0x06, "move-wide/16", "32x"),
        (0x07, "move-object", "12x"), (0x08, "move-object/from16", "22x"),
        (0x09, "move-object/16", "32x"), (0x0A, "move-result", "11x"),
        (0x0B, "move-result-wide", "11x"), (0x0C, "move-result-object", "11x"),
        (0x0D, "move-exception", "11x"), (0x0E, "return-void", "10x"),
        (0x0F, "return", "11x"), (0x10, "return-wide", "11x"),
        (0x11, "return-object", "11x"), (0x12, "const/4", "11n"),
        (0x13, "const/16", "21s"), (0x14, "const", "31i"),
        (0x15, "const/high16", "21h"), (0x16, "const-wide/16", "21s"),
        (0x17, "const-wide/32", "31i"), (0x18, "const-wide", "51l"),
        (0x19, "const-wide/high16", "21h"), (0x1A, "const-string", "21c"),
        (0x1B, "const-string/jumbo", "31c"), (0x1C, "const-class", "21c"),
        (0x1D, "monitor-enter", "11x"), (0x1E, "monitor-exit", "11x"),
        (0x1F, "check-cast", "21c"), (0x20, "instance-of", "22c"),
        (0x21, "array-length", "12x"), (0x22, "new-instance", "21c"),
        (0x23, "new-array", "22c"), (0x24, "filled-new-array", "35c"),
        (0x25, "filled-new-array/range", "3rc"), (0x26, "fill-array-data", "31t"),
        (0x27, "throw", "11x"), (0x28, "goto", "10t"), (0x29, "goto/16", "20t"),
        (0x2A, "goto/32", "30t"), (0x2B, "packed-switch", "31t"),
        (0x2C, "sparse-switch", "31t"),
        (0xFA, "invoke-polymorphic", "45cc"),
        (0xFB, "invoke-polymorphic/range", "4rcc"),
        (0xFC, "invoke-custom", "35c"), (0xFD, "invoke-custom/range", "3rc"),
        (0xFE, "const-method-handle", "21c"), (0xFF, "const-method-type", "21c"),
    ]
    for op, name, fmt in singles:
        put(op, name, fmt)

    def run(start, names, fmt):
        for i, name in enumerate(names):
            put(start + i, name, fmt)

    run(0x2D, ["cmpl-float", "cmpg-float", "cmpl-double", "cmpg-double", "cmp-long"], "23x")
    run(0x32, ["if-eq", "if-ne", "if-lt", "if-ge", "if-gt", "if-le"], "22t")
    run(0x38, ["if-eqz", "if-nez", "if-ltz", "if-gez", "if-gtz", "if-lez"], "21t")
    kinds = ["", "-wide", "-object", "-boolean", "-byte", "-char", "-short"]
    run(0x44, ["aget" + k for k in kinds] + ["aput" + k for k in kinds], "23x")
    run(0x52, ["iget" + k for k in kinds] + ["iput" + k for k in kinds], "22c")
    run(0x60, ["sget" + k for k in kinds] + ["sput" + k for k in kinds], "21c")
    invokes = ["invoke-virtual", "invoke-super", "invoke-direct", "invoke-static", "invoke-interface"]
    run(0x6E, invokes, "35c")
    run(0x74, [n + "/range" for n in invokes], "3rc")
    run(0x7B, [
        "neg-int", "not-int", "neg-long", "not-long", "neg-float", "neg-double",
        "int-to-long", "int-to-float", "int-to-double", "long-to-int", "long-to-float",
        "long-to-double", "float-to-int", "float-to-long", "float-to-double",
        "double-to-int", "double-to-long", "double-to-float", "int-to-byte",
        "int-to-char", "int-to-short",
    ], "12x")
    int_ops = ["add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl", "shr", "ushr"]
    fp_ops = ["add", "sub", "mul", "div", "rem"]
    binops = ([f"{o}-int" for o in int_ops] + [f"{o}-long" for o in int_ops]
              + [f"{o}-float" for o in fp_ops] + [f"{o}-double" for o in fp_ops])
    run(0x90, binops, "23x")
    run(0xB0, [b + "/2addr" for b in binops], "12x")
    lit16 = ["add-int", "rsub-int", "mul-int", "div-int", "rem-int", "and-int", "or-int", "xor-int"]
    run(0xD0, [n + "/lit16" for n in lit16], "22s")
    lit8 = lit16 + ["shl-int", "shr-int", "ushr-int"]
    run(0xD8, [n + "/lit8" for n in lit8], "22b")
    for op in range(256):
        if op not in table:
            put(op, f"unused-{op:02x}", "10x")
    return table


OPCODES = _build_opcode_table()
INVOKE_OPCODES = frozenset(range(0x6E, 0x73)) | frozenset(range(0x74, 0x79)) | {0xFA, 0xFB}


def opcode_name(op: int) -> str:
    return OPCODES[op][0]


def instruction_units(op: int) -> int:
    return FORMAT_UNITS[OPCODES[op][1]]


@dataclass(frozen=True)
class DexHeader:
    magic: bytes
    checksum: int
    signature: bytes
    file_size: int
    header_size: int
    endian_tag: int
    link_size: int
    link_off: int
    map_off: int
    string_ids_size: int
    string_ids_off: int
    type_ids_size: int
    type_ids_off: int
    proto_ids_size: int
    proto_ids_off: int
    field_ids_size: int
    field_ids_off: int
    method_ids_size: int
    method_ids_off: int
    class_defs_size: int
    class_defs_off: int
    data_size: int
    data_off: int

    @property
    def version(self) -> str:
        return self.magic[4:7].decode("ascii")


@dataclass(frozen=True, order=True)
class MethodRef:
    class_descriptor: str
    name: str
    proto: str
    is_local: bool = field(default=False, compare=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.class_descriptor, self.name, self.proto)

    def __str__(self):
        return f"{self.class_descriptor}->{self.name}{self.proto}"


@dataclass(frozen=True)
class Instruction:
    offset: int  # in code units from the start of insns
    opcode: int
    operands: bytes

    @property
    def name(self) -> str:
        return opcode_name(self.opcode)


@dataclass(frozen=True)
class CodeItem:
    registers: int
    ins: int
    outs: int
    instructions: tuple[Instruction, ...]


@dataclass(frozen=True)
class DexFile:
    header: DexHeader
    strings: tuple[str, ...]
    types: tuple[str, ...]
    protos: tuple[str, ...]
    methods: tuple[MethodRef, ...]
    code_items: dict  # method index -> CodeItem
    # raw index tables, kept for re-serialization
    string_data_offs: tuple[int, ...]
    type_ids: tuple[int, ...]
    proto_ids: tuple[tuple[int, int, int], ...]
    field_ids: tuple[tuple[int, int, int], ...]
    method_ids: tuple[tuple[int, int, int], ...]
    class_defs: tuple[tuple[int, ...], ...]

    def code_for(self, method: MethodRef) -> CodeItem | None:
        for idx, m in enumerate(self.methods):
            if m.key == method.key and idx in self.code_items:
                return self.code_items[idx]
        return None

    def local_methods(self):
        """Yield (MethodRef, CodeItem) for every method with code, in table order."""
        for idx in sorted(self.code_items):
            yield self.methods[idx], self.code_items[idx]


def read_uleb128(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise TruncatedFile("uleb128 runs past end of file")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if b < 0x80:
            return result, pos
        shift += 7
        if shift > 35:
            raise DexError("uleb128 longer than 5 bytes")


def _decode_mutf8(raw: bytes) -> str:
    # MUTF-8: NUL encoded as C0 80, supplementary chars as surrogate pairs
    out = []
    i = 0
    n = len(raw)
    while i < n:
        b = raw[i]
        if b < 0x80:
            out.append(b)
            i += 1
        elif b & 0xE0 == 0xC0 and i + 1 < n:
            out.append(((b & 0x1F) << 6) | (raw[i + 1] & 0x3F))
            i += 2
        elif b & 0xF0 == 0xE0 and i + 2 < n:
            out.append(((b & 0x0F) << 12) | ((raw[i + 1] & 0x3F) << 6) | (raw[i + 2] & 0x3F))
            i += 3
        else:
            out.append(0xFFFD)
            i += 1
    return "".join(map(chr, out)).encode("utf-16", "surrogatepass").decode("utf-16", "replace")


def parse_header(buf: bytes) -> DexHeader:
    if len(buf) < 8 or buf[:4] != b"dex\n":
        raise BadMagic(f"bad DEX magic {bytes(buf[:8])!r}")
    magic = bytes(buf[:8])
    if not (magic[4:7].isdigit() and magic[7] == 0):
        raise BadMagic(f"bad DEX version in magic {magic!r}")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile(f"DEX header needs {HEADER_SIZE} bytes, got {len(buf)}")
    header = DexHeader(*_HEADER.unpack_from(buf, 0))
    if header.endian_tag != ENDIAN_CONSTANT:
        raise DexError(f"unsupported endian tag {header.endian_tag:#x}")
    return header


def _u32(buf, off):
    return struct.unpack_from("<I", buf, off)[0]


def _check_region(buf, off, size, what):
    if off + size > len(buf):
        raise TruncatedFile(f"{what} [{off:#x}, {off + size:#x}) exceeds file length {len(buf):#x}")


def decode_instructions(insns: bytes) -> tuple[Instruction, ...]:
    """Decode a code unit array; switch/array payload pseudo-instructions are skipped."""
    n_units = len(insns) // 2
    out = []
    pc = 0
    while pc < n_units:
        unit = struct.unpack_from("<H", insns, pc * 2)[0]
        op = unit & 0xFF
        if op == 0x00 and unit != 0x0000:
            ident = unit >> 8
            if ident == 0x01:  # packed-switch-payload
                size = struct.unpack_from("<H", insns, pc * 2 + 2)[0]
                pc += size * 2 + 4
                continue
            if ident == 0x02:  # sparse-switch-payload
                size = struct.unpack_from("<H", insns, pc * 2 + 2)[0]
                pc += size * 4 + 2
                continue
            if ident == 0x03:  # fill-array-data-payload
                width = struct.unpack_from("<H", insns, pc * 2 + 2)[0]
                size = struct.unpack_from("<I", insns, pc * 2 + 4)[0]
                pc += (size * width + 1) // 2 + 4
                continue
        width = instruction_units(op)
        if pc + width > n_units:
            raise TruncatedFile(f"instruction {opcode_name(op)} at unit {pc} runs past code end")
        raw = insns[pc * 2:(pc + width) * 2]
        out.append(Instruction(pc, op, bytes(raw[1:])))
        pc += width
    return tuple(out)


def _parse_code_item(buf, off) -> CodeItem:
    _check_region(buf, off, 16, "code_item")
    registers, ins, outs, tries, _debug, insns_size = struct.unpack_from("<HHHHII", buf, off)
    start = off + 16
    _check_region(buf, start, insns_size * 2, "code_item insns")
    instructions = decode_instructions(bytes(buf[start:start + insns_size * 2]))
    return CodeItem(registers, ins, outs, instructions)


def _parse_one(buf: bytes) -> DexFile:
    h = parse_header(buf)
    if h.data_off + h.data_size > len(buf):
        raise TruncatedFile(
            f"data area [{h.data_off:#x}, {h.data_off + h.data_size:#x}) exceeds file length {len(buf):#x}")
    _check_region(buf, h.string_ids_off, h.string_ids_size * 4, "string_ids")
    _check_region(buf, h.type_ids_off, h.type_ids_size * 4, "type_ids")
    _check_region(buf, h.proto_ids_off, h.proto_ids_size * 12, "proto_ids")
    _check_region(buf, h.field_ids_off, h.field_ids_size * 8, "field_ids")
    _check_region(buf, h.method_ids_off, h.method_ids_size * 8, "method_ids")
    _check_region(buf, h.class_defs_off, h.class_defs_size * 32, "class_defs")

    string_offs = struct.unpack_from(f"<{h.string_ids_size}I", buf, h.string_ids_off)
    strings = []
    for off in string_offs:
        if off >= len(buf):
            raise IndexOutOfRange(f"string data offset {off:#x} out of file")
        _, pos = read_uleb128(buf, off)
        end = buf.find(b"\x00", pos)
        if end < 0:
            raise TruncatedFile("unterminated string_data_item")
        strings.append(_decode_mutf8(bytes(buf[pos:end])))

    def string_at(i):
        if i >= len(strings):
            raise IndexOutOfRange(f"string index {i} >= {len(strings)}")
        return strings[i]

    type_ids = struct.unpack_from(f"<{h.type_ids_size}I", buf, h.type_ids_off)
    types = [string_at(i) for i in type_ids]

    def type_at(i):
        if i >= len(types):
            raise IndexOutOfRange(f"type index {i} >= {len(types)}")
        return types[i]

    proto_ids = []
    protos = []
    for i in range(h.proto_ids_size):
        shorty, ret, params_off = struct.unpack_from("<III", buf, h.proto_ids_off + i * 12)
        string_at(shorty)
        params = []
        if params_off:
            _check_region(buf, params_off, 4, "type_list")
            size = _u32(buf, params_off)
            _check_region(buf, params_off + 4, size * 2, "type_list")
            params = [type_at(t) for t in struct.unpack_from(f"<{size}H", buf, params_off + 4)]
        proto_ids.append((shorty, ret, params_off))
        protos.append("(" + "".join(params) + ")" + type_at(ret))

    field_ids = []
    for i in range(h.field_ids_size):
        cls, typ, name = struct.unpack_from("<HHI", buf, h.field_ids_off + i * 8)
        type_at(cls), type_at(typ), string_at(name)
        field_ids.append((cls, typ, name))

    method_ids = []
    for i in range(h.method_ids_size):
        cls, proto, name = struct.unpack_from("<HHI", buf, h.method_ids_off + i * 8)
        type_at(cls), string_at(name)
        if proto >= len(protos):
            raise IndexOutOfRange(f"proto index {proto} >= {len(protos)}")
        method_ids.append((cls, proto, name))

    class_defs = []
    code_items = {}
    for i in range(h.class_defs_size):
        row = struct.unpack_from("<8I", buf, h.class_defs_off + i * 32)
        class_defs.append(row)
        type_at(row[0])
        class_data_off = row[6]
        if not class_data_off:
            continue
        pos = class_data_off
        sf, pos = read_uleb128(buf, pos)
        inf, pos = read_uleb128(buf, pos)
        dm, pos = read_uleb128(buf, pos)
        vm, pos = read_uleb128(buf, pos)
        for _ in range(sf + inf):
            _, pos = read_uleb128(buf, pos)
            _, pos = read_uleb128(buf, pos)
        for count in (dm, vm):
            midx = 0
            for _ in range(count):
                diff, pos = read_uleb128(buf, pos)
                _, pos = read_uleb128(buf, pos)
                code_off, pos = read_uleb128(buf, pos)
                midx += diff
                if midx >= len(method_ids):
                    raise IndexOutOfRange(f"method index {midx} >= {len(method_ids)}")
                if code_off:
                    code_items[midx] = _parse_code_item(buf, code_off)

    methods = tuple(
        MethodRef(types[c], strings[n], protos[p], is_local=idx in code_items)
        for idx, (c, p, n) in enumerate(method_ids)
    )
    return DexFile(
        header=h, strings=tuple(strings), types=tuple(types), protos=tuple(protos),
        methods=methods, code_items=code_items,
        string_data_offs=tuple(string_offs), type_ids=tuple(type_ids),
        proto_ids=tuple(proto_ids), field_ids=tuple(field_ids),
        method_ids=tuple(method_ids), class_defs=tuple(class_defs),
    )


def split_dex_stream(data: bytes, index=None) -> list[bytes]:
    """Split a concatenated dex stream into files.

    With ``index`` (a list of (path, offset, length)) the boundaries are taken
    from it; otherwise each header's ``file_size`` gives the next boundary.
    """
    if index is not None:
        return [data[off:off + length] for _, off, length in index]
    out = []
    pos = 0
    while pos < len(data):
        h = parse_header(data[pos:pos + HEADER_SIZE])
        if h.file_size < HEADER_SIZE:
            raise TruncatedFile(f"declared file_size {h.file_size} smaller than header")
        if pos + h.file_size > len(data):
            raise TruncatedFile(f"declared file_size {h.file_size} exceeds remaining stream")
        out.append(data[pos:pos + h.file_size])
        pos += h.file_size
    return out


def parse_dex(data: bytes, index=None) -> list[DexFile]:
    """Parse a (possibly concatenated) dex stream into one DexFile per file."""
    if not data:
        raise TruncatedFile("empty dex stream")
    return [_parse_one(part) for part in split_dex_stream(data, index)]


def invoke_target(dex: DexFile, ins: Instruction) -> MethodRef | None:
    if ins.opcode not in INVOKE_OPCODES:
        return None
    # both 35c/3rc and 45cc/4rcc keep the method index in the second code unit
    midx = struct.unpack_from("<H", ins.operands, 1)[0]
    if midx >= len(dex.methods):
        raise IndexOutOfRange(f"invoke target {midx} >= {len(dex.methods)}")
    return dex.methods[midx]


def invoke_edges(dex: DexFile) -> list[tuple[MethodRef, MethodRef]]:
    """Syntactic call edges, one per distinct (caller, declared callee) pair."""
    seen = set()
    edges = []
    for caller, code in dex.local_methods():
        for ins in code.instructions:
            callee = invoke_target(dex, ins)
            if callee is None:
                continue
            pair = (caller, callee)
            if pair not in seen:
                seen.add(pair)
                edges.append(pair)
    return edges


def index_section_bytes(dex: DexFile) -> bytes:
    """Re-serialize the id tables (string..class_defs) in header order."""
    parts = [
        (dex.header.string_ids_off, struct.pack(f"<{len(dex.string_data_offs)}I", *dex.string_data_offs)),
        (dex.header.type_ids_off, struct.pack(f"<{len(dex.type_ids)}I", *dex.type_ids)),
        (dex.header.proto_ids_off, b"".join(struct.pack("<III", *p) for p in dex.proto_ids)),
        (dex.header.field_ids_off, b"".join(struct.pack("<HHI", *f) for f in dex.field_ids)),
        (dex.header.method_ids_off, b"".join(struct.pack("<HHI", *m) for m in dex.method_ids)),
        (dex.header.class_defs_off, b"".join(struct.pack("<8I", *c) for c in dex.class_defs)),
    ]
    return b"".join(blob for off, blob in sorted(parts, key=lambda p: p[0]) if blob)
