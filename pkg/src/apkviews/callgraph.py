"""Abstract API callgraphs: API calls replaced by protection-level sensitivity vectors.

APIs are clustered by subsignature, the pair (first two package fields of the
class, method name). Each subsignature carries the union of protection-level
attributes of every permission any of its APIs needs, one-hot encoded over an
ordered 15-entry vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dex import DexFile, MethodRef, invoke_edges

VOCAB_SIZE = 15
SECTIONS = ("#API_PERMISSION", "#PERMISSION_LEVELS", "#LEVEL_VOCAB")


class PermissionMapError(ValueError):
    pass


class UnknownPermission(PermissionMapError):
    pass


@dataclass
class PermissionMap:
    api_to_permissions: dict[str, set[str]]
    permission_to_levels: dict[str, set[str]]
    level_vocabulary: list[str]

    def __post_init__(self):
        vocab = self.level_vocabulary
        if len(vocab) != VOCAB_SIZE or len(set(vocab)) != VOCAB_SIZE:
            raise PermissionMapError(
                f"level vocabulary needs {VOCAB_SIZE} distinct entries, got {len(vocab)} ({len(set(vocab))} distinct)")
        known = set(vocab)
        for perm, levels in self.permission_to_levels.items():
            extra = levels - known
            if extra:
                raise PermissionMapError(f"{perm}: levels {sorted(extra)} not in vocabulary")


def _read_sections(text: str, source) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            tag = line.strip()
            if tag in SECTIONS:
                current = tag
                sections.setdefault(tag, [])
            continue
        if current is None:
            raise PermissionMapError(f"{source}:{lineno}: data line outside any section")
        sections[current].append(line)
    return sections


def default_map_path():
    return resources.files("apkviews") / "data" / "permission_map.tsv"


def load_permission_map(path=None) -> PermissionMap:
    """Load a sectioned TSV permission map; the vocabulary defaults to the shipped one."""
    src = default_map_path() if path is None else Path(path)
    sections = _read_sections(src.read_text(encoding="utf-8"), src)
    vocab = [v.strip() for v in sections.get("#LEVEL_VOCAB", [])]
    if not vocab:
        default = _read_sections(default_map_path().read_text(encoding="utf-8"), "default")
        vocab = [v.strip() for v in default["#LEVEL_VOCAB"]]
    levels: dict[str, set[str]] = {}
    for line in sections.get("#PERMISSION_LEVELS", []):
        perm, _, lv = line.partition("\t")
        levels.setdefault(perm.strip(), set()).update(x.strip() for x in lv.split("|") if x.strip())
    apis: dict[str, set[str]] = {}
    for line in sections.get("#API_PERMISSION", []):
        api, sep, perm = line.partition("\t")
        if not sep:
            raise PermissionMapError(f"{src}: API line without a tab: {line!r}")
        apis.setdefault(api.strip(), set()).add(perm.strip())
    return PermissionMap(apis, levels, vocab)


@dataclass(frozen=True, order=True)
class Subsignature:
    package_prefix: str
    method_name: str


def dotted_class(descriptor: str) -> str:
    """``Lfoo/bar/Baz;`` -> ``foo.bar.Baz``; dotted names pass through."""
    if descriptor.startswith("L") and descriptor.endswith(";"):
        return descriptor[1:-1].replace("/", ".")
    return descriptor


def api_class_and_method(signature: str) -> tuple[str, str]:
    """Split an API signature into (dotted class name, method name).

    Accepts ``<cls: ret name(args)>`` (PScout/Soot), ``Lcls;->name(args)ret``
    (smali) and ``cls.name(args)`` forms.
    """
    s = signature.strip()
    if s.startswith("<") and s.endswith(">"):
        cls, _, rest = s[1:-1].partition(":")
        name = rest.strip().split("(")[0].split()[-1]
        return cls.strip(), name
    if "->" in s:
        cls, _, rest = s.partition("->")
        return dotted_class(cls), rest.split("(")[0]
    head = s.split("(")[0]
    cls, _, name = head.rpartition(".")
    return cls, name


def subsignature_of(cls: str, method: str) -> Subsignature:
    parts = cls.split(".")
    prefix = ".".join(parts[:2]) if len(parts) >= 2 else cls
    return Subsignature(prefix, method)


def subsignature_for(signature) -> Subsignature:
    if isinstance(signature, MethodRef):
        return subsignature_of(dotted_class(signature.class_descriptor), signature.name)
    return subsignature_of(*api_class_and_method(signature))


def encode_levels(levels, vocab) -> np.ndarray:
    vec = np.zeros(len(vocab), dtype=np.uint8)
    pos = {v: i for i, v in enumerate(vocab)}
    for lv in levels:
        vec[pos[lv]] = 1
    return vec


def build_subsignature_table(pmap: PermissionMap) -> dict[Subsignature, np.ndarray]:
    merged: dict[Subsignature, set[str]] = {}
    for api in sorted(pmap.api_to_permissions):
        sub = subsignature_for(api)
        bucket = merged.setdefault(sub, set())
        for perm in sorted(pmap.api_to_permissions[api]):
            if perm not in pmap.permission_to_levels:
                raise UnknownPermission(f"{api}: permission {perm} has no protection levels")
            bucket |= pmap.permission_to_levels[perm]
    return {sub: encode_levels(lv, pmap.level_vocabulary) for sub, lv in merged.items()}


@dataclass
class AbstractCallgraph:
    node_ids: list[str]
    features: np.ndarray  # (n, 15) uint8 sensitivity vectors
    edges: np.ndarray  # (m, 2) int64 directed (caller, callee) node indices
    meta: dict = field(default_factory=dict)

    @property
    def nodes(self):
        return list(zip(self.node_ids, self.features))

    def vector(self, node_id: str) -> np.ndarray:
        return self.features[self.node_ids.index(node_id)]


def _node_name(m) -> str:
    return str(m) if isinstance(m, MethodRef) else m


def abstract_callgraph(edges, table: dict[Subsignature, np.ndarray], extra_nodes=()) -> AbstractCallgraph:
    """Attach a sensitivity vector to every node: a table hit or all zeros.

    Node ids are the method signatures, sorted, so the result does not depend
    on edge order.
    """
    by_name = {}
    for a, b in edges:
        by_name.setdefault(_node_name(a), a)
        by_name.setdefault(_node_name(b), b)
    for n in extra_nodes:
        by_name.setdefault(_node_name(n), n)
    node_ids = sorted(by_name)
    pos = {n: i for i, n in enumerate(node_ids)}
    feats = np.zeros((len(node_ids), VOCAB_SIZE), dtype=np.uint8)
    zero = np.zeros(VOCAB_SIZE, dtype=np.uint8)
    for i, n in enumerate(node_ids):
        feats[i] = table.get(subsignature_for(by_name[n]), zero)
    pairs = sorted({(pos[_node_name(a)], pos[_node_name(b)]) for a, b in edges})
    edge_arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return AbstractCallgraph(node_ids, feats, edge_arr)


def callgraph_from_dex(dex_files: list[DexFile], table) -> AbstractCallgraph:
    """Merge call edges of every DEX file and keep all local methods as nodes."""
    edges = []
    local = []
    for dex in dex_files:
        edges.extend(invoke_edges(dex))
        local.extend(ref for ref, _ in dex.local_methods())
    return abstract_callgraph(edges, table, extra_nodes=local)
