"""Sample manifests and APK artifact extraction."""

from __future__ import annotations

import csv
import enum
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

ARTIFACT_KINDS = ("dex", "xml", "so")


class IngestError(Exception):
    pass


class UnreadableFile(IngestError):
    pass


class MissingColumn(IngestError):
    pass


class BadLabel(IngestError):
    pass


class NotAZip(IngestError):
    pass


class CorruptEntry(IngestError):
    pass


class NoDexFound(IngestError):
    pass


class Label(enum.IntEnum):
    # class index order used by the classifier: 0 = malicious
    MALICIOUS = 0
    BENIGN = 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise BadLabel(f"label must be 'malicious' or 'benign', got {text!r}") from None

    def __str__(self):
        return self.name.lower()


@dataclass(frozen=True)
class SampleManifestEntry:
    sample_id: str
    apk_path: Path
    label: Label
    timestamp_year: int

    def __post_init__(self):
        if self.timestamp_year < 2008:
            raise ValueError(f"{self.sample_id}: year {self.timestamp_year} predates Android")


MANIFEST_COLUMNS = ("sample_id", "apk_path", "label", "year")


def load_manifest(path) -> list[SampleManifestEntry]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        try:
            year = int(row["year"])
        except (TypeError, ValueError):
            raise IngestError(f"{path}:{lineno}: bad year {row['year']!r}") from None
        apk = Path(row["apk_path"])
        if not apk.is_absolute():
            apk = path.parent / apk
        entries.append(SampleManifestEntry(row["sample_id"], apk, Label.parse(row["label"]), year))
    return entries


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for e in entries:
            w.writerow([e.sample_id, str(e.apk_path), str(e.label), e.timestamp_year])


@dataclass(frozen=True)
class ApkArtifacts:
    dex_bytes: bytes
    xml_bytes: bytes
    so_bytes: bytes
    # kind -> [(entry path, offset, length)]
    per_file_index: dict = field(default_factory=dict)

    def stream(self, kind: str) -> bytes:
        return {"dex": self.dex_bytes, "xml": self.xml_bytes, "so": self.so_bytes}[kind]

    def index(self, kind: str) -> list[tuple[str, int, int]]:
        return self.per_file_index.get(kind, [])


def _kind_of(name: str) -> str | None:
    for kind in ARTIFACT_KINDS:
        if name.endswith("." + kind):
            return kind
    return None


def extract_artifacts(apk_path) -> ApkArtifacts:
    """Concatenate every .dex / .xml / .so entry per type, in entry-path order."""
    try:
        zf = zipfile.ZipFile(apk_path)
    except zipfile.BadZipFile as exc:
        raise NotAZip(f"{apk_path}: {exc}") from exc
    except OSError as exc:
        raise UnreadableFile(f"{apk_path}: {exc}") from exc
    groups = {k: [] for k in ARTIFACT_KINDS}
    with zf:
        for info in zf.infolist():
            if info.is_dir():
                continue
            kind = _kind_of(info.filename)
            if kind:
                groups[kind].append(info)
        streams = {}
        index = {}
        for kind, infos in groups.items():
            buf = bytearray()
            idx = []
            for info in sorted(infos, key=lambda i: i.filename):
                try:
                    payload = zf.read(info)
                except (zipfile.BadZipFile, zlib.error, EOFError) as exc:
                    raise CorruptEntry(f"{apk_path}!{info.filename}: {exc}") from exc
                idx.append((info.filename, len(buf), len(payload)))
                buf += payload
            streams[kind] = bytes(buf)
            index[kind] = idx
    if not streams["dex"]:
        raise NoDexFound(f"{apk_path}: no non-empty .dex entry")
    return ApkArtifacts(streams["dex"], streams["xml"], streams["so"], index)


def write_stream_cache(directory, sample_id: str, artifacts: ApkArtifacts):
    """Write ``<id>.<kind>.bin`` plus a ``.idx`` sidecar (path<TAB>offset<TAB>length)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for kind in ARTIFACT_KINDS:
        (directory / f"{sample_id}.{kind}.bin").write_bytes(artifacts.stream(kind))
        lines = [f"{p}\t{o}\t{n}\n" for p, o, n in artifacts.index(kind)]
        (directory / f"{sample_id}.{kind}.idx").write_text("".join(lines), encoding="utf-8")


def read_stream_cache(directory, sample_id: str) -> ApkArtifacts:
    directory = Path(directory)
    streams, index = {}, {}
    for kind in ARTIFACT_KINDS:
        streams[kind] = (directory / f"{sample_id}.{kind}.bin").read_bytes()
        rows = []
        for line in (directory / f"{sample_id}.{kind}.idx").read_text(encoding="utf-8").splitlines():
            p, o, n = line.split("\t")
            rows.append((p, int(o), int(n)))
        index[kind] = rows
    return ApkArtifacts(streams["dex"], streams["xml"], streams["so"], index)
