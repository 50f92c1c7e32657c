"""Synthetic APK corpora with controllable per-view class signal.

Every app shares the same manifest, the same referenced method set and the
same skeleton; only the planted markers differ:

- sensitivity: the ``work`` method calls permission-guarded APIs instead of
  plain library methods (same number of invoke instructions);
- context: the ``loop`` method holds if/goto pairs instead of move pairs
  (same code size);
- environment: the native library's .text is drawn from high byte values
  instead of low ones (same size).

Random filler methods, identical in distribution for both classes, vary the
bytecode size and content from app to app.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .builders import DexBuilder, MethodSig, elf_shared_object, manifest_axml, write_apk
from .encoders import View
from .ingest import Label, SampleManifestEntry, write_manifest

APP_CLASS = "Lcom/example/app/Main;"
SENSITIVE_APIS = (
    MethodSig("Landroid/telephony/SmsManager;", "sendTextMessage"),
    MethodSig("Landroid/telephony/TelephonyManager;", "getDeviceId"),
    MethodSig("Landroid/content/pm/PackageManager;", "installPackage"),
    MethodSig("Landroid/provider/Settings$Secure;", "putString"),
)
PLAIN_APIS = (
    MethodSig("Ljava/lang/StringBuilder;", "append"),
    MethodSig("Ljava/util/ArrayList;", "add"),
    MethodSig("Landroid/util/Log;", "d"),
    MethodSig("Ljava/lang/Math;", "abs"),
)
LOOP_PAIRS = 6
SO_TEXT_BYTES = 2048
PERMISSIONS = ["android.permission.INTERNET", "android.permission.SEND_SMS"]
_FILLER_OPS = ("move", "move-result", "move-object", "return-void")


@dataclass(frozen=True)
class SynthSample:
    sample_id: str
    label: Label
    markers: frozenset  # of View


def _filler(rng, n_methods):
    sigs = [MethodSig(APP_CLASS, f"f{i}") for i in range(n_methods)]
    bodies = []
    for i in range(n_methods):
        code = []
        for _ in range(int(rng.integers(3, 12))):
            if rng.random() < 0.25:
                code.append(("invoke-static", sigs[int(rng.integers(n_methods))]))
            else:
                code.append(_FILLER_OPS[int(rng.integers(len(_FILLER_OPS) - 1))])
        code.append("return-void")
        bodies.append(code)
    return list(zip(sigs, bodies))


def app_dex(markers, rng) -> bytes:
    b = DexBuilder()
    for sig in SENSITIVE_APIS + PLAIN_APIS:
        b.reference_method(sig)
    apis = SENSITIVE_APIS if View.SENSITIVITY in markers else PLAIN_APIS
    b.add_method(MethodSig(APP_CLASS, "work"), [("invoke-static", s) for s in apis] + ["return-void"])
    if View.CONTEXT in markers:
        loop = ["if-eqz", "goto"] * LOOP_PAIRS
    else:
        loop = ["move/from16", "move"] * LOOP_PAIRS
    b.add_method(MethodSig(APP_CLASS, "loop"), loop + ["return-void"])
    for sig, code in _filler(rng, int(rng.integers(4, 16))):
        b.add_method(sig, code)
    return b.build()


def app_native(markers, rng) -> bytes:
    lo, hi = (176, 256) if View.ENVIRONMENT in markers else (0, 80)
    text = rng.integers(lo, hi, SO_TEXT_BYTES, dtype=np.uint8).tobytes()
    return elf_shared_object({".text": text, ".rodata": b"lib\x00" * 16})


def app_entries(markers, rng) -> dict[str, bytes]:
    return {
        "AndroidManifest.xml": manifest_axml("com.example.app", PERMISSIONS),
        "classes.dex": app_dex(markers, rng),
        "lib/arm64-v8a/libnative.so": app_native(markers, rng),
    }


def marker_plan(n_per_class: int, mode: str, rng) -> list[frozenset]:
    """Marker sets for the malicious apps.

    ``all``: every view carries signal. ``single``: each app carries exactly one
    marked view, cycling through the three, so the views are complementary.
    """
    views = (View.SENSITIVITY, View.CONTEXT, View.ENVIRONMENT)
    if mode == "all":
        return [frozenset(views)] * n_per_class
    if mode == "single":
        order = rng.permutation(n_per_class)
        return [frozenset({views[int(i) % 3]}) for i in order]
    raise ValueError(f"unknown marker mode {mode!r}")


def make_corpus(root, n_per_class: int, seed: int = 0, mode: str = "all",
                years=(2018,)) -> tuple[Path, list[SynthSample]]:
    """Write ``2 * n_per_class`` APKs plus ``manifest.csv`` under ``root``.

    Years cycle over ``years`` within each class so every slot holds both labels.
    """
    root = Path(root)
    (root / "apks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    plan = [(Label.MALICIOUS, m) for m in marker_plan(n_per_class, mode, rng)]
    plan += [(Label.BENIGN, frozenset())] * n_per_class
    samples, entries = [], []
    for i, (label, markers) in enumerate(plan):
        sid = f"app{i:04d}"
        path = root / "apks" / f"{sid}.apk"
        write_apk(path, app_entries(markers, rng))
        year = years[(i % n_per_class) % len(years)]
        samples.append(SynthSample(sid, label, markers))
        entries.append(SampleManifestEntry(sid, Path("apks") / path.name, label, year))
    manifest = root / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest, samples
