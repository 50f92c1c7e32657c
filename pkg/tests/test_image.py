import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apkviews import axml, elf
from apkviews.builders import DexBuilder, MethodSig, elf_shared_object, manifest_axml, write_apk
from apkviews.image import (ViewImage, assemble_and_resize, bilinear_resize, bytes_to_plane, denoise,
                            dump_image, image_from_artifacts, load_image, save_png)
from apkviews.ingest import extract_artifacts
from oracles import bilinear

FIX = Path(__file__).parent / "fixtures"


def test_dex_denoise_golden():
    dex = (FIX / "golden.dex").read_bytes()
    out, bad = denoise(dex, "dex")
    assert not bad
    assert out == (FIX / "golden.dex.denoised").read_bytes()


def test_dex_denoise_synthetic_slice():
    # a header-shaped blob: data_off=112, data_size=64
    blob = bytearray(b"dex\n035\x00" + bytes(0x70 - 8) + bytes(range(64)) + b"\xff" * 16)
    struct.pack_into("<I", blob, 0x20, len(blob))
    struct.pack_into("<I", blob, 0x28, 0x12345678)
    struct.pack_into("<II", blob, 0x68, 64, 112)
    out, bad = denoise(bytes(blob), "dex")
    assert not bad and out == bytes(range(64))


def test_elf_single_text_section():
    so = elf_shared_object({".text": bytes(range(10))})
    out, bad = denoise(so, "so")
    assert not bad and out == bytes(range(10))


def test_elf_denoise_golden():
    out, bad = denoise((FIX / "golden.so").read_bytes(), "so")
    assert not bad and out == (FIX / "golden.so.denoised").read_bytes()


def test_elf_32bit_big_endian():
    so = (FIX / "golden32be.so").read_bytes()
    assert [s.name for s in elf.parse_sections(so)] == ["", ".text", ".data", ".shstrtab"]
    assert denoise(so, "so")[0] == b"\x10\x20\x30\x40"


def test_elf_against_pyelftools():
    elffile = pytest.importorskip("elftools.elf.elffile")
    import io

    for name in ("golden.so", "golden32be.so"):
        data = (FIX / name).read_bytes()
        ref = elffile.ELFFile(io.BytesIO(data))
        theirs = [(s.name, s["sh_offset"], s["sh_size"]) for s in ref.iter_sections()]
        ours = [(s.name, s.offset, s.size) for s in elf.parse_sections(data)]
        assert ours == theirs


def test_axml_chunk_walk_golden():
    doc = (FIX / "golden.axml").read_bytes()
    chunks = axml.walk_chunks(doc)
    assert [c.type for c in chunks] == [0x0001, 0x0180, 0x0102, 0x0103]
    # manual walk: string pool payload 24, start element payload 40, end element payload 8
    sizes = [c.size - c.header_size for c in chunks]
    assert sizes == [24, 4, 40, 8]
    out, bad = denoise(doc, "xml")
    assert not bad
    assert len(out) == 24 + 40 + 8
    assert out == (FIX / "golden.axml.denoised").read_bytes()
    assert axml.string_pool(doc) == ["manifest"]


def test_malformed_passthrough_flag():
    junk = b"\x00\x01garbage"
    out, bad = denoise(junk, "xml")
    assert bad and out == junk
    out, bad = denoise(b"not an elf", "so")
    assert bad and out == b"not an elf"


def test_per_file_passthrough_keeps_good_files():
    good = manifest_axml("a.b", [])
    stream = good + b"broken"
    out, bad = denoise(stream, "xml", [("a.xml", 0, len(good)), ("b.xml", len(good), 6)])
    assert bad
    assert out == axml.content_payload(good) + b"broken"


def test_denoise_never_grows_wellformed():
    for data, kind in (((FIX / "golden.dex").read_bytes(), "dex"), ((FIX / "golden.so").read_bytes(), "so"),
                       ((FIX / "golden.axml").read_bytes(), "xml")):
        assert len(denoise(data, kind)[0]) <= len(data)


def test_bytes_to_plane_values():
    np.testing.assert_array_equal(bytes_to_plane(bytes([0b00000000, 0b11111111, 0b00000001]), 3), [[0, 255, 1]])


def test_bytes_to_plane_padding():
    p = bytes_to_plane(b"\x01\x02\x03\x04\x05", 2)
    assert p.shape == (3, 2) and p[-1, -1] == 0


def test_bytes_to_plane_ramp():
    np.testing.assert_array_equal(bytes_to_plane(bytes(range(256)), 16), np.arange(256).reshape(16, 16))


def test_bytes_to_plane_empty():
    p = bytes_to_plane(b"", 8)
    assert p.shape == (1, 8) and not p.any()


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=1, max_size=300), st.integers(1, 40))
def test_plane_lossless(data, width):
    p = bytes_to_plane(data, width)
    assert p.shape[0] == -(-len(data) // width)
    assert p.reshape(-1)[:len(data)].tobytes() == data


@pytest.mark.parametrize("target", [(1, 1), (3, 7), (224, 224), (50, 13)])
def test_constant_plane(target):
    out = bilinear_resize(np.full((5, 9), 77.0), target)
    assert out.shape == target
    np.testing.assert_allclose(out, 77.0)


def test_ramp_rows_monotone():
    out = bilinear_resize(np.array([[0, 255], [0, 255]], dtype=float), (6, 11))
    assert np.all(np.diff(out, axis=1) >= 0)
    assert out[:, 0].max() <= out[:, -1].min()


def test_checkerboard_matches_oracle():
    board = np.indices((4, 4)).sum(axis=0) % 2 * 255.0
    np.testing.assert_allclose(bilinear_resize(board, (8, 8)), bilinear(board, 8, 8), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 15), st.integers(1, 15), st.integers(0, 2**31))
def test_bounds_preserved(h, w, th, tw, seed):
    plane = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(float)
    out = bilinear_resize(plane, (th, tw))
    assert out.min() >= plane.min() - 1e-9 and out.max() <= plane.max() + 1e-9


def test_missing_so_gives_zero_blue(tmp_path):
    b = DexBuilder()
    b.add_method(MethodSig("LA;", "f"), ["return-void"])
    write_apk(tmp_path / "a.apk", {"classes.dex": b.build(), "AndroidManifest.xml": manifest_axml("a.b", [])})
    img, bad = image_from_artifacts(extract_artifacts(tmp_path / "a.apk"), (16, 16), 32)
    assert not bad
    assert img.pixels.shape == (3, 16, 16) and img.pixels.dtype == np.uint8
    assert not img.pixels[2].any()
    assert img.pixels[0].any() and img.pixels[1].any()


def test_assemble_channel_order():
    img = assemble_and_resize([np.full((2, 2), 10), np.full((3, 3), 20), np.zeros((1, 4))], (4, 4))
    assert img.pixels[:, 0, 0].tolist() == [10, 20, 0]


def test_image_cache_and_png(tmp_path):
    px = np.random.default_rng(0).integers(0, 256, (3, 5, 7), dtype=np.uint8)
    img = ViewImage(px)
    np.testing.assert_array_equal(load_image(dump_image(img)).pixels, px)
    save_png(img, tmp_path / "x.png")
    from PIL import Image

    back = np.asarray(Image.open(tmp_path / "x.png"))
    np.testing.assert_array_equal(back.transpose(2, 0, 1), px)
