import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apkviews.config import RunConfig  # noqa: E402

# a narrow architecture that trains in seconds on one CPU core
SMALL = dict(image_size=32, plane_width=64, embed_dim=32, gcn_hidden=16, filters=16, cnn_channels=(4, 8),
             mfb_k=2, mfb_o=32, attn_u=32, attn_p=16, fused_dim=64, hidden_dims=(32, 16))

SMALL_CONFIG_TEXT = "".join(
    f"{k} = {','.join(map(str, v)) if isinstance(v, tuple) else v}\n" for k, v in SMALL.items())


@pytest.fixture
def small_cfg():
    return RunConfig(**SMALL)


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory):
    from apkviews.synth import make_corpus

    root = tmp_path_factory.mktemp("overfit")
    manifest, samples = make_corpus(root, 8, seed=0, mode="all", years=(2019, 2020, 2021, 2022))
    return manifest, samples


@pytest.fixture(scope="session")
def overfit_features(overfit_corpus):
    from apkviews.features import extract_features
    from apkviews.ingest import load_manifest

    manifest, _ = overfit_corpus
    entries = load_manifest(manifest)
    cfg = RunConfig(**SMALL)
    return entries, [extract_features(e.apk_path, cfg) for e in entries], [int(e.label) for e in entries]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
