"""Session fixtures: a small vocabulary, images, and a manifest tree."""

from __future__ import annotations

import pytest

from renewal.config import load_config
from renewal.embeddings import load_vocabulary
from renewal.fixtures import (
    build_fixture_manifest,
    make_test_vocabulary,
    write_oracle_config,
    write_vocabulary,
)


@pytest.fixture(scope="session")
def small_vocab():
    return make_test_vocabulary(seed=0)


@pytest.fixture(scope="session")
def fixture_tree(tmp_path_factory):
    """A complete run directory: vocab, manifest, images, masks, config."""
    root = tmp_path_factory.mktemp("tree")
    vocab = make_test_vocabulary(seed=0)
    write_vocabulary(vocab, root / "vocab.txt")
    manifest = build_fixture_manifest(root, upd_records=6, no_upd_records=2, seed=0)
    config_path = write_oracle_config(root, seed=7)
    return {
        "root": root,
        "vocab_path": root / "vocab.txt",
        "manifest": manifest,
        "config_path": config_path,
    }


@pytest.fixture(scope="session")
def fixture_config(fixture_tree):
    return load_config(fixture_tree["config_path"])


@pytest.fixture(scope="session")
def fixture_vocab(fixture_tree):
    return load_vocabulary(fixture_tree["vocab_path"], normalize=True)
