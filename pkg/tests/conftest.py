"""Shared fixtures: a small synthetic corpus and desk-sized model configs."""

from __future__ import annotations

import numpy as np
import pytest

from swisd import EncoderConfig, generate_dataset, make_fragnet_splits, parse_manifest
from swisd.manifest import DatasetManifest


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """3 writers x 4 pages x 6 words of rendered synthetic handwriting."""
    root = tmp_path_factory.mktemp("corpus")
    generate_dataset(root, num_writers=3, pages_per_writer=4, words_per_page=6, seed=11)
    return root


@pytest.fixture(scope="session")
def corpus_manifest(corpus_dir) -> DatasetManifest:
    return parse_manifest(corpus_dir / "manifest.tsv", dataset_name="CVL")


@pytest.fixture(scope="session")
def split_manifest(corpus_manifest) -> DatasetManifest:
    """CVL rule: pages 1-3 (as texts) train, page 4 test."""
    return make_fragnet_splits(corpus_manifest, seed=5)


@pytest.fixture(scope="session")
def tiny_encoder_config() -> EncoderConfig:
    return EncoderConfig(
        arch="small_cnn",
        feature_dim=32,
        projector_hidden=32,
        small_cnn_channels=(8, 16, 24),
    )


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
