"""Shared data pipeline: canvas preparation, caching, and batch assembly."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .manifest import DatasetManifest, SampleRecord
from .preprocess import load_word_image, patchify, prepare_canvas


class CanvasStore:
    """Loads and preprocesses word images to 64x128 canvases, with optional caching."""

    def __init__(self, manifest: DatasetManifest, records: Sequence[SampleRecord], cache: bool = True):
        self.manifest = manifest
        self.records = list(records)
        self._cache: dict[int, np.ndarray] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.records)

    def canvas(self, index: int) -> np.ndarray:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        record = self.records[index]
        image = load_word_image(self.manifest.resolve(record))
        canvas = prepare_canvas(image)
        if self._cache is not None:
            self._cache[index] = canvas
        return canvas


def canvases_to_patches(canvases: Sequence[np.ndarray]) -> torch.Tensor:
    """Stack [-1,1] float canvases and tile them into a float32 patch tensor."""
    batch = patchify(np.stack(canvases))
    return torch.from_numpy(np.ascontiguousarray(batch.patches, dtype=np.float32))


def batched_indices(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Index batches over ``range(n)``, shuffled when an rng is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]
