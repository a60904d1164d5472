"""Synthetic stroke-like word images for desk-scale experiments and tests.

Each synthetic writer has a fixed style (glyph family, stroke thickness, slant,
ink darkness, glyph scale); each word is a short sequence of styled glyphs on a
white canvas.  Pages are numbered from 1 so the generated manifests work with
all three split rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .manifest import DatasetManifest, SampleRecord, write_manifest
from .seeding import derive_seed

GLYPH_FAMILIES = ("arcs", "zigzag", "loops", "waves", "bars")

_THICKNESS = (1, 4, 2, 6, 3)
_SLANT = (0.0, 0.45, -0.4, 0.2, -0.2)
_DARKNESS = (30, 110, 60, 140, 90)
_SCALE = (1.0, 1.35, 0.8, 1.15, 0.95)


@dataclass(frozen=True)
class WriterStyle:
    family: str
    thickness: int
    slant: float
    darkness: int
    scale: float


def writer_style(index: int) -> WriterStyle:
    """Deterministic style for writer ``index``; small indices are maximally distinct."""
    k = len(GLYPH_FAMILIES)
    return WriterStyle(
        family=GLYPH_FAMILIES[index % k],
        thickness=_THICKNESS[(index // k + index) % len(_THICKNESS)],
        slant=_SLANT[index % len(_SLANT)],
        darkness=_DARKNESS[(index + index // k) % len(_DARKNESS)],
        scale=_SCALE[(index + 2 * (index // k)) % len(_SCALE)],
    )


def _glyph_points(family: str, size: float, rng: np.random.Generator) -> np.ndarray:
    """Polyline for one glyph in local coordinates (x right, y down, origin at baseline)."""
    if family == "arcs":
        t = np.linspace(np.pi, 0, 16)
        n_arches = int(rng.integers(1, 3))
        pts = []
        for a in range(n_arches):
            xs = (np.cos(t) * 0.5 + 0.5 + a) * size
            ys = -np.sin(t) * size * rng.uniform(0.8, 1.2)
            pts.append(np.stack([xs, ys], axis=1))
        return np.concatenate(pts)
    if family == "zigzag":
        n = int(rng.integers(3, 6))
        xs = np.arange(n + 1) * size * 0.5
        ys = np.where(np.arange(n + 1) % 2 == 0, 0.0, -size * rng.uniform(0.9, 1.3))
        return np.stack([xs, ys], axis=1)
    if family == "loops":
        t = np.linspace(0, 2 * np.pi, 24)
        rx = size * 0.5 * rng.uniform(0.8, 1.2)
        ry = size * 0.6 * rng.uniform(0.8, 1.2)
        return np.stack([rx * np.cos(t) + rx, -ry * (np.sin(t) + 1)], axis=1)
    if family == "waves":
        t = np.linspace(0, 2 * np.pi * rng.uniform(1.0, 2.0), 30)
        return np.stack([t / t[-1] * size * 1.6, -np.sin(t) * size * 0.5], axis=1)
    if family == "bars":
        h = size * rng.uniform(1.2, 1.8)
        w = size * 0.3
        return np.array([[0.0, 0.0], [0.0, -h], [w, -h], [0.0, -h], [0.0, 0.0], [w, 0.0]])
    raise ValueError(f"unknown glyph family {family!r}")


def render_word(style: WriterStyle, rng: np.random.Generator) -> np.ndarray:
    """Render one word image (HxWx3 uint8, white background, dark ink)."""
    height = int(rng.integers(70, 100))
    width = int(rng.integers(180, 280))
    img = np.full((height, width, 3), 255, dtype=np.uint8)

    base_size = height * 0.28 * style.scale
    baseline = height * rng.uniform(0.55, 0.7)
    x_cursor = width * rng.uniform(0.04, 0.1)
    n_glyphs = int(rng.integers(3, 8))
    ink = int(np.clip(style.darkness + rng.integers(-12, 13), 0, 220))

    for _ in range(n_glyphs):
        size = base_size * rng.uniform(0.85, 1.15)
        local = _glyph_points(style.family, size, rng)
        ys = baseline + local[:, 1] + rng.uniform(-2, 2)
        xs = x_cursor + local[:, 0] + style.slant * (baseline - ys)
        pts = np.stack([xs, ys], axis=1)
        pts = np.clip(pts, 1, [width - 2, height - 2]).astype(np.int32)
        cv2.polylines(
            img, [pts.reshape(-1, 1, 2)], False, (ink, ink, ink),
            thickness=style.thickness, lineType=cv2.LINE_AA,
        )
        x_cursor += local[:, 0].max() + base_size * rng.uniform(0.3, 0.6)
        if x_cursor > width * 0.9:
            break
    return img


def generate_dataset(
    out_dir: str | Path,
    num_writers: int = 5,
    pages_per_writer: int = 4,
    words_per_page: int = 25,
    seed: int = 0,
    dataset_name: str = "custom",
) -> Path:
    """Write a synthetic word-image corpus and its manifest; returns the manifest path.

    Pages are numbered "1".."P" and double as CVL text indices, so the same
    corpus exercises every split rule.
    """
    out_dir = Path(out_dir)
    records = []
    for w in range(num_writers):
        style = writer_style(w)
        writer_id = f"w{w:03d}"
        for page in range(1, pages_per_writer + 1):
            page_dir = out_dir / "images" / writer_id / str(page)
            page_dir.mkdir(parents=True, exist_ok=True)
            for k in range(words_per_page):
                rng = np.random.default_rng(derive_seed(seed, "synthetic", writer_id, page, k))
                img = render_word(style, rng)
                rel = Path("images") / writer_id / str(page) / f"word_{k:03d}.png"
                if not cv2.imwrite(str(out_dir / rel), cv2.cvtColor(img, cv2.COLOR_RGB2BGR)):
                    raise IOError(f"could not write {out_dir / rel}")
                records.append(
                    SampleRecord(rel.as_posix(), writer_id, str(page), text_index=page)
                )
    manifest = DatasetManifest(dataset_name, records, base_dir=out_dir)
    return write_manifest(manifest, out_dir / "manifest.tsv")
