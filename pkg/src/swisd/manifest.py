"""Dataset manifests and FragNet-style train/test splits.

A manifest is a tab-separated UTF-8 text file with LF line endings and the
exact header ``image_path<TAB>writer_id<TAB>page_id<TAB>text_index``.  Split
manifests carry one extra ``split`` column.  Image paths may be relative; they
are resolved against the directory containing the manifest file.
"""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import derive_seed

logger = logging.getLogger(__name__)

HEADER_FIELDS = ("image_path", "writer_id", "page_id", "text_index")
SPLIT_COLUMN = "split"
SPLIT_VALUES = ("train", "test", "unassigned")
KNOWN_DATASETS = ("iam", "cvl", "firemaker", "custom")

CVL_TRAIN_TEXTS = (1, 2, 3)
FIREMAKER_TRAIN_PAGE = "1"
FIREMAKER_TEST_PAGE = "4"


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest files."""


class SplitError(ValueError):
    """Raised when split rules cannot be applied to a manifest."""


@dataclass(frozen=True)
class SampleRecord:
    """One word image with its writer, page, and split assignment."""

    image_path: str
    writer_id: str
    page_id: str
    text_index: int = 0
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    dataset_name: str
    records: list[SampleRecord]
    base_dir: Path = field(default_factory=Path)

    @property
    def num_writers(self) -> int:
        return len({r.writer_id for r in self.records})

    def writers(self) -> list[str]:
        return sorted({r.writer_id for r in self.records})

    def subset(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, record: SampleRecord) -> Path:
        path = Path(record.image_path)
        return path if path.is_absolute() else self.base_dir / path

    def with_records(self, records: Iterable[SampleRecord]) -> "DatasetManifest":
        return DatasetManifest(self.dataset_name, list(records), self.base_dir)


def parse_manifest(path: str | Path, dataset_name: str = "custom") -> DatasetManifest:
    """Parse a delimited manifest file into a :class:`DatasetManifest`.

    Records from a 4-column file come back with ``split='unassigned'``; a
    5-column file must carry valid split labels.  Duplicate image paths and
    malformed lines are rejected with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise ManifestError(f"empty manifest file: {path}")

    header = tuple(lines[0].split("\t"))
    if header == HEADER_FIELDS:
        has_split = False
    elif header == HEADER_FIELDS + (SPLIT_COLUMN,):
        has_split = True
    else:
        raise ManifestError(
            f"{path}:1: bad header {header!r}; expected {HEADER_FIELDS} "
            f"optionally followed by {SPLIT_COLUMN!r}"
        )
    n_fields = len(header)

    records: list[SampleRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            raise ManifestError(f"{path}:{lineno}: blank line")
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise ManifestError(
                f"{path}:{lineno}: expected {n_fields} fields, got {len(fields)}"
            )
        image_path, writer_id, page_id = fields[0], fields[1], fields[2]
        if not writer_id:
            raise ManifestError(f"{path}:{lineno}: empty writer_id")
        if not image_path:
            raise ManifestError(f"{path}:{lineno}: empty image_path")
        try:
            text_index = int(fields[3])
        except ValueError:
            raise ManifestError(
                f"{path}:{lineno}: text_index must be an integer, got {fields[3]!r}"
            ) from None
        split = "unassigned"
        if has_split:
            split = fields[4]
            if split not in SPLIT_VALUES:
                raise ManifestError(
                    f"{path}:{lineno}: invalid split {split!r}; expected one of {SPLIT_VALUES}"
                )
        if image_path in seen:
            raise ManifestError(
                f"{path}:{lineno}: duplicate image_path {image_path!r} "
                f"(first seen on line {seen[image_path]})"
            )
        seen[image_path] = lineno
        records.append(SampleRecord(image_path, writer_id, page_id, text_index, split))

    if not records:
        raise ManifestError(f"manifest has a header but no records: {path}")
    return DatasetManifest(dataset_name, records, base_dir=path.parent)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest file; the split column is included iff any record is assigned.

    Relative image paths are stored relative to the manifest file, so when the
    output directory differs from the manifest's base_dir they are rebased to
    keep resolving to the same files.
    """
    path = Path(path)
    target_dir = path.resolve().parent
    base_dir = Path(manifest.base_dir).resolve()
    include_split = any(r.split != "unassigned" for r in manifest.records)
    header = HEADER_FIELDS + ((SPLIT_COLUMN,) if include_split else ())
    out_lines = ["\t".join(header)]
    for r in manifest.records:
        image_path = r.image_path
        if target_dir != base_dir and not os.path.isabs(image_path):
            image_path = os.path.relpath(base_dir / image_path, target_dir).replace(os.sep, "/")
        fields = [image_path, r.writer_id, r.page_id, str(r.text_index)]
        if include_split:
            fields.append(r.split)
        out_lines.append("\t".join(fields))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(out_lines) + "\n").encode("utf-8"))
    return path


def make_fragnet_splits(
    manifest: DatasetManifest,
    seed: int,
    iam_single_page_test_fraction: float = 0.5,
) -> DatasetManifest:
    """Materialize the per-dataset train/test split rules.

    IAM: for every writer with more than one page, one page is chosen uniformly
    at random (seeded) for testing and the rest train; single-page writers have
    their word records randomly partitioned (``iam_single_page_test_fraction``
    to test).  CVL: texts 1-3 train, everything else test.  Firemaker: page "1"
    train, page "4" test, other pages dropped.  CVL/Firemaker assignments are
    rule-based and ignore the seed.
    """
    name = manifest.dataset_name.lower()
    if name not in ("iam", "cvl", "firemaker"):
        raise SplitError(
            f"unknown dataset {manifest.dataset_name!r}; split rules exist for IAM, CVL, Firemaker"
        )
    assigned = [r for r in manifest.records if r.split != "unassigned"]
    if assigned:
        raise SplitError(
            f"{len(assigned)} records already carry a split assignment; "
            "pass an unassigned manifest"
        )

    if name == "cvl":
        records = _split_cvl(manifest.records)
    elif name == "firemaker":
        records = _split_firemaker(manifest.records)
    else:
        records = _split_iam(manifest.records, seed, iam_single_page_test_fraction)
    return manifest.with_records(records)


def _group_by_writer(records: Sequence[SampleRecord]) -> dict[str, list[SampleRecord]]:
    groups: dict[str, list[SampleRecord]] = defaultdict(list)
    for r in records:
        groups[r.writer_id].append(r)
    return groups


def _split_cvl(records: Sequence[SampleRecord]) -> list[SampleRecord]:
    for writer, recs in _group_by_writer(records).items():
        texts = {r.text_index for r in recs}
        missing = sorted(set(CVL_TRAIN_TEXTS) - texts)
        if missing:
            logger.warning(
                "CVL writer %s is missing training texts %s; kept with available texts",
                writer,
                missing,
            )
    return [
        replace(r, split="train" if r.text_index in CVL_TRAIN_TEXTS else "test")
        for r in records
    ]


def _split_firemaker(records: Sequence[SampleRecord]) -> list[SampleRecord]:
    out = []
    for r in records:
        page = r.page_id.strip()
        if page == FIREMAKER_TRAIN_PAGE:
            out.append(replace(r, split="train"))
        elif page == FIREMAKER_TEST_PAGE:
            out.append(replace(r, split="test"))
        # pages 2-3 are not used at all
    return out


def _split_iam(
    records: Sequence[SampleRecord], seed: int, test_fraction: float
) -> list[SampleRecord]:
    if not 0.0 <= test_fraction <= 1.0:
        raise SplitError(f"test fraction must be in [0, 1], got {test_fraction}")
    positions: dict[str, list[int]] = defaultdict(list)
    for pos, r in enumerate(records):
        positions[r.writer_id].append(pos)

    out = list(records)
    for writer, pos_list in positions.items():
        # One substream per writer: assignments do not depend on manifest order
        # across writers, only on each writer's own record order.
        rng = np.random.default_rng(derive_seed(seed, "split", "iam", writer))
        pages = sorted({records[p].page_id for p in pos_list})
        if len(pages) > 1:
            test_page = pages[int(rng.integers(len(pages)))]
            for p in pos_list:
                split = "test" if records[p].page_id == test_page else "train"
                out[p] = replace(records[p], split=split)
        else:
            order = rng.permutation(len(pos_list))
            n_test = int(np.floor(len(pos_list) * test_fraction))
            test_local = set(order[:n_test].tolist())
            for local_i, p in enumerate(pos_list):
                split = "test" if local_i in test_local else "train"
                out[p] = replace(records[p], split=split)
    return out


@dataclass
class ValidationReport:
    """Integrity report for a split manifest."""

    n_records: int
    missing_files: list[str]
    unreadable_files: list[str]
    writers_missing_from_train: list[str]
    writers_missing_from_test: list[str]

    @property
    def missing_fraction(self) -> float:
        if self.n_records == 0:
            return 0.0
        return len(self.missing_files) / self.n_records

    @property
    def clean(self) -> bool:
        return not (
            self.missing_files
            or self.unreadable_files
            or self.writers_missing_from_train
            or self.writers_missing_from_test
        )

    def as_dict(self) -> dict:
        return {
            "clean": self.clean,
            "n_records": self.n_records,
            "missing": len(self.missing_files),
            "missing_files": self.missing_files,
            "missing_fraction": self.missing_fraction,
            "unreadable_files": self.unreadable_files,
            "writers_missing_from_train": self.writers_missing_from_train,
            "writers_missing_from_test": self.writers_missing_from_test,
        }


def validate_dataset(manifest: DatasetManifest, check_readable: bool = True) -> ValidationReport:
    """Check file presence, image readability, and per-split writer coverage.

    Report-only: callers decide whether a missing-file fraction is fatal (the
    pretraining entry point refuses to start above its configured threshold).
    """
    missing: list[str] = []
    unreadable: list[str] = []
    for r in manifest.records:
        path = manifest.resolve(r)
        if not path.exists():
            missing.append(r.image_path)
        elif check_readable:
            from .preprocess import load_word_image

            try:
                load_word_image(path)
            except Exception:
                unreadable.append(r.image_path)

    train_writers = {r.writer_id for r in manifest.records if r.split == "train"}
    test_writers = {r.writer_id for r in manifest.records if r.split == "test"}
    all_writers = {r.writer_id for r in manifest.records}
    return ValidationReport(
        n_records=len(manifest.records),
        missing_files=missing,
        unreadable_files=unreadable,
        writers_missing_from_train=sorted(all_writers - train_writers),
        writers_missing_from_test=sorted(all_writers - test_writers),
    )
