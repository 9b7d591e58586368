"""Manifest records, PNG I/O and neutral -> target pair construction."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from ..core import EXPRESSIONS, denormalize_image, normalize_image, one_hot

NEUTRAL = "neutral"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    subject_id: str
    label_name: str
    intensity: float = 1.0
    image_path: str = ""
    generated: bool = False

    def row(self) -> list[str]:
        out = [self.subject_id, self.label_name, repr(float(self.intensity)), self.image_path]
        if self.generated:
            out.append("generated=true")
        return out


@dataclass
class TrainingPair:
    source: np.ndarray
    target: np.ndarray
    code: np.ndarray
    subject_id: str
    label_name: str = ""


class PairList(list):
    """List of TrainingPair with pairing metadata (``skipped`` subject ids)."""

    def __init__(self, pairs=(), skipped=()):
        super().__init__(pairs)
        self.skipped = list(skipped)

    @property
    def warnings(self) -> int:
        return len(self.skipped)


def read_png(path: str | Path, size: int | None = None) -> np.ndarray:
    """Load an 8-bit RGB PNG as an HxWx3 array in [-1, 1]; ``size`` enforces a square shape."""
    with Image.open(path) as im:
        raw = np.asarray(im.convert("RGB"))
    if size is None:
        return raw.astype(np.float64) / 127.5 - 1.0
    return normalize_image(raw, size)


def write_png(path: str | Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(denormalize_image(image), mode="RGB").save(path, format="PNG")


def _parse_generated(text: str) -> bool:
    text = text.strip().lower()
    if text in ("", "generated=false", "false", "0"):
        return False
    if text in ("generated=true", "true", "1"):
        return True
    raise ValueError(f"bad generated flag {text!r}")


def load_manifest(path: str | Path, vocabulary: Sequence[str] = EXPRESSIONS) -> list[ManifestRecord]:
    """Parse ``subject_id,label_name,intensity,image_path[,generated=true]`` lines.

    Image files are not touched here; a missing file surfaces at pairing time.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "subject_id":
                continue
            if len(row) not in (4, 5):
                raise ManifestError(f"line {lineno}: expected 4 or 5 comma-separated fields, got {len(row)}")
            subject, label, intensity, image_path = (f.strip() for f in row[:4])
            if label not in vocabulary:
                raise ManifestError(f"line {lineno}: unknown label {label!r}; vocabulary is {list(vocabulary)}")
            try:
                value = float(intensity) if intensity else 1.0
                generated = _parse_generated(row[4]) if len(row) == 5 else False
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            if not 0.0 <= value <= 1.0:
                raise ManifestError(f"line {lineno}: intensity {value} outside [0, 1]")
            if not subject:
                raise ManifestError(f"line {lineno}: empty subject id")
            records.append(ManifestRecord(subject, label, value, image_path, generated))
    return records


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in records:
            w.writerow(r.row())


def png_loader(root: str | Path | None = None) -> Callable[[ManifestRecord], np.ndarray]:
    base = Path(root) if root is not None else Path(".")

    def load(record: ManifestRecord) -> np.ndarray:
        path = base / record.image_path
        if not path.exists():
            raise FileNotFoundError(f"image for {record.subject_id}/{record.label_name} not found: {path}")
        return read_png(path)

    return load


def build_pairs(records: Sequence[ManifestRecord], vocabulary: Sequence[str] = EXPRESSIONS,
                load_image: Callable[[ManifestRecord], np.ndarray] | None = None,
                root: str | Path | None = None) -> PairList:
    """One pair per record, sourced from the same subject's neutral image.

    The neutral record itself yields an identity pair. Subjects with no neutral
    record are skipped and listed in ``PairList.skipped``.
    """
    load_image = load_image or png_loader(root)
    vocabulary = list(vocabulary)
    by_subject: dict[str, list[ManifestRecord]] = defaultdict(list)
    for r in records:
        by_subject[r.subject_id].append(r)
    pairs, skipped = [], []
    cache: dict[str, np.ndarray] = {}
    for subject in sorted(by_subject):
        recs = by_subject[subject]
        neutrals = sorted((r for r in recs if r.label_name == NEUTRAL and not r.generated),
                          key=lambda r: r.image_path)
        if not neutrals:
            skipped.append(subject)
            continue
        source = load_image(neutrals[0])
        for r in recs:
            key = r.image_path or f"{r.subject_id}/{r.label_name}/{r.intensity}"
            if key not in cache:
                cache[key] = load_image(r)
            code = one_hot(vocabulary.index(r.label_name), len(vocabulary), r.intensity)
            pairs.append(TrainingPair(source, cache[key], code, subject, r.label_name))
    return PairList(pairs, skipped)
