"""Inference-time traversal of the learned attribute manifold."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .core import EXPRESSIONS, ShapeError, check_label_code, check_shape, make_rng
from .datapipe.manifest import NEUTRAL, ManifestRecord, write_manifest, write_png
from .label_embed import compose_label_channels, compound_codes, embed_label_code, scale_intensity
from .trainer import TrainState

log = logging.getLogger(__name__)


def _to_batch(x: np.ndarray, state: TrainState) -> torch.Tensor:
    s = state.cfg.image_size
    check_shape("image", np.shape(x), (s, s, 3))
    return torch.as_tensor(np.asarray(x), dtype=state.dtype).permute(2, 0, 1).unsqueeze(0)


@torch.no_grad()
def synthesize_from_channel(state: TrainState, x: np.ndarray, label_channel: torch.Tensor,
                            dropout: bool | None = None, dropout_seed: int | None = None) -> np.ndarray:
    cfg = state.cfg
    dropout = cfg.dropout_at_synthesis if dropout is None else dropout
    rng = make_rng(cfg.seed if dropout_seed is None else dropout_seed) if dropout else None
    g = state.generator
    g.eval()
    out = g(_to_batch(x, state), label_channel.to(state.dtype), dropout=dropout, rng=rng)
    return out[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)


@torch.no_grad()
def synthesize(state: TrainState, x: np.ndarray, code, dropout: bool | None = None,
               dropout_seed: int | None = None) -> np.ndarray:
    """Embed ``code`` and run the generator in synthesis mode; returns an HxWx3 image.

    Each call draws its dropout mask from a fresh generator seeded with
    ``dropout_seed`` (default: the run seed), so repeated calls agree.
    """
    code = check_label_code(code)
    if code.size != state.cfg.label_count:
        raise ShapeError(f"label code: expected length {state.cfg.label_count}, got {code.size}")
    state.embed.eval()
    channel = embed_label_code(code, state.embed)
    return synthesize_from_channel(state, x, channel, dropout, dropout_seed)


def sweep_intensities(steps: int, start: float = 0.1) -> np.ndarray:
    if steps < 2:
        raise ValueError("a sweep needs at least 2 steps")
    return np.linspace(start, 1.0, steps)


def intensity_sweep(state: TrainState, x: np.ndarray, label_index: int, steps: int = 10,
                    start: float = 0.1, dropout: bool | None = None,
                    dropout_seed: int | None = None) -> list[np.ndarray]:
    """Synthesize ``label_index`` at ``steps`` intensities spaced evenly from ``start`` to 1.0."""
    base = np.zeros(state.cfg.label_count)
    return [synthesize(state, x, scale_intensity(base, label_index, float(t)), dropout, dropout_seed)
            for t in sweep_intensities(steps, start)]


def compound_sweep(state: TrainState, x: np.ndarray, label_a: int, label_b: int, steps: int = 11,
                   mode: str = "coupled", dropout: bool | None = None, dropout_seed: int | None = None):
    """Move from pure ``label_a`` to pure ``label_b`` with intensities (1 - t, t).

    ``mode="grid"`` instead returns a steps x steps nested list over independent
    intensities (row: label_a, column: label_b).
    """
    n = state.cfg.label_count
    if mode == "coupled":
        return [synthesize(state, x, c, dropout, dropout_seed) for c in compound_codes(n, label_a, label_b, steps)]
    if mode != "grid":
        raise ValueError(f"unknown compound mode {mode!r}")
    if label_a == label_b:
        raise ValueError("compound sweep needs two distinct labels")
    ts = np.linspace(0.0, 1.0, steps)
    grid = []
    for ta in ts:
        row = []
        for tb in ts:
            c = np.zeros(n)
            c[label_a], c[label_b] = ta, tb
            row.append(synthesize(state, x, c, dropout, dropout_seed))
        grid.append(row)
    return grid


@torch.no_grad()
def region_compose_synthesis(state: TrainState, x: np.ndarray, code_a, code_b, mask,
                             dropout: bool | None = None, dropout_seed: int | None = None) -> np.ndarray:
    """Label channel from ``code_a`` where ``mask`` is 1 and ``code_b`` elsewhere."""
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    state.embed.eval()
    a = embed_label_code(check_label_code(code_a, state.cfg.label_count), state.embed)
    b = embed_label_code(check_label_code(code_b, state.cfg.label_count), state.embed)
    return synthesize_from_channel(state, x, compose_label_channels(a, b, mask), dropout, dropout_seed)


def filmstrip(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(images), axis=1)


def save_sweep(images: Sequence[np.ndarray], out_dir: str | Path, stem: str = "frame") -> Path:
    """Write each frame plus one horizontal filmstrip PNG; returns the strip path."""
    out_dir = Path(out_dir)
    for i, img in enumerate(images):
        write_png(out_dir / f"{stem}_{i:02d}.png", img)
    strip = out_dir / f"{stem}_strip.png"
    write_png(strip, filmstrip(images))
    return strip


# ---------------------------------------------------------------- augmentation

def missing_label_plan(records: Sequence[ManifestRecord], vocabulary: Sequence[str] = EXPRESSIONS,
                       subjects: Sequence[str] | None = None) -> list[tuple[str, str]]:
    """(subject, label) cells with no real record, for subjects that have a neutral image."""
    have: dict[str, set[str]] = {}
    for r in records:
        have.setdefault(r.subject_id, set()).add(r.label_name)
    plan = []
    for subject in sorted(subjects if subjects is not None else have):
        labels = have.get(subject, set())
        if NEUTRAL not in labels:
            continue
        plan.extend((subject, label) for label in vocabulary if label not in labels)
    return plan


@dataclass
class AugmentResult:
    records: list[ManifestRecord]
    images: dict[str, np.ndarray]
    skipped: list[tuple[str, str]]


def augment_dataset(state: TrainState, records: Sequence[ManifestRecord], plan: Sequence[tuple[str, str]],
                    load_image: Callable[[ManifestRecord], np.ndarray],
                    vocabulary: Sequence[str] = EXPRESSIONS, out_dir: str | Path | None = None,
                    dropout_seed: int | None = None) -> AugmentResult:
    """Synthesize each planned (subject, label) from that subject's neutral image.

    New rows are tagged ``generated=True`` under ``generated/``; existing rows
    are never replaced. With ``out_dir`` the PNGs and ``generated_manifest.csv``
    are written there.
    """
    vocabulary = list(vocabulary)
    neutral = {}
    for r in sorted(records, key=lambda r: r.image_path):
        if r.label_name == NEUTRAL and not r.generated:
            neutral.setdefault(r.subject_id, r)
    taken = {r.image_path for r in records}
    new_records, images, skipped = [], {}, []
    source_cache: dict[str, np.ndarray] = {}
    for subject, label in plan:
        if subject not in neutral:
            skipped.append((subject, label))
            continue
        if subject not in source_cache:
            source_cache[subject] = load_image(neutral[subject])
        path = f"generated/{subject}_{label}.png"
        if path in taken:
            raise FileExistsError(f"refusing to overwrite existing record {path}")
        code = np.zeros(len(vocabulary))
        code[vocabulary.index(label)] = 1.0
        images[path] = synthesize(state, source_cache[subject], code, dropout_seed=dropout_seed)
        new_records.append(ManifestRecord(subject, label, 1.0, path, generated=True))
        taken.add(path)
    if skipped:
        log.warning("augment_dataset: %d targets skipped (subject without neutral image)", len(skipped))
    if out_dir is not None and new_records:
        out_dir = Path(out_dir)
        for r in new_records:
            write_png(out_dir / r.image_path, images[r.image_path])
        write_manifest(out_dir / "generated_manifest.csv", new_records)
    return AugmentResult(new_records, images, skipped)
