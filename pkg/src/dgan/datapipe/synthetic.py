"""Procedural synthetic faces with exact ground truth for any label code.

Faces are drawn in normalized coordinates (u right, v down, both in [-1, 1])
and anti-aliased by supersampling. Expressions move five geometric quantities:

    mouth_curvature  [-1, 1]   arc height of the mouth centre line (smile > 0)
    mouth_openness   [0, 1]    extra lens-shaped mouth thickness
    eye_openness     [0, 1]    visible fraction of the eye below the lid
    brow_angle       [-1, 1]   inner brow ends raised (> 0) or lowered
    brow_height      [-1, 1]   brow centre raised (> 0)

The same geometry is read back from pixels by :func:`measure_geometry`, which
is what the evaluation probes use on generated images.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import EXPRESSIONS, denormalize_image, normalize_image, one_hot
from .manifest import ManifestRecord, write_manifest, write_png

GEOMETRY_FIELDS = ("mouth_curvature", "mouth_openness", "eye_openness", "brow_angle", "brow_height")
NEUTRAL_GEOMETRY = np.array([0.0, 0.5, 0.5, 0.0, 0.0])
GEOMETRY_LOW = np.array([-1.0, 0.0, 0.0, -1.0, -1.0])
GEOMETRY_HIGH = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
# half-range of each quantity around neutral; measurements are compared in these units
GEOMETRY_SCALE = np.array([1.0, 0.5, 0.5, 1.0, 1.0])

# Geometry offset per unit of each expression label. In GEOMETRY_SCALE units the
# six offsets are vertices of a regular simplex (pairwise cosine -0.2), rotated
# to sit closest to a hand-written smile/frown/brow description of each label.
SIGNATURES = {
    "neutral": (0.0, 0.0, 0.0, 0.0, 0.0),
    "anger": (-0.058, -0.282, 0.122, -0.812, -0.404),
    "disgust": (-0.398, 0.298, -0.329, -0.036, -0.505),
    "fear": (0.075, 0.108, 0.400, 0.586, -0.411),
    "happiness": (1.000, -0.052, -0.205, 0.126, 0.095),
    "sadness": (-0.517, -0.333, -0.127, 0.524, 0.393),
    "surprise": (-0.102, 0.260, 0.140, -0.388, 0.833),
}

IDENTITY_RANGES = {
    "face_hue": (0.0, 0.12),
    "face_aspect": (0.8, 1.0),
    "eye_spacing": (0.26, 0.36),
    "skin_tone": (0.55, 0.95),
}

BACKGROUND = np.array([0.15, 0.18, 0.22])
DARK = np.array([0.08, 0.06, 0.06])
LIP = np.array([0.45, 0.05, 0.08])
LUMA = np.array([0.299, 0.587, 0.114])

HEAD_CENTER_V = 0.02
HEAD_AXES = (0.78, 0.92)
EYE_V, EYE_AXES = -0.08, (0.13, 0.12)
BROW_V, BROW_RISE, BROW_HALF, BROW_THICK, BROW_TILT = -0.42, 0.10, 0.15, 0.08, 0.30
MOUTH_V, MOUTH_HALF, MOUTH_ARC, MOUTH_THICK, MOUTH_OPEN = 0.45, 0.30, 0.14, 0.045, 0.14

SUPERSAMPLE = 8


@dataclass(frozen=True)
class Identity:
    face_hue: float
    face_aspect: float
    eye_spacing: float
    skin_tone: float

    def __post_init__(self):
        for name, (lo, hi) in IDENTITY_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"identity field {name}={v} outside [{lo}, {hi}]")

    @property
    def skin(self) -> np.ndarray:
        return np.array(colorsys.hsv_to_rgb(self.face_hue, 0.45, self.skin_tone))


@dataclass(frozen=True)
class SyntheticFaceSpec:
    identity: Identity
    attributes: tuple = field(default_factory=lambda: (0.0,) * len(EXPRESSIONS))
    labels: tuple = EXPRESSIONS
    size: int = 64

    def __post_init__(self):
        attrs = np.asarray(self.attributes, dtype=float)
        if attrs.shape != (len(self.labels),):
            raise ValueError(f"expected {len(self.labels)} attribute magnitudes, got {attrs.shape}")
        if np.any(attrs < 0) or np.any(attrs > 1):
            raise ValueError("attribute magnitudes must lie in [0, 1]")
        unknown = [name for name in self.labels if name not in SIGNATURES]
        if unknown:
            raise ValueError(f"no geometric signature for labels {unknown}")

    def geometry(self) -> np.ndarray:
        return geometry_from_attributes(self.attributes, self.labels)


def geometry_from_attributes(attributes, labels: Sequence[str] = EXPRESSIONS) -> np.ndarray:
    g = NEUTRAL_GEOMETRY.copy()
    for name, a in zip(labels, attributes):
        g = g + float(a) * np.asarray(SIGNATURES[name])
    return np.clip(g, GEOMETRY_LOW, GEOMETRY_HIGH)


def _grid(size: int, ss: int):
    n = size * ss
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    return np.meshgrid(c, c)  # (u, v), v indexes rows


def _feature_masks(u, v, ident: Identity, geom) -> dict[str, np.ndarray]:
    curv, mopen, eopen, bangle, bheight = geom
    es = ident.eye_spacing
    out = {}
    ax, ay = EYE_AXES
    eyes = np.zeros(u.shape, bool)
    for side in (-1, 1):
        inside = ((u - side * es) / ax) ** 2 + ((v - EYE_V) / ay) ** 2 <= 1.0
        lid = EYE_V - ay + (1.0 - eopen) * 2 * ay
        eyes |= inside & (v >= lid)
    out["eyes"] = eyes
    brows = np.zeros(u.shape, bool)
    theta = BROW_TILT * bangle
    cv = BROW_V - BROW_RISE * bheight
    for side in (-1, 1):
        # side = +1 is the right brow; its inner end sits at smaller u
        d = np.array([np.cos(theta), side * np.sin(theta)])
        du, dv = u - side * es, v - cv
        along = du * d[0] + dv * d[1]
        across = -du * d[1] + dv * d[0]
        brows |= (np.abs(along) <= BROW_HALF) & (np.abs(across) <= BROW_THICK / 2)
    out["brows"] = brows
    t = u / MOUTH_HALF
    line = MOUTH_V - curv * MOUTH_ARC * (t ** 2 - 1.0 / 3.0)
    half = MOUTH_THICK + mopen * MOUTH_OPEN * np.clip(1 - t ** 2, 0, None)
    out["mouth"] = (np.abs(t) <= 1.0) & (np.abs(v - line) <= half)
    return out


def render_geometry(ident: Identity, geometry, size: int = 64) -> np.ndarray:
    """Render explicit geometry; returns an HxWx3 image on the 8-bit lattice in [-1, 1]."""
    geom = np.clip(np.asarray(geometry, dtype=float), GEOMETRY_LOW, GEOMETRY_HIGH)
    u, v = _grid(size, SUPERSAMPLE)
    img = np.empty(u.shape + (3,))
    img[:] = BACKGROUND
    hx, hy = HEAD_AXES[0] * ident.face_aspect, HEAD_AXES[1]
    head = (u / hx) ** 2 + ((v - HEAD_CENTER_V) / hy) ** 2 <= 1.0
    img[head] = ident.skin
    masks = _feature_masks(u, v, ident, geom)
    img[masks["eyes"]] = DARK
    img[masks["brows"]] = DARK
    img[masks["mouth"]] = LIP
    img = img.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE, 3).mean(axis=(1, 3))
    raw = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return normalize_image(raw, size)


def render_synthetic_face(spec: SyntheticFaceSpec) -> np.ndarray:
    return render_geometry(spec.identity, spec.geometry(), spec.size)


# ---------------------------------------------------------------- measurement

def _boxes(ident: Identity) -> dict[str, list[tuple[float, float, float, float]]]:
    es = ident.eye_spacing
    return {
        "eyes": [(s * es - 0.17, s * es + 0.17, -0.22, 0.08) for s in (-1, 1)],
        "brows": [(s * es - 0.22, s * es + 0.22, -0.68, -0.22) for s in (-1, 1)],
        "mouth": [(-0.38, 0.38, 0.12, 0.80)],
    }


def attribute_regions(ident: Identity, size: int = 64) -> dict[str, np.ndarray]:
    """Boolean pixel masks of the eye, brow and mouth measurement boxes."""
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    u, v = np.meshgrid(c, c)
    out = {}
    for name, boxes in _boxes(ident).items():
        m = np.zeros((size, size), bool)
        for u0, u1, v0, v1 in boxes:
            m |= (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
        out[name] = m
    return out


def _coverage(image: np.ndarray, ident: Identity, color: np.ndarray) -> np.ndarray:
    """Per-pixel fraction of a dark feature colour over the skin, from luminance."""
    rgb = (np.asarray(image, dtype=float) + 1.0) / 2.0
    skin_l = float(LUMA @ ident.skin)
    feat_l = float(LUMA @ color)
    return np.clip((skin_l - rgb @ LUMA) / (skin_l - feat_l), 0.0, 1.0)


def measure_geometry(image: np.ndarray, ident: Identity) -> np.ndarray:
    """Estimate the five geometric quantities from pixels (same units as the renderer)."""
    size = image.shape[0]
    px = 2.0 / size
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    u, v = np.meshgrid(c, c)
    boxes = _boxes(ident)

    def box_mask(b):
        u0, u1, v0, v1 = b
        return (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)

    dark = _coverage(image, ident, DARK)
    lip = _coverage(image, ident, LIP)

    # mouth: fit centre line v = a + b * (u / half)^2 to per-column centroids
    m = box_mask(boxes["mouth"][0])
    w = np.where(m, lip, 0.0)
    col_mass = w.sum(axis=0)
    keep = col_mass > 1e-6
    if keep.sum() >= 3:
        cent = (w * v).sum(axis=0)[keep] / col_mass[keep]
        t2 = (c[keep] / MOUTH_HALF) ** 2
        A = np.stack([np.ones_like(t2), t2], axis=1)
        sw = np.sqrt(col_mass[keep])
        coef = np.linalg.lstsq(A * sw[:, None], cent * sw, rcond=None)[0]
        curvature = -coef[1] / MOUTH_ARC
    else:
        curvature = 0.0
    area = w.sum() * px * px
    base_area = 2 * MOUTH_THICK * 2 * MOUTH_HALF
    open_area = 2 * MOUTH_OPEN * (4.0 / 3.0) * MOUTH_HALF
    openness = (area - base_area) / open_area

    ax, ay = EYE_AXES
    eye_area = sum((dark * box_mask(b)).sum() for b in boxes["eyes"]) * px * px / 2
    eye_open = eye_area / (np.pi * ax * ay)

    heights, slopes = [], []
    for side, b in zip((-1, 1), boxes["brows"]):
        wb = dark * box_mask(b)
        mass = wb.sum()
        if mass <= 1e-9:
            heights.append(0.0)
            slopes.append(0.0)
            continue
        mu, mv = (wb * u).sum() / mass, (wb * v).sum() / mass
        cov = (wb * (u - mu) * (v - mv)).sum() / mass
        var = (wb * (u - mu) ** 2).sum() / mass
        heights.append(-(mv - BROW_V) / BROW_RISE)
        slopes.append(side * cov / max(var, 1e-12))
    angle = np.arctan(np.mean(slopes)) / BROW_TILT
    return np.array([curvature, openness, eye_open, angle, float(np.mean(heights))])


# ---------------------------------------------------------------- oracle

class SyntheticOracle:
    """Renders any (subject, label code) and measures attributes on arbitrary images."""

    def __init__(self, identities: dict[str, Identity], labels: Sequence[str] = EXPRESSIONS, size: int = 64):
        self.identities = dict(identities)
        self.labels = tuple(labels)
        self.size = size
        self._calib: dict[str, dict] = {}

    @property
    def subjects(self) -> list[str]:
        return sorted(self.identities)

    def code(self, label: str, intensity: float = 1.0) -> np.ndarray:
        return one_hot(self.labels.index(label), len(self.labels), intensity)

    def render(self, subject: str, code) -> np.ndarray:
        spec = SyntheticFaceSpec(self.identities[subject], tuple(np.asarray(code, float)), self.labels, self.size)
        return render_synthetic_face(spec)

    def image_for(self, record: ManifestRecord) -> np.ndarray:
        return self.render(record.subject_id, self.code(record.label_name, record.intensity))

    def features(self, image: np.ndarray, subject: str) -> np.ndarray:
        return measure_geometry(image, self.identities[subject]) / GEOMETRY_SCALE

    def _calibration(self, subject: str) -> dict:
        if subject not in self._calib:
            f0 = self.features(self.render(subject, np.zeros(len(self.labels))), subject)
            dirs, thresholds = {}, {}
            for label in self.labels:
                if label == "neutral":
                    continue
                f1 = self.features(self.render(subject, self.code(label, 1.0)), subject)
                dirs[label] = f1 - f0
            self._calib[subject] = {"f0": f0, "dirs": dirs}
            for label in dirs:
                thresholds[label] = self.magnitude(self.render(subject, self.code(label, 0.5)), subject, label)
            self._calib[subject]["thresholds"] = thresholds
        return self._calib[subject]

    def magnitude(self, image: np.ndarray, subject: str, label: str) -> float:
        """Projection of the measured geometry change onto the label's direction.

        Calibrated per subject so the neutral render scores 0 and the full
        intensity render scores 1.
        """
        cal = self._calibration(subject)
        d = cal["dirs"][label]
        return float((self.features(image, subject) - cal["f0"]) @ d / (d @ d))

    def magnitudes(self, image: np.ndarray, subject: str) -> dict[str, float]:
        return {label: self.magnitude(image, subject, label) for label in self._calibration(subject)["dirs"]}

    def threshold(self, subject: str, label: str) -> float:
        return self._calibration(subject)["thresholds"][label]

    def probe(self, image: np.ndarray, subject: str, label: str) -> bool:
        """Is ``label`` expressed? Neutral passes iff no expression clears its threshold.

        An expression passes iff it clears its own intensity-0.5 threshold and
        clears it by the widest margin among all expressions.
        """
        mags = self.magnitudes(image, subject)
        margins = {k: mags[k] - self.threshold(subject, k) for k in mags}
        if label == "neutral":
            return all(m < 0 for m in margins.values())
        best = max(margins, key=margins.get)
        return margins[label] >= 0 and best == label


def sample_identities(n: int, rng: np.random.Generator, prefix: str = "s", start: int = 0) -> dict[str, Identity]:
    out = {}
    for i in range(n):
        vals = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in IDENTITY_RANGES.items()}
        out[f"{prefix}{start + i:03d}"] = Identity(**vals)
    return out


def gen_synthetic_dataset(n_subjects: int, labels: Sequence[str] = EXPRESSIONS, seed: int = 0,
                          size: int = 64, out_dir: str | Path | None = None, prefix: str = "s"):
    """Sample identities and emit one full-intensity record per (subject, label).

    Returns ``(records, oracle)``. With ``out_dir`` the PNGs and ``manifest.csv``
    are written there and ``image_path`` is relative to it.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    rng = np.random.default_rng(seed)
    oracle = SyntheticOracle(sample_identities(n_subjects, rng, prefix), labels, size)
    records = [ManifestRecord(s, label, 1.0, f"{s}/{label}.png")
               for s in oracle.subjects for label in labels]
    if out_dir is not None:
        out_dir = Path(out_dir)
        for r in records:
            write_png(out_dir / r.image_path, oracle.image_for(r))
        write_manifest(out_dir / "manifest.csv", records)
    return records, oracle


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap an image onto the 8-bit lattice (what a PNG round trip does)."""
    return normalize_image(denormalize_image(image), image.shape[0])
