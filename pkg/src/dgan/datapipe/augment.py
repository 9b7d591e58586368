"""Rotation x translation augmentation (28 variants per image)."""
from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage

ROTATIONS = (-5.0, -3.0, 3.0, 5.0)
# (columns, rows)
SHIFTS = ((0, 0), (2, 0), (-2, 0), (0, 2), (0, -2), (4, 0), (-4, 0))


def shift_rotate(img: np.ndarray, angle_deg: float = 0.0, dx: float = 0.0, dy: float = 0.0) -> np.ndarray:
    """Rotate about the image centre, then translate by (dx columns, dy rows).

    Bilinear resampling with edge-replicate padding. Positive angles turn
    clockwise as displayed (rows grow downward).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    a = np.deg2rad(angle_deg)
    # inverse map in (row, col): output -> input
    inv = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    offset = centre - inv @ (centre + np.array([dy, dx]))
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.affine_transform(img[..., ch], inv, offset=offset, order=1, mode="nearest")
    return out


def linear_augment(img: np.ndarray) -> list[np.ndarray]:
    """All 4 rotations x 7 shifts of ``img``: exactly 28 images of the same shape."""
    return [shift_rotate(img, angle, dx, dy) for angle, (dx, dy) in itertools.product(ROTATIONS, SHIFTS)]
