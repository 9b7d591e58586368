"""Label code -> spatial label channel."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .core import ShapeError, check_label_code


class LabelEmbedding(nn.Module):
    """Two leaky-rectified fully connected layers, reshaped row-major to 1 x S x S.

    Several codes (e.g. pose + illumination) are concatenated before ``fc1``;
    ``n_labels`` is the total concatenated length.
    """

    def __init__(self, n_labels: int, size: int = 64, hidden: int = 256, leak_slope: float = 0.2):
        super().__init__()
        self.n_labels = n_labels
        self.size = size
        self.leak_slope = leak_slope
        self.fc1 = nn.Linear(n_labels, hidden)
        self.fc2 = nn.Linear(hidden, size * size)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        for fc in (self.fc1, self.fc2):
            nn.init.normal_(fc.weight, 0.0, 1.0 / math.sqrt(fc.in_features), generator=generator)
            nn.init.zeros_(fc.bias)

    def forward(self, codes: torch.Tensor) -> torch.Tensor:
        if codes.dim() != 2 or codes.shape[1] != self.n_labels:
            raise ShapeError(f"label code: expected length {self.n_labels}, got shape {tuple(codes.shape)}")
        h = F.leaky_relu(self.fc1(codes), self.leak_slope)
        h = F.leaky_relu(self.fc2(h), self.leak_slope)
        return h.view(-1, 1, self.size, self.size)


def build_embedding(n_labels: int, size: int = 64, hidden: int = 256, leak_slope: float = 0.2,
                    seed: int = 0) -> LabelEmbedding:
    emb = LabelEmbedding(n_labels, size, hidden, leak_slope)
    g = torch.Generator().manual_seed(seed)
    emb.reset_parameters(g)
    return emb


def embed_label_code(codes, params: LabelEmbedding) -> torch.Tensor:
    """Embed one code, a sequence of codes to concatenate, or a (B, N) batch.

    Returns a (B, 1, S, S) label channel (B = 1 for a single code).
    """
    if isinstance(codes, torch.Tensor) and codes.dim() == 2:
        batch = codes
    else:
        if isinstance(codes, (list, tuple)) and codes and np.ndim(codes[0]) == 1:
            parts = [check_label_code(c) for c in codes]
            flat = np.concatenate(parts)
        else:
            flat = check_label_code(codes)
        if flat.size != params.n_labels:
            raise ShapeError(f"label code: expected length {params.n_labels}, got {flat.size}")
        dtype = params.fc1.weight.dtype
        batch = torch.as_tensor(flat, dtype=dtype).unsqueeze(0)
    return params(batch)


def compose_label_channels(a: torch.Tensor, b: torch.Tensor, mask) -> torch.Tensor:
    """``mask * a + (1 - mask) * b``; mask is a binary S x S map."""
    mask = torch.as_tensor(np.asarray(mask), dtype=a.dtype)
    if a.shape != b.shape:
        raise ShapeError(f"label channels differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    if mask.shape != a.shape[-2:]:
        raise ShapeError(f"mask: expected shape {tuple(a.shape[-2:])}, got {tuple(mask.shape)}")
    return torch.where(mask.bool(), a, b)


def scale_intensity(code, label_index: int, intensity: float) -> np.ndarray:
    code = check_label_code(code)
    if not 0 <= label_index < code.size:
        raise IndexError(f"label index {label_index} out of range for {code.size} labels")
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity must lie in [0, 1], got {intensity}")
    out = code.copy()
    out[label_index] = intensity
    return out


def region_mask(kind: str, size: int = 64) -> np.ndarray:
    """Named binary masks used for spatial composition."""
    mask = np.zeros((size, size), dtype=np.uint8)
    half = size // 2
    if kind == "upper-half":
        mask[:half] = 1
    elif kind == "lower-half":
        mask[half:] = 1
    elif kind == "left-half":
        mask[:, :half] = 1
    elif kind == "right-half":
        mask[:, half:] = 1
    else:
        raise ValueError(f"unknown mask {kind!r}")
    return mask


def compound_codes(n: int, label_a: int, label_b: int, steps: int) -> list[np.ndarray]:
    """Codes moving linearly from pure ``label_a`` to pure ``label_b``."""
    if label_a == label_b:
        raise ValueError("compound sweep needs two distinct labels")
    codes = []
    for t in np.linspace(0.0, 1.0, steps):
        c = np.zeros(n)
        c[label_a] = 1.0 - t
        c[label_b] = t
        codes.append(c)
    return codes
