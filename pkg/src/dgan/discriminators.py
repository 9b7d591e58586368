"""Standard and differential discriminators (same architecture, different inputs)."""
from __future__ import annotations

import math

import torch
from torch import nn

from .core import check_shape
from .generator import init_weights


def discriminator_widths(image_size: int, base_width: int = 64) -> list[int]:
    """Channel widths of the stride-2 blocks; a final 4x4 valid conv maps to one logit."""
    n_strided = int(math.log2(image_size)) - 2
    if n_strided < 1:
        raise ValueError(f"image size {image_size} too small for a discriminator")
    return [min(base_width * 2 ** i, base_width * 8) for i in range(n_strided)]


class Discriminator(nn.Module):
    """Strided 4x4 convs down to 4x4, then a 4x4 valid conv to a single logit.

    For 64x64 inputs this is five conv layers with widths (64, 128, 256, 512, 1).
    BatchNorm sits on every strided block except the first; the head has none.
    Inputs are not range-restricted, so differential images in [-2, 2] pass as is.
    """

    def __init__(self, image_size: int = 64, base_width: int = 64, leak_slope: float = 0.2,
                 in_channels: int = 3):
        super().__init__()
        self.image_size = image_size
        widths = discriminator_widths(image_size, base_width)
        layers = []
        cin = in_channels
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(cin, w, 4, 2, 1, bias=i == 0))
            if i > 0:
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.LeakyReLU(leak_slope))
            cin = w
        layers.append(nn.Conv2d(cin, 1, 4, 1, 0))
        self.net = nn.Sequential(*layers)

    def logits(self, t: torch.Tensor) -> torch.Tensor:
        s = self.image_size
        check_shape("discriminator input", t.shape, (None, 3, s, s))
        return self.net(t).view(-1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(t))


def build_discriminator(seed: int, image_size: int = 64, base_width: int = 64,
                        leak_slope: float = 0.2) -> Discriminator:
    d = Discriminator(image_size, base_width, leak_slope)
    init_weights(d, torch.Generator().manual_seed(seed))
    return d


def discriminator_forward(d: Discriminator, t: torch.Tensor, train: bool = False) -> torch.Tensor:
    """Probability per batch element; inference mode uses running BatchNorm statistics."""
    d.train(train)
    return d(t)


def layer_shapes(d: Discriminator) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in d.named_parameters()]
