"""U-Net generator: (image ++ label channel) -> image."""
from __future__ import annotations

import torch
from torch import nn

from .core import RunConfig, ShapeError, check_shape


def encoder_widths(base_width: int, depth: int) -> list[int]:
    return [min(base_width * 2 ** i, base_width * 8) for i in range(depth)]


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """DCGAN init: conv weights ~ N(0, 0.02), BatchNorm scale ~ N(1, 0.02), zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02, generator=generator)
            nn.init.zeros_(m.bias)


class DownBlock(nn.Module):
    def __init__(self, cin, cout, norm: bool, leak: float):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 4, 2, 1, bias=not norm)
        self.norm = nn.BatchNorm2d(cout) if norm else nn.Identity()
        self.act = nn.LeakyReLU(leak)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class UpBlock(nn.Module):
    def __init__(self, cin, cout, norm: bool, dropout: bool):
        super().__init__()
        self.conv = nn.ConvTranspose2d(cin, cout, 4, 2, 1, bias=not norm)
        self.norm = nn.BatchNorm2d(cout) if norm else nn.Identity()
        self.dropout = dropout
        self.act = nn.ReLU()

    def forward(self, x, drop_rate: float = 0.0, rng: torch.Generator | None = None):
        h = self.norm(self.conv(x))
        if self.dropout and drop_rate > 0:
            if rng is None:
                raise ValueError("dropout requested without an explicit random generator")
            keep = torch.rand(h.shape, generator=rng, dtype=h.dtype) >= drop_rate
            h = h * keep / (1.0 - drop_rate)
        return self.act(h)


class UNetGenerator(nn.Module):
    """Encoder of ``depth`` stride-2 convs, mirrored decoder with skip concatenation.

    Decoder block 1 takes the bottleneck alone; blocks 2..depth take the previous
    decoder output concatenated with the encoder activation of matching size.
    BatchNorm is skipped on the first encoder block, the first decoder block and
    the output block.
    """

    def __init__(self, image_size: int = 64, base_width: int = 64, depth: int = 6,
                 leak_slope: float = 0.2, dropout_rate: float = 0.5, in_channels: int = 4,
                 out_channels: int = 3):
        super().__init__()
        if image_size % (2 ** depth):
            raise ShapeError(f"image size {image_size} not divisible by 2**{depth}")
        self.image_size = image_size
        self.depth = depth
        self.dropout_rate = dropout_rate
        widths = encoder_widths(base_width, depth)
        self.widths = widths
        self.down = nn.ModuleList(
            DownBlock(in_channels if i == 0 else widths[i - 1], widths[i], norm=i > 0, leak=leak_slope)
            for i in range(depth)
        )
        up = []
        for j in range(depth - 1):
            cin = widths[-1] if j == 0 else 2 * widths[depth - 1 - j]
            up.append(UpBlock(cin, widths[depth - 2 - j], norm=j > 0, dropout=j < 2))
        self.up = nn.ModuleList(up)
        self.out = nn.ConvTranspose2d(2 * widths[0], out_channels, 4, 2, 1)

    def encode(self, x: torch.Tensor, label_channel: torch.Tensor) -> list[torch.Tensor]:
        s = self.image_size
        check_shape("generator image", x.shape, (None, 3, s, s))
        check_shape("label channel", label_channel.shape, (x.shape[0], 1, s, s))
        h = torch.cat([x, label_channel], dim=1)
        feats = []
        for block in self.down:
            h = block(h)
            feats.append(h)
        return feats

    def decode(self, feats: list[torch.Tensor], dropout: bool = False,
               rng: torch.Generator | None = None) -> torch.Tensor:
        rate = self.dropout_rate if dropout else 0.0
        h = feats[-1]
        for j, block in enumerate(self.up):
            if j > 0:
                h = torch.cat([h, feats[self.depth - 1 - j]], dim=1)
            h = block(h, rate, rng)
        h = torch.cat([h, feats[0]], dim=1)
        return torch.tanh(self.out(h))

    def forward(self, x, label_channel, dropout: bool = False, rng: torch.Generator | None = None):
        return self.decode(self.encode(x, label_channel), dropout, rng)


def build_generator(cfg: RunConfig, seed: int) -> UNetGenerator:
    if cfg.image_size % (2 ** cfg.depth):
        raise ShapeError(f"unsupported image size {cfg.image_size} for depth {cfg.depth}")
    g = UNetGenerator(cfg.image_size, cfg.base_width, cfg.depth, cfg.leak_slope, cfg.dropout_rate)
    init_weights(g, torch.Generator().manual_seed(seed))
    return g


def generator_forward(g: UNetGenerator, x, label_channel, mode: str = "synthesis",
                      rng: torch.Generator | None = None, dropout_at_synthesis: bool = True):
    """Run the generator in ``train`` (batch stats, dropout on) or ``synthesis`` mode.

    In synthesis mode BatchNorm uses running statistics and dropout is applied
    only when ``dropout_at_synthesis`` is set.
    """
    if mode == "train":
        g.train()
        return g(x, label_channel, dropout=True, rng=rng)
    if mode != "synthesis":
        raise ValueError(f"unknown mode {mode!r}")
    g.eval()
    return g(x, label_channel, dropout=dropout_at_synthesis, rng=rng)


def norm_layout(g: UNetGenerator) -> dict[str, bool]:
    """Which blocks carry BatchNorm, keyed by block name."""
    out = {f"down{i + 1}": isinstance(b.norm, nn.BatchNorm2d) for i, b in enumerate(g.down)}
    out.update({f"up{j + 1}": isinstance(b.norm, nn.BatchNorm2d) for j, b in enumerate(g.up)})
    out[f"up{g.depth}"] = False
    return out
