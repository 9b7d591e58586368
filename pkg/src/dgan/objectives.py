"""Adversarial, differential and reconstruction losses, all batch means."""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .core import RunConfig, ShapeError

EPS = 1e-7


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(p).clamp(EPS, 1.0 - EPS)


def count_clamped(*scores: torch.Tensor) -> int:
    """Number of scores that sit outside [EPS, 1 - EPS] and would be clamped."""
    return int(sum(((s < EPS) | (s > 1.0 - EPS)).sum().item() for s in scores))


def loss_d_standard(scores_real, scores_fake) -> torch.Tensor:
    """mean(-log D(real) - log(1 - D(fake)))."""
    scores_real, scores_fake = torch.as_tensor(scores_real), torch.as_tensor(scores_fake)
    if scores_real.shape != scores_fake.shape:
        raise ShapeError(f"score batches differ: {tuple(scores_real.shape)} vs {tuple(scores_fake.shape)}")
    return (-torch.log(_clamp(scores_real)) - torch.log(1.0 - _clamp(scores_fake))).mean()


def loss_g_standard(scores_fake) -> torch.Tensor:
    """Non-saturating generator loss mean(-log D(fake))."""
    return (-torch.log(_clamp(scores_fake))).mean()


# The differential pair has the same functional form, applied to scores of x - y / x - G(x).
loss_d_diff = loss_d_standard
loss_g_diff = loss_g_standard


def loss_d_from_logits(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    """``loss_d_standard`` evaluated on pre-sigmoid logits (no saturation)."""
    return (F.softplus(-logits_real) + F.softplus(logits_fake)).mean()


def loss_g_from_logits(logits_fake: torch.Tensor) -> torch.Tensor:
    return F.softplus(-logits_fake).mean()


def loss_recon(y: torch.Tensor, g_out: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over batch, pixels and channels."""
    if y.shape != g_out.shape:
        raise ShapeError(f"reconstruction: shapes differ, {tuple(y.shape)} vs {tuple(g_out.shape)}")
    return (y - g_out).abs().mean()


def total_d_loss(d_standard, d_diff):
    return d_diff + d_standard


def total_g_loss(g_diff, g_standard, recon, cfg: RunConfig):
    return cfg.lambda_diff * g_diff + cfg.lambda_standard * g_standard + cfg.lambda_recon * recon


@dataclass(frozen=True)
class LossReport:
    iteration: int
    d_standard: float
    d_diff: float
    d_total: float
    g_standard: float
    g_diff: float
    recon: float
    g_total: float
    clamped: int = 0

    CSV_FIELDS = ("iteration", "d_standard", "d_diff", "d_total", "g_standard", "g_diff", "recon", "g_total")

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def csv_row(self) -> str:
        return ",".join([str(self.iteration)] + [repr(float(getattr(self, k))) for k in self.CSV_FIELDS[1:]])

    @classmethod
    def from_csv_row(cls, line: str) -> "LossReport":
        parts = line.strip().split(",")
        return cls(int(parts[0]), *map(float, parts[1:8]))

    def values(self) -> list[float]:
        return [float(getattr(self, f.name)) for f in fields(self) if f.name not in ("iteration", "clamped")]
