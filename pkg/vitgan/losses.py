"""
Hybrid generator loss (adversarial BCE + weighted L1) and the discriminator loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .exceptions import ShapeError

DEFAULT_LAMBDA_L1 = 100.0


@dataclass
class LossBreakdown:
    l1: float = 0.0
    adv_g: float = 0.0
    adv_d_real: float = 0.0
    adv_d_fake: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0
    lambda_l1: float = DEFAULT_LAMBDA_L1

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("lambda_l1")
        return row


def l1_loss(y_p: torch.Tensor, y_t: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every element."""
    if y_p.shape != y_t.shape:
        raise ShapeError(f"l1_loss: prediction {tuple(y_p.shape)} vs target {tuple(y_t.shape)}")
    return (y_t - y_p).abs().mean()


def bce_with_logits(logits: torch.Tensor, target: float) -> torch.Tensor:
    """Binary cross-entropy of sigmoid(logits) against a constant 0/1 target.

    Finite for every finite logit.
    """
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, float(target)))


def generator_loss(
    d_logits_fake: torch.Tensor,
    ab_fake: torch.Tensor,
    ab_real: torch.Tensor,
    lambda_l1: float = DEFAULT_LAMBDA_L1,
):
    """Returns ``(total, adv, l1)`` as tensors; total = adv + lambda_l1 * l1."""
    adv = bce_with_logits(d_logits_fake, 1.0)
    l1 = l1_loss(ab_fake, ab_real)
    return adv + lambda_l1 * l1, adv, l1


def discriminator_loss(d_logits_real: torch.Tensor, d_logits_fake: torch.Tensor):
    """Returns ``(total, real, fake)``; total is the mean of the two BCE terms."""
    real = bce_with_logits(d_logits_real, 1.0)
    fake = bce_with_logits(d_logits_fake, 0.0)
    return 0.5 * (real + fake), real, fake
