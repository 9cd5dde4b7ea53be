"""Reconstruction objective: pixel MSE plus a perceptual term.

The perceptual features come from a fixed (non-trainable) convolutional
extractor.  By default its weights are seeded random and frozen, which
keeps the objective self-contained; a pretrained torchvision VGG can be
swapped in where downloads are acceptable.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

FEATURE_SEED = 0x5EED


class FeatureExtractor(nn.Module):
    """Three strided conv layers with frozen, seeded random weights."""

    def __init__(self, channels: int = 16, seed: int = FEATURE_SEED):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = 1
        for k in range(3):
            conv = nn.Conv2d(cin, channels, 3, stride=2, padding=1)
            with torch.no_grad():
                weight = torch.empty_like(conv.weight)
                nn.init.kaiming_normal_(weight, generator=gen)
                conv.weight.copy_(weight)
                conv.bias.zero_()
            layers += [conv, nn.GELU()]
            cin = channels
        self.net = nn.Sequential(*layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim == 3:
            images = images.unsqueeze(1)
        return self.net(images)


def reconstruction_loss(
    pred: torch.Tensor,
    truth: torch.Tensor,
    alpha_perc: float = 100.0,
    feature_extractor: FeatureExtractor | None = None,
) -> torch.Tensor:
    """MSE(truth, pred) + alpha_perc * mean squared feature difference.

    Zero iff pred equals truth; with alpha_perc = 0 this is plain MSE.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    loss = F.mse_loss(pred, truth)
    if alpha_perc != 0.0:
        if feature_extractor is None:
            raise ValueError("alpha_perc != 0 requires a feature extractor")
        loss = loss + alpha_perc * F.mse_loss(
            feature_extractor(pred), feature_extractor(truth)
        )
    return loss
