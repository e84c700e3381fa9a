"""Three-level shared convolutional encoder producing feature pyramids."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import EncoderConfig


class ResidualBlock(nn.Module):
    """conv3x3 -> LeakyReLU(0.2) -> conv3x3 with additive skip.

    The second conv is zero-initialized so a fresh block is the identity.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        nn.init.kaiming_normal_(self.conv1.weight, a=0.2, mode="fan_in")
        nn.init.zeros_(self.conv1.bias)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


def _entry_conv(in_ch: int, out_ch: int, stride: int) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
    nn.init.kaiming_normal_(conv.weight, a=0.2, mode="fan_in")
    nn.init.zeros_(conv.bias)
    return conv


class Encoder(nn.Module):
    """Produces features at full, half and quarter resolution.

    Level 1 keeps the input resolution (stride 1); levels 2 and 3 each halve
    it with a stride-2 conv. Every level is one conv followed by residual
    blocks. Grayscale inputs are replicated to 3 channels.
    """

    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.cfg.validate()
        c1, c2, c3 = self.cfg.channels_per_level
        nb = self.cfg.residual_blocks_per_level
        self.level1 = nn.Sequential(
            _entry_conv(3, c1, 1), *[ResidualBlock(c1) for _ in range(nb)]
        )
        self.level2 = nn.Sequential(
            _entry_conv(c1, c2, 2), *[ResidualBlock(c2) for _ in range(nb)]
        )
        self.level3 = nn.Sequential(
            _entry_conv(c2, c3, 2), *[ResidualBlock(c3) for _ in range(nb)]
        )

    def forward(self, x: torch.Tensor):
        """x: (N, C, H, W) with C in {1, 3}; returns (f1, f2, f3)."""
        if x.ndim != 4:
            raise ValueError(f"expected NCHW input, got shape {tuple(x.shape)}")
        n, c, h, w = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"H and W must be divisible by 4, got {h}x{w}")
        if c == 1:
            x = x.expand(n, 3, h, w)
        elif c != 3:
            raise ValueError(f"expected 1 or 3 input channels, got {c}")
        f1 = self.level1(x)
        f2 = self.level2(f1)
        f3 = self.level3(f2)
        return f1, f2, f3
