"""Decoder: spatial adaptation (SAM), dual residual aggregation (DRAM) and
residual processing that fuse rendering features with warped reference
features into the output image.

Dataflow per forward pass:
    O3 = P3(merge(SAM(F_I3, W3), F_I3))
    O2 = P2(DRAM(SAM(up(O3), W2), O3))
    O1 = P1(DRAM(SAM(up(O2), W1), O2))
    out = project(O1)
where up is bilinear 2x upsampling, merge is concat + conv, and P_i is one
conv followed by N_i residual blocks.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DecoderConfig
from .encoder import ResidualBlock, _entry_conv


class SAM(nn.Module):
    """Per-position affine remap of warped reference features.

    Scale and shift fields are predicted from the concatenation of target
    and warped features; output = scale * warped + shift. The predictor's
    last conv is zero-initialized so a fresh module is the identity
    (scale 1, shift 0).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, 2 * channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        nn.init.kaiming_normal_(self.conv1.weight, a=0.2, mode="fan_in")
        nn.init.zeros_(self.conv1.bias)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, target_feats: torch.Tensor, warped_ref_feats: torch.Tensor):
        if target_feats.shape != warped_ref_feats.shape:
            raise ValueError(
                f"SAM shape mismatch: {tuple(target_feats.shape)} vs "
                f"{tuple(warped_ref_feats.shape)}"
            )
        pred = self.conv2(self.act(self.conv1(torch.cat([target_feats, warped_ref_feats], dim=1))))
        dscale, shift = pred.chunk(2, dim=1)
        return (1.0 + dscale) * warped_ref_feats + shift


class _Refiner(nn.Module):
    """Two bias-free convs with a leaky rectifier; zero in -> zero out."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.act = nn.LeakyReLU(0.2)
        nn.init.kaiming_normal_(self.conv1.weight, a=0.2, mode="fan_in")
        nn.init.kaiming_normal_(self.conv2.weight, a=0.2, mode="fan_in")

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class DRAM(nn.Module):
    """Cross-resolution fusion: learned transposed-conv upsampling of the
    low-res branch plus bidirectional residual refinement. All convs are
    bias-free so zero inputs propagate to zero output."""

    def __init__(self, channels: int):
        super().__init__()
        self.up_low = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1, bias=False)
        self.up_res = nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1, bias=False)
        self.down_high = nn.Conv2d(channels, channels, 3, stride=2, padding=1, bias=False)
        self.refine_high = _Refiner(channels)
        self.refine_low = _Refiner(channels)
        for m in (self.up_low, self.up_res, self.down_high):
            nn.init.kaiming_normal_(m.weight, a=0.2, mode="fan_in")

    def forward(self, highres_feats: torch.Tensor, lowres_feats: torch.Tensor):
        nh, ch, hh, wh = highres_feats.shape
        nl, cl, hl, wl = lowres_feats.shape
        if ch != cl or hh != 2 * hl or wh != 2 * wl:
            raise ValueError(
                f"DRAM expects high = 2x low with equal channels, got "
                f"{tuple(highres_feats.shape)} vs {tuple(lowres_feats.shape)}"
            )
        up = self.up_low(lowres_feats)
        out = up + self.refine_high(highres_feats - up)
        out = out + self.up_res(self.refine_low(self.down_high(highres_feats) - lowres_feats))
        return out


def _upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    def __init__(self, channels: int, cfg: DecoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or DecoderConfig()
        self.cfg.validate()
        n3, n2, n1 = self.cfg.residual_blocks
        ch = channels
        self.merge3 = nn.Conv2d(2 * ch, ch, 3, padding=1)
        nn.init.kaiming_normal_(self.merge3.weight, a=0.2, mode="fan_in")
        nn.init.zeros_(self.merge3.bias)
        if self.cfg.use_sam:
            self.sam3, self.sam2, self.sam1 = SAM(ch), SAM(ch), SAM(ch)
        if self.cfg.use_dram:
            self.dram2, self.dram1 = DRAM(ch), DRAM(ch)
        else:
            self.fuse2 = nn.Conv2d(2 * ch, ch, 3, padding=1, bias=False)
            self.fuse1 = nn.Conv2d(2 * ch, ch, 3, padding=1, bias=False)
            nn.init.kaiming_normal_(self.fuse2.weight, a=0.2, mode="fan_in")
            nn.init.kaiming_normal_(self.fuse1.weight, a=0.2, mode="fan_in")
        self.proc3 = nn.Sequential(
            _entry_conv(ch, ch, 1), *[ResidualBlock(ch) for _ in range(n3)]
        )
        self.proc2 = nn.Sequential(
            _entry_conv(ch, ch, 1), *[ResidualBlock(ch) for _ in range(n2)]
        )
        self.proc1 = nn.Sequential(
            _entry_conv(ch, ch, 1), *[ResidualBlock(ch) for _ in range(n1)]
        )
        self.project = nn.Conv2d(ch, self.cfg.output_channels, 3, padding=1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def _sam(self, idx: int, target, warped):
        if not self.cfg.use_sam:
            return warped  # pass-through ablation
        return getattr(self, f"sam{idx}")(target, warped)

    def _fuse(self, idx: int, high, low):
        if self.cfg.use_dram:
            return getattr(self, f"dram{idx}")(high, low)
        return getattr(self, f"fuse{idx}")(torch.cat([high, _upsample2(low)], dim=1))

    def forward(self, pyr_render_l3: torch.Tensor, warped, clamp_output: bool = False):
        """warped: (W1, W2, W3) batched feature maps at full/half/quarter res."""
        w1, w2, w3 = warped
        if pyr_render_l3.shape != w3.shape:
            raise ValueError(
                f"level-3 shape mismatch: {tuple(pyr_render_l3.shape)} vs {tuple(w3.shape)}"
            )
        o3 = self.proc3(
            self.merge3(torch.cat([self._sam(3, pyr_render_l3, w3), pyr_render_l3], dim=1))
        )
        o2 = self.proc2(self._fuse(2, self._sam(2, _upsample2(o3), w2), o3))
        o1 = self.proc1(self._fuse(1, self._sam(1, _upsample2(o2), w1), o2))
        out = self.project(o1)
        if clamp_output:
            out = out.clamp(0.0, 1.0)
        return out
