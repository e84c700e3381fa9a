"""Reconstruction, perceptual and relativistic-average adversarial losses."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ConfigError, LossWeights

_EPS = 1e-8

# normalization statistics of the perceptual network's pretraining corpus
_PERC_MEAN = (0.485, 0.456, 0.406)
_PERC_STD = (0.229, 0.224, 0.225)


def rec_loss(gt: torch.Tensor, er: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if gt.shape != er.shape:
        raise ValueError(f"shape mismatch: {tuple(gt.shape)} vs {tuple(er.shape)}")
    return (gt - er).abs().mean()


class PerceptualExtractor(nn.Module):
    """VGG16-style feature extractor tapped at the first, fourth and seventh
    relu (relu1_1, relu2_2, relu3_3 in the usual naming).

    Weights come either from a user-supplied file (state dict of this module
    or torchvision ``vgg16().features`` keys) or, with ``random_init=True``,
    from a seeded random initialization. The random fallback is still a valid
    pseudo-metric and keeps the test suite download-free.
    """

    def __init__(self, weights_path=None, random_init: bool = False, seed: int = 0):
        super().__init__()
        cfg = [(3, 64), (64, 64), "M", (64, 128), (128, 128), "M",
               (128, 256), (256, 256), (256, 256)]
        layers = []
        for item in cfg:
            if item == "M":
                layers.append(nn.MaxPool2d(2))
            else:
                layers.append(nn.Conv2d(item[0], item[1], 3, padding=1))
                layers.append(nn.ReLU())
        self.features = nn.Sequential(*layers)
        # indices of relu1_1, relu2_2, relu3_3 within self.features
        self.tap_indices = (1, 8, 15)
        if weights_path is not None:
            self._load(weights_path)
        elif random_init:
            gen = torch.Generator().manual_seed(seed)
            for m in self.features:
                if isinstance(m, nn.Conv2d):
                    with torch.no_grad():
                        m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.05)
                        m.bias.zero_()
        else:
            raise ConfigError(
                "perceptual extractor needs a pretrained weights file or the "
                "random-init fallback flag"
            )
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _load(self, path):
        state = torch.load(path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            state = {
                k: v for k, v in state.items()
                if k.startswith("features.") and int(k.split(".")[1]) < len(self.features)
            }
        self.load_state_dict(state)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        """img: (N, 3, H, W) in [0, 1]; returns the three tap activations."""
        mean = img.new_tensor(_PERC_MEAN).view(1, 3, 1, 1)
        std = img.new_tensor(_PERC_STD).view(1, 3, 1, 1)
        x = (img - mean) / std
        taps = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x)
        return taps


def per_loss(gt: torch.Tensor, er: torch.Tensor, ext: PerceptualExtractor) -> torch.Tensor:
    """Mean squared tap-feature difference, averaged over the three taps."""
    if gt.shape != er.shape:
        raise ValueError(f"shape mismatch: {tuple(gt.shape)} vs {tuple(er.shape)}")
    taps_gt = ext(gt)
    taps_er = ext(er)
    terms = [((a - b) ** 2).mean() for a, b in zip(taps_gt, taps_er)]
    return sum(terms) / len(terms)


class Discriminator(nn.Module):
    """5-layer stride-2 conv critic with a scalar head."""

    def __init__(self, in_channels: int = 3, base_channels: int = 64):
        super().__init__()
        chans = [base_channels, base_channels * 2, base_channels * 4,
                 base_channels * 8, base_channels * 8]
        layers = []
        prev = in_channels
        for ch in chans:
            layers.append(nn.Conv2d(prev, ch, 3, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2))
            prev = ch
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(prev, 1)
        for m in self.body:
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, mode="fan_in")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.body(x)
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)


def adv_losses(gt: torch.Tensor, er: torch.Tensor, disc: Discriminator):
    """Relativistic-average GAN losses: (generator_loss, discriminator_loss).

    D(a, b) = sigmoid(C(a) - mean_batch C(b)). The discriminator pushes
    D(real, fake) up and D(fake, real) down; the generator the reverse.
    """
    if gt.shape != er.shape:
        raise ValueError(f"shape mismatch: {tuple(gt.shape)} vs {tuple(er.shape)}")
    if gt.ndim != 4 or gt.shape[0] < 1:
        raise ValueError("expected a non-empty batch of NCHW images")
    c_real = disc(gt)
    c_fake = disc(er)
    d_real = torch.sigmoid(c_real - c_fake.mean())
    d_fake = torch.sigmoid(c_fake - c_real.mean())
    disc_loss = -torch.log(d_real + _EPS).mean() - torch.log(1 - d_fake + _EPS).mean()
    gen_loss = -torch.log(1 - d_real + _EPS).mean() - torch.log(d_fake + _EPS).mean()
    return gen_loss, disc_loss


def total_loss(
    gt: torch.Tensor,
    er: torch.Tensor,
    weights: LossWeights,
    ext: PerceptualExtractor | None = None,
    disc: Discriminator | None = None,
):
    """Weighted combination; returns (scalar, components dict)."""
    weights.validate()
    components = {"rec": rec_loss(gt, er)}
    total = weights.lambda_rec * components["rec"]
    if weights.lambda_per > 0:
        if ext is None:
            raise ConfigError("lambda_per > 0 requires a perceptual extractor")
        components["per"] = per_loss(gt, er, ext)
        total = total + weights.lambda_per * components["per"]
    else:
        components["per"] = torch.zeros((), dtype=gt.dtype, device=gt.device)
    if weights.lambda_adv > 0 and disc is not None:
        gen, disc_l = adv_losses(gt, er, disc)
        components["adv"] = gen
        components["disc"] = disc_l
        total = total + weights.lambda_adv * gen
    else:
        components["adv"] = torch.zeros((), dtype=gt.dtype, device=gt.device)
        components["disc"] = torch.zeros((), dtype=gt.dtype, device=gt.device)
    return total, components
