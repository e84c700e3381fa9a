"""Full-reference image quality metrics: PSNR, SSIM, ERQA, LPIPS.

PSNR and SSIM operate on the luma channel of 8-bit-quantized images on the
0..255 scale. ERQA compares Canny edge maps with global shift compensation
(offsets within +-3 px) and radius-1 local pixel correspondence. LPIPS needs
a scorer weights file and is reported as unavailable without one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .imaging import ImageShapeError, load_image, rgb_to_y

PSNR_CAP_DB = 99.0

_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2
_CANNY_LOW = 100
_CANNY_HIGH = 200
_ERQA_GLOBAL_SHIFT = 3


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    erqa: float
    lpips: float | None = None  # None when no scorer weights are available

    def as_dict(self) -> dict:
        d = {"psnr": self.psnr, "ssim": self.ssim, "erqa": self.erqa}
        d["lpips"] = self.lpips if self.lpips is not None else "unavailable"
        return d


def _y255(img: np.ndarray) -> np.ndarray:
    """Luma of the 8-bit-quantized image, as float64 on the 0..255 scale."""
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0)
    if img.shape[2] == 3:
        return rgb_to_y((q / 255.0).astype(np.float32)).astype(np.float64)[..., 0] * 255.0
    return q[..., 0].astype(np.float64)


def _check_shapes(gt, er):
    if gt.shape != er.shape:
        raise ImageShapeError(f"shape mismatch: {gt.shape} vs {er.shape}")


def psnr(gt: np.ndarray, er: np.ndarray) -> float:
    _check_shapes(gt, er)
    mse = np.mean((_y255(gt) - _y255(er)) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(255.0**2 / mse)))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(ax**2) / (2.0 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(gt: np.ndarray, er: np.ndarray) -> float:
    """Mean windowed SSIM, 11x11 Gaussian window sigma=1.5, valid positions."""
    _check_shapes(gt, er)
    x = _y255(gt)
    y = _y255(er)
    win = 11
    if x.shape[0] < win or x.shape[1] < win:
        raise ValueError(f"image {x.shape} smaller than the {win}x{win} SSIM window")
    kernel = _gaussian_kernel(win, 1.5)

    def filt(img):
        full = cv2.filter2D(img, -1, kernel, borderType=cv2.BORDER_CONSTANT)
        half = win // 2
        return full[half:-half, half:-half]

    mu_x = filt(x)
    mu_y = filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * sxy + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (sxx + syy + _SSIM_C2)
    return float(np.mean(num / den))


def _canny_edges(img: np.ndarray) -> np.ndarray:
    gray = np.round(_y255(img)).astype(np.uint8)
    return cv2.Canny(gray, _CANNY_LOW, _CANNY_HIGH) > 0


def _f1_radius1(gt_edges: np.ndarray, er_edges: np.ndarray) -> float:
    if not gt_edges.any() and not er_edges.any():
        return 1.0
    if not gt_edges.any() or not er_edges.any():
        return 0.0
    kernel = np.ones((3, 3), np.uint8)
    gt_dil = cv2.dilate(gt_edges.astype(np.uint8), kernel) > 0
    er_dil = cv2.dilate(er_edges.astype(np.uint8), kernel) > 0
    precision = float((er_edges & gt_dil).sum()) / float(er_edges.sum())
    recall = float((gt_edges & er_dil).sum()) / float(gt_edges.sum())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _shifted_f1(gt_edges, er_edges, dy: int, dx: int) -> float:
    h, w = gt_edges.shape
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_e = slice(max(0, -dy), min(h, h - dy))
    xs_e = slice(max(0, -dx), min(w, w - dx))
    g = gt_edges[ys, xs]
    e = er_edges[ys_e, xs_e]
    if g.size == 0:
        return 0.0
    return _f1_radius1(g, e)


def erqa(gt: np.ndarray, er: np.ndarray) -> float:
    """Edge F1 with global shift compensation and radius-1 correspondence."""
    _check_shapes(gt, er)
    gt_edges = _canny_edges(gt)
    er_edges = _canny_edges(er)
    s = _ERQA_GLOBAL_SHIFT
    best = 0.0
    for dy in range(-s, s + 1):
        for dx in range(-s, s + 1):
            best = max(best, _shifted_f1(gt_edges, er_edges, dy, dx))
    return best


class LpipsScorer:
    """Perceptual distance from channel-weighted deep-feature differences.

    Backbone: AlexNet-style conv stack tapped after each of the five relus.
    The weights file is a torch-saved dict {"backbone": state_dict,
    "lin": [per-channel weight vectors, one per tap]}.
    """

    def __init__(self, weights_path):
        import torch
        import torch.nn as nn

        self._torch = torch
        self.net = nn.Sequential(
            nn.Conv2d(3, 64, 11, stride=4, padding=2), nn.ReLU(),
            nn.MaxPool2d(3, 2),
            nn.Conv2d(64, 192, 5, padding=2), nn.ReLU(),
            nn.MaxPool2d(3, 2),
            nn.Conv2d(192, 384, 3, padding=1), nn.ReLU(),
            nn.Conv2d(384, 256, 3, padding=1), nn.ReLU(),
            nn.Conv2d(256, 256, 3, padding=1), nn.ReLU(),
        )
        self.tap_indices = (1, 4, 7, 9, 11)
        payload = torch.load(weights_path, map_location="cpu", weights_only=True)
        self.net.load_state_dict(payload["backbone"])
        self.lin = [w.abs().float() for w in payload["lin"]]
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.net.eval()

    def _features(self, img: np.ndarray):
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)[None].float()
        x = x * 2.0 - 1.0  # scorer expects [-1, 1] input
        taps = []
        for i, layer in enumerate(self.net):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x)
        return taps

    def __call__(self, gt: np.ndarray, er: np.ndarray) -> float:
        _check_shapes(gt, er)
        torch = self._torch
        total = 0.0
        with torch.no_grad():
            for tap_gt, tap_er, w in zip(self._features(gt), self._features(er), self.lin):
                a = tap_gt / tap_gt.norm(dim=1, keepdim=True).clamp(min=1e-10)
                b = tap_er / tap_er.norm(dim=1, keepdim=True).clamp(min=1e-10)
                diff = (w.view(1, -1, 1, 1) * (a - b)) ** 2
                total += float(diff.sum(dim=1).mean())
        return total


def lpips(gt: np.ndarray, er: np.ndarray, scorer: LpipsScorer) -> float:
    return scorer(gt, er)


def compute_report(gt, er, scorer: LpipsScorer | None = None) -> MetricReport:
    return MetricReport(
        psnr=psnr(gt, er),
        ssim=ssim(gt, er),
        erqa=erqa(gt, er),
        lpips=scorer(gt, er) if scorer is not None else None,
    )


def evaluate_set(manifest_path, out_dir, scorer: LpipsScorer | None = None):
    """Score every (gt, er) pair in a manifest CSV with header ``gt,er``.

    Writes per-pair rows to report.csv and the aggregate to summary.json.
    Returns (aggregate MetricReport or None, error_count).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"no pairs in manifest {manifest_path}")
    results, errors = [], []
    for i, row in enumerate(rows):
        try:
            gt = load_image(row["gt"])
            er = load_image(row["er"])
            results.append((i, row, compute_report(gt, er, scorer)))
        except Exception as exc:  # row-level failure must not abort the set
            errors.append((i, row, str(exc)))
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "gt", "er", "psnr", "ssim", "erqa", "lpips", "error"])
        for i, row, rep in results:
            writer.writerow([
                i, row["gt"], row["er"], f"{rep.psnr:.6f}", f"{rep.ssim:.6f}",
                f"{rep.erqa:.6f}",
                "unavailable" if rep.lpips is None else f"{rep.lpips:.6f}", "",
            ])
        for i, row, msg in errors:
            writer.writerow([i, row.get("gt", ""), row.get("er", ""), "", "", "", "", msg])
    aggregate = None
    if results:
        reps = [r for _, _, r in results]
        aggregate = MetricReport(
            psnr=float(np.mean([r.psnr for r in reps])),
            ssim=float(np.mean([r.ssim for r in reps])),
            erqa=float(np.mean([r.erqa for r in reps])),
            lpips=(
                float(np.mean([r.lpips for r in reps]))
                if all(r.lpips is not None for r in reps) else None
            ),
        )
    summary = {
        "pairs": len(results),
        "errors": len(errors),
        "mean": aggregate.as_dict() if aggregate else None,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return aggregate, len(errors)


def make_random_lpips_scorer(path, seed: int = 0):
    """Write a seeded random scorer weights file (testing without downloads)."""
    import torch

    import torch.nn as nn

    gen = torch.Generator().manual_seed(seed)

    net = nn.Sequential(
        nn.Conv2d(3, 64, 11, stride=4, padding=2), nn.ReLU(),
        nn.MaxPool2d(3, 2),
        nn.Conv2d(64, 192, 5, padding=2), nn.ReLU(),
        nn.MaxPool2d(3, 2),
        nn.Conv2d(192, 384, 3, padding=1), nn.ReLU(),
        nn.Conv2d(384, 256, 3, padding=1), nn.ReLU(),
        nn.Conv2d(256, 256, 3, padding=1), nn.ReLU(),
    )
    with torch.no_grad():
        for m in net:
            if isinstance(m, nn.Conv2d):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.05)
                m.bias.zero_()
    lin = [torch.rand(c, generator=gen) for c in (64, 192, 384, 256, 256)]
    torch.save({"backbone": net.state_dict(), "lin": lin}, path)
    return path
