"""Synthetic triplet generation: frame sequences, degradation, dataset
manifests, mesh-quality augmentation and homography-based filtering.

A triplet is (rendering, reference, gt): gt is a clean frame, the rendering
is a degraded copy of it (standing in for a mesh render), and the reference
is a nearby clean frame. Reference level k corresponds to a fixed frame
offset of k * fps frames; level 0 means reference = gt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .config import DegradeConfig
from .imaging import load_image, save_image

MANIFEST_HEADER = ["rendering", "reference", "gt", "ref_level"]


@dataclass
class Triplet:
    rendering: np.ndarray
    reference: np.ndarray
    gt: np.ndarray
    ref_level: int = 0


def _frame_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index * 7919) % (2**31 - 1)


def generate_frames(out_dir, n_frames: int, size: int = 96, seed: int = 0) -> list[Path]:
    """Procedural camera-walk sequence: crops drifting over a textured canvas.

    The canvas mixes smooth color gradients, blocky shapes and fine texture so
    frames have both corners and flat regions; neighboring frames overlap
    heavily, distant frames little.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    speed = size / 96.0  # px per frame; slow steady drift
    canvas_size = int(3 * size + n_frames * speed)
    canvas = rng.uniform(0.2, 0.8, (canvas_size // 8, canvas_size // 8, 3))
    canvas = cv2.resize(canvas, (canvas_size, canvas_size), interpolation=cv2.INTER_LINEAR)
    for _ in range(400):
        x, y = rng.integers(0, canvas_size - size // 2, 2)
        w, h = rng.integers(size // 12, size // 2, 2)
        color = rng.uniform(0, 1, 3)
        if rng.random() < 0.5:
            cv2.rectangle(canvas, (int(x), int(y)), (int(x + w), int(y + h)),
                          color.tolist(), thickness=-1)
        else:
            cv2.circle(canvas, (int(x), int(y)), int(w) // 2, color.tolist(), thickness=-1)
    canvas += rng.normal(0, 0.02, canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0).astype(np.float32)

    # steady diagonal drift with small jitter: displacement grows with
    # temporal distance, so frame overlap decays monotonically
    pos = np.array([size * 1.0, size * 1.0], dtype=np.float64)
    heading = rng.uniform(0.3, 0.7)
    direction = np.array([np.cos(heading), np.sin(heading)])
    paths = []
    for t in range(n_frames):
        pos += direction * speed
        jitter = rng.uniform(-1, 1, 2) * speed * 0.3
        lo, hi = 0, canvas_size - size - 1
        x0 = int(np.clip(pos[0] + jitter[0], lo, hi))
        y0 = int(np.clip(pos[1] + jitter[1], lo, hi))
        frame = canvas[y0 : y0 + size, x0 : x0 + size]
        path = out_dir / f"frame_{t:05d}.png"
        save_image(frame, path)
        paths.append(path)
    return paths


def _flatten_segments(img: np.ndarray, n_segments: int, seed: int) -> np.ndarray:
    from skimage.segmentation import slic

    labels = slic(
        img, n_segments=n_segments, compactness=10.0, start_label=0,
        channel_axis=2, enforce_connectivity=True,
    )
    out = np.empty_like(img)
    flat = img.reshape(-1, img.shape[2])
    lab = labels.ravel()
    counts = np.bincount(lab)
    for c in range(img.shape[2]):
        sums = np.bincount(lab, weights=flat[:, c])
        out[..., c] = (sums / np.maximum(counts, 1))[labels]
    return out


def degrade(gt: np.ndarray, cfg: DegradeConfig, seed: int) -> np.ndarray:
    """Deterministic synthetic degradation: piecewise flattening, blur,
    per-channel color shift, flat-gray holes."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    img = gt.astype(np.float32).copy()
    if cfg.flatten_segments > 0:
        n_seg = max(1, int(round(cfg.flatten_segments * cfg.mesh_quality)))
        img = _flatten_segments(img, n_seg, seed)
    if cfg.blur_sigma > 0:
        img = cv2.GaussianBlur(img, (0, 0), cfg.blur_sigma)
        if img.ndim == 2:
            img = img[..., None]
    gains = rng.uniform(cfg.color_gain[0], cfg.color_gain[1], img.shape[2])
    offsets = rng.uniform(cfg.color_offset[0], cfg.color_offset[1], img.shape[2])
    img = img * gains.astype(np.float32) + offsets.astype(np.float32)
    if cfg.hole_fraction > 0:
        h, w = img.shape[:2]
        target_area = cfg.hole_fraction * h * w
        covered = 0.0
        while covered < target_area:
            hh = int(rng.integers(max(2, h // 12), max(3, h // 5)))
            ww = int(rng.integers(max(2, w // 12), max(3, w // 5)))
            y = int(rng.integers(0, max(1, h - hh)))
            x = int(rng.integers(0, max(1, w - ww)))
            img[y : y + hh, x : x + ww] = 0.5
            covered += hh * ww
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def build_dataset(
    frames_dir,
    out_dir,
    cfg: DegradeConfig,
    mode: str = "train",
    ref_window: int = 50,
    ref_level: int = 1,
    fps: int = 10,
    seed: int = 0,
) -> Path:
    """Build a triplet dataset from an ordered frame directory.

    train mode: reference offset uniform in [1, ref_window] per frame.
    eval mode: fixed offset ref_level * fps (level 0 -> reference = gt).
    Returns the manifest path.
    """
    frames_dir = Path(frames_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames in {frames_dir}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    rows = []
    for t, frame_path in enumerate(frames):
        fseed = _frame_seed(seed, t)
        rng = np.random.default_rng(fseed)
        if mode == "train":
            delta = int(rng.integers(1, ref_window + 1))
            level = -1  # not a fixed level in train mode
        else:
            delta = ref_level * fps
            level = ref_level
        ref_idx = t + delta
        if ref_idx >= len(frames):
            continue
        gt = load_image(frame_path)
        rendering = degrade(gt, cfg, fseed)
        render_path = out_dir / f"render_{t:05d}.png"
        save_image(rendering, render_path)
        gt_out = out_dir / f"gt_{t:05d}.png"
        save_image(gt, gt_out)
        rows.append([str(render_path), str(frames[ref_idx]), str(gt_out),
                     level if mode == "eval" else delta])
    if not rows:
        raise ValueError("no triplets produced; sequence shorter than reference offset")
    manifest = out_dir / "manifest.csv"
    _write_manifest(manifest, rows)
    return manifest


def _write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def augment_mesh_quality(manifest_path, fraction: float = 0.1, seed: int = 0) -> Path:
    """Append duplicates of every triplet with the rendering re-degraded at
    the given mesh quality. Doubles the dataset size in place."""
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    out_dir = manifest_path.parent
    new_rows = [[r["rendering"], r["reference"], r["gt"], r["ref_level"]] for r in rows]
    for i, r in enumerate(rows):
        gt = load_image(r["gt"])
        cfg = DegradeConfig(mesh_quality=fraction)
        degraded = degrade(gt, cfg, _frame_seed(seed + 1, i))
        path = out_dir / f"render_mq_{i:05d}.png"
        save_image(degraded, path)
        new_rows.append([str(path), r["reference"], r["gt"], r["ref_level"]])
    _write_manifest(manifest_path, new_rows)
    return manifest_path


def filter_by_homography(manifest_path, threshold: float = 3.0, seed: int = 0):
    """Drop triplets whose rendering-to-gt homography deviates from identity
    by more than ``threshold`` px of mean corner displacement, or cannot be
    matched at all. Returns (filtered manifest path, report dict)."""
    from .geomcheck import estimate

    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    kept, dropped = [], 0
    for r in rows:
        rendering = load_image(r["rendering"])
        gt = load_image(r["gt"])
        rep = estimate(rendering, gt, seed=seed)
        if rep.matched and rep.homography_error <= threshold:
            kept.append([r["rendering"], r["reference"], r["gt"], r["ref_level"]])
        else:
            dropped += 1
    out_path = manifest_path.with_name("manifest_filtered.csv")
    _write_manifest(out_path, kept)
    report = {
        "total": len(rows),
        "kept": len(kept),
        "dropped": dropped,
        "drop_fraction": dropped / len(rows) if rows else 0.0,
    }
    return out_path, report
