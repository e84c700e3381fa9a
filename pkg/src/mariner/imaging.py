"""Image loading, saving, color conversion and resizing.

Images are numpy float32 arrays of shape (H, W, C) with values in [0, 1]
and C in {1, 3}. All functions are pure.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

# BT.601 full-range luma coefficients
_Y_COEFFS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ImageShapeError(ValueError):
    """Raised when an image has an unexpected shape or channel count."""


class ImageDecodeError(ValueError):
    """Raised when a file cannot be decoded as PNG/JPEG."""


def validate_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageShapeError(f"expected (H, W, 1|3) array, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I"):
                im = im.convert("L")
                arr = np.asarray(im, dtype=np.float32)[..., None]
            else:
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float32)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return (arr / 255.0).astype(np.float32)


def save_image(img: np.ndarray, path):
    """Write an image as 8-bit PNG."""
    validate_image(img)
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[..., 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Full-range BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageShapeError(f"rgb_to_y expects (H, W, 3), got {img.shape}")
    y = img.astype(np.float64) @ _Y_COEFFS
    return y.astype(np.float32)[..., None]


def resize(img: np.ndarray, h: int, w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize with half-pixel-center (align-corners=false) bilinear or nearest."""
    import cv2

    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {h}x{w}")
    if mode == "bilinear":
        interp = cv2.INTER_LINEAR
    elif mode == "nearest":
        interp = cv2.INTER_NEAREST
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    if img.shape[0] == h and img.shape[1] == w:
        return img.copy()
    out = cv2.resize(img, (w, h), interpolation=interp)
    if out.ndim == 2:
        out = out[..., None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
