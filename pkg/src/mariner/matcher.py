"""Coarse-to-fine cosine-similarity matching and score-weighted warping.

Matching runs on the deepest (quarter-resolution) features of rendering and
reference. Each rendering cell searches the union of a strided coarse grid
and a local window around the best coarse match of its governing coarse
cell, keeping the cosine argmax. Ties break on the first candidate in
row-major scan order. The match map then warps all three reference levels:
a level-3 cell match (u, v) moves the aligned 2x2 block at level 2 and 4x4
block at level 1, each scaled by max(score, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import MatcherConfig


@dataclass
class MatchMap:
    index_u: torch.Tensor  # (h, w) long, row index into reference level 3
    index_v: torch.Tensor  # (h, w) long, column index
    score: torch.Tensor  # (h, w) cosine similarity in [-1, 1]

    def validate(self, h_ref: int, w_ref: int):
        if (
            self.index_u.min() < 0
            or self.index_u.max() >= h_ref
            or self.index_v.min() < 0
            or self.index_v.max() >= w_ref
        ):
            raise ValueError("match indices out of reference bounds")


def _normalize_rows(x: torch.Tensor) -> torch.Tensor:
    # zero-norm vectors stay zero: similarity 0 to everything
    norm = x.norm(dim=1, keepdim=True)
    return torch.where(norm > 0, x / norm.clamp(min=1e-30), torch.zeros_like(x))


def match(
    feat_render_l3: torch.Tensor,
    feat_ref_l3: torch.Tensor,
    cfg: MatcherConfig | None = None,
) -> MatchMap:
    """Match (C, h, w) rendering features against (C, hr, wr) reference features."""
    cfg = cfg or MatcherConfig()
    cfg.validate()
    if feat_render_l3.ndim != 3 or feat_ref_l3.ndim != 3:
        raise ValueError("expected (C, h, w) feature maps")
    if feat_render_l3.shape[0] != feat_ref_l3.shape[0]:
        raise ValueError(
            f"channel mismatch: {feat_render_l3.shape[0]} vs {feat_ref_l3.shape[0]}"
        )
    c, hi, wi = feat_render_l3.shape
    _, hr, wr = feat_ref_l3.shape
    stride = cfg.coarse_stride
    if min(hi, wi, hr, wr) < stride:
        raise ValueError(
            f"spatial sizes must be >= coarse_stride ({stride}), "
            f"got {hi}x{wi} and {hr}x{wr}"
        )

    q = _normalize_rows(feat_render_l3.reshape(c, -1).T)  # (Ni, C)
    r = _normalize_rows(feat_ref_l3.reshape(c, -1).T)  # (Nr, C)
    sim = q @ r.T  # (Ni, Nr)
    sim_np = sim.detach().cpu().numpy()

    coarse_rows = np.arange(0, hr, stride)
    coarse_cols = np.arange(0, wr, stride)
    coarse_flat = (coarse_rows[:, None] * wr + coarse_cols[None, :]).ravel()

    rad = cfg.refine_radius
    best_flat = np.empty(hi * wi, dtype=np.int64)
    for x0 in range(0, hi, stride):
        for y0 in range(0, wi, stride):
            anchor = x0 * wi + y0
            cbest = coarse_flat[int(np.argmax(sim_np[anchor, coarse_flat]))]
            u0, v0 = divmod(int(cbest), wr)
            win_rows = np.arange(max(0, u0 - rad), min(hr, u0 + rad + 1))
            win_cols = np.arange(max(0, v0 - rad), min(wr, v0 + rad + 1))
            win_flat = (win_rows[:, None] * wr + win_cols[None, :]).ravel()
            cand = np.union1d(coarse_flat, win_flat)  # sorted => row-major ties
            gx = np.arange(x0, min(x0 + stride, hi))
            gy = np.arange(y0, min(y0 + stride, wi))
            rows = (gx[:, None] * wi + gy[None, :]).ravel()
            sub = sim_np[np.ix_(rows, cand)]
            best_flat[rows] = cand[np.argmax(sub, axis=1)]

    flat_t = torch.from_numpy(best_flat).to(feat_render_l3.device)
    score = sim[torch.arange(hi * wi, device=sim.device), flat_t]
    score = score.clamp(-1.0, 1.0).reshape(hi, wi)
    index_u = (flat_t // wr).reshape(hi, wi)
    index_v = (flat_t % wr).reshape(hi, wi)
    return MatchMap(index_u=index_u, index_v=index_v, score=score)


def _warp_level(feat: torch.Tensor, matches: MatchMap, block: int) -> torch.Tensor:
    c, hf, wf = feat.shape
    h, w = matches.index_u.shape
    u = (matches.index_u * block).repeat_interleave(block, 0).repeat_interleave(block, 1)
    v = (matches.index_v * block).repeat_interleave(block, 0).repeat_interleave(block, 1)
    off = torch.arange(block, device=feat.device)
    rows = u + off.repeat(h).view(h * block, 1)
    cols = v + off.repeat(w).view(1, w * block)
    rows = rows.expand(h * block, w * block)
    cols = cols.expand(h * block, w * block)
    if rows.max() >= hf or cols.max() >= wf:
        raise ValueError("match indices out of range for this pyramid level")
    weight = matches.score.clamp(min=0)
    weight = weight.repeat_interleave(block, dim=0).repeat_interleave(block, dim=1)
    return feat[:, rows, cols] * weight.unsqueeze(0)


def warp(pyr_ref: tuple[torch.Tensor, ...], matches: MatchMap):
    """Warp a reference pyramid (f1, f2, f3), each (C, *, *), by a MatchMap."""
    f1, f2, f3 = pyr_ref
    matches.validate(f3.shape[1], f3.shape[2])
    return (
        _warp_level(f1, matches, 4),
        _warp_level(f2, matches, 2),
        _warp_level(f3, matches, 1),
    )


def brute_force_match(feat_render_l3, feat_ref_l3) -> MatchMap:
    """Exhaustive O(N^2) cosine argmax; independent oracle for match()."""
    c, hi, wi = feat_render_l3.shape
    _, hr, wr = feat_ref_l3.shape
    q = _normalize_rows(feat_render_l3.reshape(c, -1).T).cpu().numpy()
    r = _normalize_rows(feat_ref_l3.reshape(c, -1).T).cpu().numpy()
    best_u = np.empty((hi, wi), dtype=np.int64)
    best_v = np.empty((hi, wi), dtype=np.int64)
    best_s = np.empty((hi, wi), dtype=np.float64)
    for x in range(hi):
        for y in range(wi):
            sims = r @ q[x * wi + y]
            k = int(np.argmax(sims))
            best_u[x, y], best_v[x, y] = divmod(k, wr)
            best_s[x, y] = min(1.0, max(-1.0, sims[k]))
    return MatchMap(
        index_u=torch.from_numpy(best_u),
        index_v=torch.from_numpy(best_v),
        score=torch.from_numpy(best_s),
    )


def match_debug_image(matches: MatchMap, h_ref: int, w_ref: int) -> np.ndarray:
    """False-color visualization: (u, v) -> hue, score -> value."""
    u = matches.index_u.cpu().numpy().astype(np.float64)
    v = matches.index_v.cpu().numpy().astype(np.float64)
    s = matches.score.detach().cpu().numpy()
    hue = (u / max(h_ref - 1, 1) + v / max(w_ref - 1, 1)) / 2.0
    val = np.clip(s, 0.0, 1.0)
    import colorsys

    out = np.zeros(u.shape + (3,), dtype=np.float32)
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            out[i, j] = colorsys.hsv_to_rgb(hue[i, j], 1.0, val[i, j])
    return out
