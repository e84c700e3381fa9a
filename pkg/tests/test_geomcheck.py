import csv

import cv2
import numpy as np
import pytest

from mariner import datagen, geomcheck
from mariner.imaging import load_image, save_image


@pytest.fixture(scope="module")
def textured(tmp_path_factory):
    d = tmp_path_factory.mktemp("gframes")
    datagen.generate_frames(d, 3, size=96, seed=3)
    return load_image(sorted(d.iterdir())[0])


def test_identity_pair(textured):
    rep = geomcheck.estimate(textured, textured, seed=0)
    assert rep.matched
    assert rep.num_matches >= 50
    assert rep.inlier_ratio > 0.9
    assert rep.homography_error < 0.5
    assert rep.homography[2, 2] == 1.0


def test_known_homography_recovered(textured):
    h, w = textured.shape[:2]
    # perspective warp moving each corner ~5 px
    src = np.float32([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]])
    dst = src + np.float32([[5, 3], [-4, 5], [4, -5], [-5, -4]])
    H_true = cv2.getPerspectiveTransform(src, dst)
    warped = cv2.warpPerspective(textured, H_true, (w, h), flags=cv2.INTER_LINEAR)
    warped = np.clip(warped, 0, 1).astype(np.float32)
    rep = geomcheck.estimate(textured, warped, seed=0)
    assert rep.matched
    true_error = float(np.mean(np.linalg.norm(dst - src, axis=1)))
    assert abs(rep.homography_error - true_error) < 1.0


def test_blank_pair_unmatchable():
    blank = np.full((64, 64, 3), 0.5, np.float32)
    rep = geomcheck.estimate(blank, blank, seed=0)
    assert not rep.matched
    assert rep.num_matches == 0


def test_too_small_rejected(textured):
    with pytest.raises(ValueError):
        geomcheck.estimate(textured[:16, :16], textured, seed=0)


def test_seed_determinism(textured):
    noisy = np.clip(textured + np.random.default_rng(0).normal(0, 0.05, textured.shape),
                    0, 1).astype(np.float32)
    a = geomcheck.estimate(textured, noisy, seed=5)
    b = geomcheck.estimate(textured, noisy, seed=5)
    assert a.num_matches == b.num_matches
    assert a.homography_error == b.homography_error


def test_compare_enhancement_degraded_side(textured):
    from mariner.config import DegradeConfig

    degraded = datagen.degrade(textured, DegradeConfig(hole_fraction=0.3), seed=0)
    rep_render, rep_enhanced = geomcheck.compare_enhancement(
        degraded, textured, textured, seed=0
    )
    # enhanced == target: near-identity homography
    assert rep_enhanced.homography_error < 0.5
    target_self = geomcheck.estimate(textured, textured, seed=0)
    assert rep_render.num_matches < target_self.num_matches


def test_compare_enhancement_shape_check(textured):
    with pytest.raises(ValueError):
        geomcheck.compare_enhancement(textured, textured[:64, :64], textured)


def test_validate_pairs_csv(tmp_path, textured):
    from mariner.config import DegradeConfig

    render = datagen.degrade(textured, DegradeConfig(), seed=1)
    paths = {}
    for name, img in (("render", render), ("enhanced", textured), ("target", textured)):
        p = tmp_path / f"{name}.png"
        save_image(img, p)
        paths[name] = str(p)
    manifest = tmp_path / "pairs.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rendering", "enhanced", "target"])
        writer.writerow([paths["render"], paths["enhanced"], paths["target"]])
    summary = geomcheck.validate_pairs(manifest, tmp_path / "report.csv", seed=0)
    assert summary["pairs"] == 1
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    assert len(rows) == 2
    assert summary["enhanced_mean_matches"] > summary["render_mean_matches"]
