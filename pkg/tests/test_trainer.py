import csv

import numpy as np
import pytest

from mariner import datagen, trainer
from mariner.config import (
    DecoderConfig,
    DegradeConfig,
    EncoderConfig,
    EnhancerConfig,
    LossWeights,
    MatcherConfig,
    TrainConfig,
)
from mariner.enhancer import load_checkpoint


def tiny_enhancer_cfg():
    return EnhancerConfig(
        encoder=EncoderConfig([8, 8, 8], 1),
        matcher=MatcherConfig(coarse_stride=2, refine_radius=1),
        decoder=DecoderConfig((1, 1, 1)),
        iterations=2,
    )


def tiny_train_cfg(**kw):
    defaults = dict(
        phase1_epochs=1, phase2_epochs=0, batch_size=2, learning_rate=1e-4,
        weights=LossWeights(1.0, 0.0, 0.0), iterations_supervised=2,
        seed=0, checkpoint_every=1000,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("traindata")
    frames = root / "frames"
    datagen.generate_frames(frames, 8, size=32, seed=1)
    return datagen.build_dataset(
        frames, root / "ds", DegradeConfig(flatten_segments=100),
        mode="train", ref_window=3, seed=1,
    )


def _read_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_writes_checkpoint_and_log(manifest, tmp_path):
    ckpt_path, log_path = trainer.train(
        manifest, tiny_train_cfg(), tiny_enhancer_cfg(), tmp_path / "run"
    )
    assert ckpt_path.exists()
    rows = _read_log(log_path)
    assert rows
    assert list(rows[0].keys()) == trainer.LOG_HEADER
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt.phase == 1
    assert not any(k.startswith("disc.") for k in ckpt.weights)


def test_seeded_runs_identical_logs(manifest, tmp_path):
    cfg = tiny_train_cfg(phase1_epochs=2)
    _, log_a = trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "a")
    _, log_b = trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "b")
    rows_a = _read_log(log_a)
    rows_b = _read_log(log_b)
    assert len(rows_a) == len(rows_b)
    for ra, rb in zip(rows_a, rows_b):
        assert abs(float(ra["loss_total"]) - float(rb["loss_total"])) <= 1e-6


def test_resume_continues_step_counter(manifest, tmp_path):
    cfg = tiny_train_cfg(phase1_epochs=1)
    ckpt_path, log1 = trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "r1")
    last_step = int(_read_log(log1)[-1]["step"])
    ckpt2, log2 = trainer.train(
        manifest, cfg, tiny_enhancer_cfg(), tmp_path / "r2", resume_from=ckpt_path
    )
    rows2 = _read_log(log2)
    assert int(rows2[0]["step"]) == last_step + 1
    assert load_checkpoint(ckpt2).training_step == 2 * last_step


def test_phase2_has_discriminator_and_finite_losses(manifest, tmp_path):
    cfg = tiny_train_cfg(
        phase1_epochs=1, phase2_epochs=1,
        weights=LossWeights(1.0, 0.0, 0.001),
    )
    ckpt_path, log_path = trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "p2")
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt.phase == 2
    assert any(k.startswith("disc.") for k in ckpt.weights)
    for row in _read_log(log_path):
        assert np.isfinite(float(row["loss_total"]))
        assert np.isfinite(float(row["loss_disc"]))


def test_random_perceptual_phase1(manifest, tmp_path):
    cfg = tiny_train_cfg(
        weights=LossWeights(1.0, 0.1, 0.0), random_perceptual=True,
    )
    _, log_path = trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "pp")
    rows = _read_log(log_path)
    assert any(float(r["loss_per"]) > 0 for r in rows)


def test_missing_perceptual_source_is_config_error(manifest, tmp_path):
    from mariner.config import ConfigError

    cfg = tiny_train_cfg(weights=LossWeights(1.0, 0.1, 0.0))
    with pytest.raises(ConfigError):
        trainer.train(manifest, cfg, tiny_enhancer_cfg(), tmp_path / "err")


def test_empty_manifest_fails_before_training(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text("rendering,reference,gt,ref_level\n")
    with pytest.raises(ValueError):
        trainer.train(bad, tiny_train_cfg(), tiny_enhancer_cfg(), tmp_path / "x")


def test_ablate_report(manifest, tmp_path):
    grid = [
        {"name": "rec_only", "train": {
            "phase1_epochs": 1, "phase2_epochs": 0, "batch_size": 2,
            "weights": {"lambda_rec": 1.0, "lambda_per": 0.0, "lambda_adv": 0.0}},
         "enhancer": {"encoder": {"channels_per_level": [8, 8, 8],
                                  "residual_blocks_per_level": 1},
                      "decoder": {"residual_blocks": [1, 1, 1]}}},
        {"name": "no_sam", "train": {
            "phase1_epochs": 1, "phase2_epochs": 0, "batch_size": 2,
            "weights": {"lambda_rec": 1.0, "lambda_per": 0.0, "lambda_adv": 0.0}},
         "enhancer": {"encoder": {"channels_per_level": [8, 8, 8],
                                  "residual_blocks_per_level": 1},
                      "decoder": {"residual_blocks": [1, 1, 1], "use_sam": False}}},
        {"name": "broken", "train": {"batch_size": -1}},
    ]
    report = trainer.ablate(manifest, grid, tmp_path / "abl")
    rows = list(csv.DictReader(open(report)))
    assert len(rows) == 3
    by_name = {r["name"]: r for r in rows}
    assert by_name["rec_only"]["error"] == ""
    assert by_name["no_sam"]["error"] == ""
    assert by_name["broken"]["error"] != ""
    assert float(by_name["rec_only"]["psnr"]) > 0
