"""Two-phase training: reconstruction+perceptual, then adversarial
fine-tuning, with per-iteration supervision and seeded determinism."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .config import (
    ConfigError,
    EnhancerConfig,
    TrainConfig,
)
from .datagen import read_manifest
from .enhancer import (
    Checkpoint,
    Enhancer,
    checkpoint_from_model,
    load_checkpoint,
    save_checkpoint,
)
from .imaging import load_image
from .losses import Discriminator, PerceptualExtractor, adv_losses, total_loss

LOG_HEADER = ["step", "loss_total", "loss_rec", "loss_per", "loss_adv", "loss_disc"]


def _load_triplets(manifest_path):
    rows = read_manifest(manifest_path)
    if not rows:
        raise ValueError(f"empty dataset manifest {manifest_path}")
    triplets = []
    for r in rows:
        triplets.append((
            load_image(r["rendering"]),
            load_image(r["reference"]),
            load_image(r["gt"]),
        ))
    return triplets


def _to_batch(imgs) -> torch.Tensor:
    arr = np.stack([np.ascontiguousarray(i) for i in imgs])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).float()


def _perceptual(cfg: TrainConfig) -> PerceptualExtractor | None:
    if cfg.weights.lambda_per <= 0:
        return None
    if cfg.perceptual_weights:
        return PerceptualExtractor(weights_path=cfg.perceptual_weights)
    if cfg.random_perceptual:
        return PerceptualExtractor(random_init=True, seed=cfg.seed)
    raise ConfigError(
        "lambda_per > 0 needs --perceptual-weights or --random-perceptual"
    )


def _optim_to_weights(optimizer, params) -> dict:
    out = {}
    for i, p in enumerate(params):
        state = optimizer.state.get(p)
        if not state:
            continue
        out[f"{i}.step"] = torch.tensor(
            [int(state["step"])], dtype=torch.int64
        )
        out[f"{i}.exp_avg"] = state["exp_avg"]
        out[f"{i}.exp_avg_sq"] = state["exp_avg_sq"]
    return out


def _optim_from_weights(optimizer, params, weights: dict):
    for i, p in enumerate(params):
        key = f"optim.{i}.exp_avg"
        if key not in weights:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(weights[f"optim.{i}.step"].item())),
            "exp_avg": weights[key].clone(),
            "exp_avg_sq": weights[f"optim.{i}.exp_avg_sq"].clone(),
        }


def train(
    manifest_path,
    cfg: TrainConfig,
    enhancer_cfg: EnhancerConfig,
    out_dir,
    resume_from=None,
    max_steps: int | None = None,
) -> tuple[Path, Path]:
    """Train a model; returns (final checkpoint path, loss log path)."""
    cfg.validate()
    enhancer_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    triplets = _load_triplets(manifest_path)

    torch.manual_seed(cfg.seed)
    model = Enhancer(enhancer_cfg)
    disc = Discriminator()
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model = ckpt.build_model()
        start_step = ckpt.training_step
        if ckpt.phase >= 2:
            disc_state = {
                k[len("disc."):]: v for k, v in ckpt.weights.items() if k.startswith("disc.")
            }
            if disc_state:
                disc.load_state_dict(disc_state)
    model.train()
    ext = _perceptual(cfg)

    params = list(model.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(0.9, 0.999))
    disc_params = list(disc.parameters())
    disc_optimizer = torch.optim.Adam(disc_params, lr=cfg.learning_rate, betas=(0.9, 0.999))
    if resume_from is not None:
        _optim_from_weights(optimizer, params, ckpt.weights)

    rng = np.random.default_rng(cfg.seed)
    n = len(triplets)
    batches_per_epoch = max(1, n // cfg.batch_size)
    total_epochs = cfg.phase1_epochs + cfg.phase2_epochs
    log_path = out_dir / "loss_log.csv"
    ckpt_path = out_dir / "model.mrnr"
    step = start_step

    def _save(phase, path=None):
        c = checkpoint_from_model(
            model, training_step=step, rng_seed=cfg.seed, phase=phase,
            disc=disc if phase >= 2 else None,
            optim_state=_optim_to_weights(optimizer, params),
        )
        save_checkpoint(c, path or ckpt_path)

    with open(log_path, "w", newline="") as log_fh:
        log = csv.writer(log_fh)
        log.writerow(LOG_HEADER)
        for epoch in range(total_epochs):
            phase = 1 if epoch < cfg.phase1_epochs else 2
            order = rng.permutation(n)
            for b in range(batches_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                if len(idx) == 0:
                    continue
                render = _to_batch([triplets[i][0] for i in idx])
                ref = _to_batch([triplets[i][1] for i in idx])
                gt = _to_batch([triplets[i][2] for i in idx])
                weights = cfg.weights
                use_adv = phase == 2 and weights.lambda_adv > 0

                outputs = model(render, ref, iterations=cfg.iterations_supervised)

                if use_adv:
                    # discriminator step on the last iteration's output
                    disc_optimizer.zero_grad()
                    _, d_loss = adv_losses(gt, outputs[-1].detach(), disc)
                    d_loss.backward()
                    disc_optimizer.step()
                else:
                    d_loss = torch.zeros(())

                optimizer.zero_grad()
                totals = {"rec": 0.0, "per": 0.0, "adv": 0.0}
                loss = torch.zeros(())
                for out in outputs:
                    t, comps = total_loss(
                        gt, out, weights, ext=ext, disc=disc if use_adv else None
                    )
                    loss = loss + t
                    for k in totals:
                        totals[k] += float(comps[k].detach())
                loss.backward()
                optimizer.step()
                step += 1
                loss_val = float(loss.detach())
                log.writerow([
                    step,
                    f"{loss_val:.8f}", f"{totals['rec']:.8f}",
                    f"{totals['per']:.8f}", f"{totals['adv']:.8f}",
                    f"{float(d_loss.detach()):.8f}",
                ])
                if not np.isfinite(loss_val):
                    raise RuntimeError(f"non-finite training loss at step {step}")
                if step % cfg.checkpoint_every == 0:
                    _save(phase)
                if max_steps is not None and step >= max_steps:
                    _save(phase)
                    return ckpt_path, log_path
            if epoch + 1 == cfg.phase1_epochs:
                _save(1, out_dir / "model_phase1.mrnr")
        _save(2 if cfg.phase2_epochs > 0 else 1)
    return ckpt_path, log_path


def evaluate_manifest(manifest_path, ckpt: Checkpoint | Path, limit: int | None = None):
    """Mean PSNR/SSIM of enhanced-vs-gt and rendering-vs-gt over a manifest."""
    from .enhancer import enhance

    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    model = ckpt.build_model()
    rows = read_manifest(manifest_path)
    if limit:
        rows = rows[:limit]
    stats = {"psnr_enhanced": [], "psnr_render": [], "ssim_enhanced": [], "ssim_render": []}
    for r in rows:
        rendering = load_image(r["rendering"])
        reference = load_image(r["reference"])
        gt = load_image(r["gt"])
        out = enhance(rendering, reference, model)
        stats["psnr_enhanced"].append(metrics.psnr(gt, out))
        stats["psnr_render"].append(metrics.psnr(gt, rendering))
        stats["ssim_enhanced"].append(metrics.ssim(gt, out))
        stats["ssim_render"].append(metrics.ssim(gt, rendering))
    return {k: float(np.mean(v)) for k, v in stats.items()}


def ablate(manifest_path, configs: list[dict], out_dir, eval_manifest=None) -> Path:
    """Train every config on the same data and seed; emit a comparison table.

    Each entry of ``configs`` is {"name": str, "train": dict, "enhancer": dict}
    where the dicts override the defaults. One failure does not abort the rest.
    """
    from .config import enhancer_config_from_dict, train_config_from_dict

    if len(configs) < 2:
        raise ValueError("ablation needs at least 2 configs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "ablation.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "psnr", "ssim", "error"])
        for i, spec_cfg in enumerate(configs):
            name = spec_cfg.get("name", f"config_{i}")
            try:
                tcfg = train_config_from_dict(spec_cfg.get("train", {}))
                ecfg = enhancer_config_from_dict(spec_cfg.get("enhancer", {}))
                run_dir = out_dir / name
                ckpt_path, _ = train(manifest_path, tcfg, ecfg, run_dir)
                result = evaluate_manifest(eval_manifest or manifest_path, ckpt_path)
                writer.writerow([
                    name, f"{result['psnr_enhanced']:.4f}",
                    f"{result['ssim_enhanced']:.6f}", "",
                ])
            except Exception as exc:
                writer.writerow([name, "", "", str(exc)])
    return report_path


def write_config(cfg_dict: dict, path):
    Path(path).write_text(json.dumps(cfg_dict, indent=2) + "\n")
