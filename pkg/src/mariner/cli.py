"""Command-line entry point: datagen, train, ablate, enhance, evaluate,
validate. Exit codes: 0 success, 1 data/row errors, 2 usage/config errors.
Logs go to stderr; machine-readable artifacts are written to files only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import (
    ConfigError,
    apply_overrides,
    config_to_dict,
    degrade_config_from_dict,
    enhancer_config_from_dict,
    load_json,
    train_config_from_dict,
)


def _log(args, *msg):
    if getattr(args, "verbosity", 0) >= 0:
        print(*msg, file=sys.stderr)


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_config(args) -> dict:
    data = load_json(args.config) if getattr(args, "config", None) else {}
    return apply_overrides(data, getattr(args, "set", None) or [])


def _resolve_weights_path(explicit, filename):
    if explicit:
        return explicit
    cache = os.environ.get("MARINER_CACHE")
    if cache:
        candidate = Path(cache) / filename
        if candidate.exists():
            return str(candidate)
    return None


def cmd_datagen(args) -> int:
    from . import datagen

    data = _load_config(args)
    cfg = degrade_config_from_dict(data.get("degrade", data))
    out = Path(args.out)
    if args.dry_run:
        print(json.dumps({
            "subcommand": "datagen", "out": str(out), "mode": args.mode,
            "degrade": config_to_dict(cfg), "seed": _seed(args),
            "frames": args.frames or f"<synthesize {args.synth} frames>",
        }, indent=2))
        return 0
    frames_dir = args.frames
    if frames_dir is None:
        frames_dir = out / "frames"
        _log(args, f"synthesizing {args.synth} frames into {frames_dir}")
        datagen.generate_frames(frames_dir, args.synth, size=args.size, seed=_seed(args))
    manifest = datagen.build_dataset(
        frames_dir, out / "triplets", cfg, mode=args.mode,
        ref_window=args.ref_window, ref_level=args.ref_level,
        fps=args.fps, seed=_seed(args),
    )
    if args.augment_mesh_quality is not None:
        datagen.augment_mesh_quality(manifest, args.augment_mesh_quality, seed=_seed(args))
    if args.filter_homography is not None:
        filtered, report = datagen.filter_by_homography(
            manifest, threshold=args.filter_homography, seed=_seed(args)
        )
        (out / "filter_report.json").write_text(json.dumps(report, indent=2) + "\n")
        _log(args, f"homography filter kept {report['kept']}/{report['total']}")
    _log(args, f"manifest written to {manifest}")
    return 0


def _train_configs(args):
    data = _load_config(args)
    tcfg = train_config_from_dict(data.get("train", {}))
    ecfg = enhancer_config_from_dict(data.get("enhancer", {}))
    if args.seed is not None:
        tcfg.seed = args.seed
    tcfg.perceptual_weights = _resolve_weights_path(
        tcfg.perceptual_weights, "perceptual.pt"
    )
    return tcfg, ecfg


def cmd_train(args) -> int:
    from . import trainer

    tcfg, ecfg = _train_configs(args)
    if args.dry_run:
        print(json.dumps({
            "subcommand": "train", "data": args.data, "out": args.out,
            "train": config_to_dict(tcfg), "enhancer": config_to_dict(ecfg),
        }, indent=2))
        return 0
    ckpt, log = trainer.train(args.data, tcfg, ecfg, args.out, resume_from=args.resume)
    _log(args, f"checkpoint: {ckpt}\nloss log: {log}")
    return 0


def cmd_ablate(args) -> int:
    from . import trainer

    grid = load_json(args.grid)
    if not isinstance(grid, list):
        raise ConfigError("ablation grid file must contain a JSON list")
    if args.dry_run:
        print(json.dumps({"subcommand": "ablate", "configs": [g.get("name") for g in grid]},
                         indent=2))
        return 0
    report = trainer.ablate(args.data, grid, args.out, eval_manifest=args.eval_data)
    _log(args, f"ablation report: {report}")
    return 0


def cmd_enhance(args) -> int:
    from .enhancer import enhance_intermediate, load_checkpoint
    from .imaging import load_image, save_image

    out = Path(args.out)
    if args.dry_run:
        print(json.dumps({
            "subcommand": "enhance", "render": args.render,
            "reference": args.reference, "ckpt": args.ckpt, "out": str(out),
        }, indent=2))
        return 0
    ckpt = load_checkpoint(args.ckpt)
    rendering = load_image(args.render)
    reference = load_image(args.reference)
    outs = enhance_intermediate(rendering, reference, ckpt)
    out.mkdir(parents=True, exist_ok=True)
    save_image(outs[-1], out / "enhanced.png")
    if args.dump_iterations:
        for i, img in enumerate(outs, start=1):
            save_image(img, out / f"iteration_{i:02d}.png")
    if args.match_debug:
        import torch

        from . import matcher as matcher_mod

        model = ckpt.build_model()
        with torch.no_grad():
            import numpy as np

            rt = torch.from_numpy(np.ascontiguousarray(rendering)).permute(2, 0, 1)[None].float()
            ft = torch.from_numpy(np.ascontiguousarray(reference)).permute(2, 0, 1)[None].float()
            _, _, fi3 = model.encoder(rt)
            _, _, fr3 = model.encoder(ft)
            mm = matcher_mod.match(fi3[0], fr3[0], model.cfg.matcher)
            debug = matcher_mod.match_debug_image(mm, fr3.shape[2], fr3.shape[3])
        save_image(debug, out / "match_debug.png")
    _log(args, f"wrote {out / 'enhanced.png'}")
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import LpipsScorer, evaluate_set

    if args.dry_run:
        print(json.dumps({"subcommand": "evaluate", "pairs": args.pairs, "out": args.out},
                         indent=2))
        return 0
    weights = _resolve_weights_path(args.lpips_weights, "lpips.pt")
    scorer = LpipsScorer(weights) if weights else None
    if scorer is None:
        _log(args, "lpips weights unavailable; reporting psnr/ssim/erqa only")
    _, errors = evaluate_set(args.pairs, args.out, scorer)
    return 1 if errors else 0


def cmd_validate(args) -> int:
    from .geomcheck import validate_pairs

    out = Path(args.out)
    if args.dry_run:
        print(json.dumps({"subcommand": "validate", "pairs": args.pairs, "out": str(out)},
                         indent=2))
        return 0
    out.mkdir(parents=True, exist_ok=True)
    summary = validate_pairs(args.pairs, out / "homography_report.csv", seed=_seed(args))
    (out / "homography_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _log(args, json.dumps(summary))
    return 0


def _add_common(p, need_out=True):
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (default 0 where unset)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted-key config override, e.g. --set train.batch_size=4")
    p.add_argument("--dry-run", action="store_true",
                   help="validate config and print the resolved plan; no writes")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (advisory)")
    p.add_argument("-v", "--verbose", dest="verbosity", action="count", default=0)
    if need_out:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mariner",
        description="Reference-guided enhancement of rendered images",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("datagen", help="build a synthetic triplet dataset")
    p.add_argument("--frames", help="directory of ordered frames (default: synthesize)")
    p.add_argument("--synth", type=int, default=200, help="frames to synthesize")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--config", help="JSON config with a 'degrade' section")
    p.add_argument("--mode", choices=["train", "eval"], default="train")
    p.add_argument("--ref-window", type=int, default=50)
    p.add_argument("--ref-level", type=int, default=1)
    p.add_argument("--fps", type=int, default=10)
    p.add_argument("--augment-mesh-quality", type=float, default=None, metavar="FRACTION")
    p.add_argument("--filter-homography", type=float, default=None, metavar="THRESHOLD_PX")
    _add_common(p)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model on a triplet manifest")
    p.add_argument("--config", help="JSON with 'train' and 'enhancer' sections")
    p.add_argument("--data", required=True, help="triplet manifest CSV")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train a grid of configs and compare")
    p.add_argument("--grid", required=True, help="JSON list of named configs")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", help="manifest for final evaluation")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("enhance", help="enhance one rendering with a reference")
    p.add_argument("--render", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dump-iterations", action="store_true")
    p.add_argument("--match-debug", action="store_true",
                   help="write a false-color match map PNG")
    _add_common(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score (gt, er) pairs from a manifest")
    p.add_argument("--pairs", required=True, help="CSV with header gt,er")
    p.add_argument("--lpips-weights", help="LPIPS scorer weights file")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="homography validation of enhancements")
    p.add_argument("--pairs", required=True,
                   help="CSV with header rendering,enhanced,target")
    _add_common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
