"""Command-line front end.

    wm train           train a diffusion+codec checkpoint (or a detector head)
    wm generate        sample images from a checkpoint
    wm extract         recover and match the watermark from images
    wm classify        run a detector head over images
    wm attack          apply an attack to a directory of images
    wm stats           statistics difference report between two image sets
    wm dataset-build   generate and index a watermarked/clean dataset
    wm dataset-verify  integrity-check a dataset against its manifest

Exit status: 0 on success, 2 for usage/config errors, 1 for runtime
failures. Flag values override config-file keys. Heavy outputs go to
files; stdout carries summaries (or JSON with --json).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

USAGE_EXIT = 2
FAILURE_EXIT = 1


def _resolve_config(path_str: str) -> Path:
    path = Path(path_str)
    if path.exists():
        return path
    env_dir = os.environ.get("DIFFMARK_CONFIG_DIR")
    if env_dir and not path.is_absolute():
        candidate = Path(env_dir) / path
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"config file not found: {path_str}")


def _load_dir_images(dir_path: str) -> np.ndarray:
    from .dataset import load_images

    files = sorted(p for p in Path(dir_path).iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG files under {dir_path}")
    return load_images(files)


def _gather_inputs(args) -> np.ndarray:
    if getattr(args, "image", None):
        from .dataset import load_images

        return load_images([args.image])
    return _load_dir_images(args.image_dir)


# --- subcommand implementations -------------------------------------------------

def _cmd_train(args) -> int:
    from .training import TrainConfig, run_training

    overrides = {}
    for key in ("dataset", "resolution", "model_kind", "watermark_id", "epochs",
                "batch_size", "learning_rate", "lambda_d", "lambda_w", "seed",
                "gamma", "num_steps", "sample_steps", "bank_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.clean:
        overrides["watermark_id"] = None

    if args.detector:
        return _train_detector(args)

    if args.config:
        cfg = TrainConfig.from_json_file(_resolve_config(args.config))
        cfg = cfg.with_overrides(**overrides)
    else:
        cfg = TrainConfig(**overrides)

    ckpt, log = run_training(cfg)
    from .checkpoint import save_checkpoint

    out = args.out or "checkpoint.npz"
    save_checkpoint(ckpt, out)
    if args.log:
        log.write(args.log)
    last = log.records[-1] if log.records else None
    print(f"trained {cfg.epochs} epochs -> {out}")
    if last:
        print(f"final losses: L_D={last['loss_d']:.5f} L_w={last['loss_w']:.5f} "
              f"L_total={last['loss_total']:.5f}")
    return 0


def _train_detector(args) -> int:
    from .dataset import GwiManifest, load_images_from_manifest
    from .detectors import DetectorConfig, save_head, train_detector

    if not args.dataset:
        raise FileNotFoundError("detector training needs --dataset pointing to a "
                                "built dataset directory")
    manifest = GwiManifest.load(args.dataset)
    images = load_images_from_manifest(manifest)
    if args.detector == "presence":
        labels = np.array([0 if e["label"] == "clean" else 1 for e in manifest.entries])
        data = (images, labels)
    else:
        wm_idx = [i for i, e in enumerate(manifest.entries) if e["label"] != "clean"]
        labels = np.array([manifest.entries[i]["watermark_id"] for i in wm_idx])
        data = (images[wm_idx], labels)
    cfg = DetectorConfig(seed=args.seed or 0)
    if args.epochs:
        cfg.epochs = args.epochs
    head = train_detector(args.detector, data, cfg)
    out = args.out or f"{args.detector}_head.npz"
    save_head(head, out)
    print(f"trained {args.detector} detector -> {out}")
    print(head.holdout_report.as_table())
    return 0


def _cmd_generate(args) -> int:
    from .checkpoint import load_checkpoint
    from .pipeline import generate_watermarked, save_generated

    ckpt = load_checkpoint(args.checkpoint)
    images = generate_watermarked(ckpt, args.n, seed=args.seed)
    paths = save_generated(images, args.out_dir, ckpt, args.seed)
    print(f"wrote {len(paths)} images to {args.out_dir}")
    return 0


def _cmd_extract(args) -> int:
    from .checkpoint import load_checkpoint
    from .pipeline import extract_watermark

    ckpt = load_checkpoint(args.checkpoint)
    images = _gather_inputs(args)
    results = extract_watermark(images, ckpt, threshold=args.threshold)
    records = [r.to_record() for r in results]
    if args.json:
        print(json.dumps(records))
    else:
        for i, r in enumerate(results):
            verdict = "no watermark" if r.no_watermark else f"watermark {r.best_id}"
            print(f"image {i}: {verdict} (confidence {r.confidence:.4f}, "
                  f"best MSE {min(r.scores.values()):.4f})")
    return 0


def _cmd_classify(args) -> int:
    from .detectors import classify, load_head

    head = load_head(args.head)
    images = _gather_inputs(args)
    probs = classify(head, images)
    preds = np.argmax(probs, axis=1)
    if args.json:
        print(json.dumps({"kind": head.kind,
                          "predictions": preds.tolist(),
                          "probabilities": probs.tolist()}))
    else:
        for i, (p, pr) in enumerate(zip(preds, probs)):
            print(f"image {i}: label {int(p)} (p={pr[p]:.3f})")
    return 0


def _cmd_attack(args) -> int:
    from .attacks import AttackSpec, apply_attack, psnr
    from .dataset import load_images, save_image

    spec_kwargs = {"kind": args.kind, "seed": args.seed}
    for key in ("angle", "fill_mode", "radius", "sigma", "strength", "quality"):
        value = getattr(args, key, None)
        if value is not None:
            spec_kwargs[key] = value
    spec = AttackSpec(**spec_kwargs)

    in_dir = Path(args.in_dir)
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG files under {in_dir}")
    images = load_images(files)
    attacked = apply_attack(images, spec)
    out_dir = Path(args.out_dir)
    sidecar = []
    for i, f in enumerate(files):
        save_image(attacked[i], out_dir / f.name)
        sidecar.append({"file": f.name, "spec": spec.__dict__,
                        "psnr_db": psnr(images[i], attacked[i])})
    (out_dir / "attack_provenance.json").write_text(json.dumps(sidecar, indent=2))
    mean_psnr = float(np.mean([s["psnr_db"] for s in sidecar]))
    if args.json:
        print(json.dumps({"kind": spec.kind, "count": len(files),
                          "mean_psnr_db": mean_psnr}))
    else:
        print(f"attacked {len(files)} images with {spec.kind} "
              f"(mean PSNR {mean_psnr:.2f} dB) -> {out_dir}")
    return 0


def _cmd_stats(args) -> int:
    from .imstats import STAT_KINDS, diff_report

    kinds = tuple(args.kinds.split(",")) if args.kinds else STAT_KINDS
    wm = _load_dir_images(args.wm_dir)
    clean = _load_dir_images(args.clean_dir)
    report = diff_report(wm, clean, kinds)
    if args.json:
        print(report.to_json())
    elif args.tsv:
        print(report.as_delimited())
    else:
        print(report.as_table())
    return 0


def _cmd_dataset_build(args) -> int:
    from .dataset import build_dataset

    manifest = build_dataset(args.checkpoint, args.count, args.out_dir,
                             base_seed=args.seed, digests=not args.no_digests)
    total = len(manifest.entries)
    print(f"built dataset: {total} images -> {args.out_dir}")
    return 0


def _cmd_dataset_verify(args) -> int:
    from .dataset import verify_manifest

    report = verify_manifest(args.manifest, strict=args.strict)
    if args.json:
        print(json.dumps({"ok": report.ok, "checked": report.checked,
                          "violations": report.violations}))
    else:
        print(report.as_text())
    return 0 if report.ok else FAILURE_EXIT


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a checkpoint or a detector head")
    p.add_argument("--config", help="JSON config file (TrainConfig keys)")
    p.add_argument("--dataset", help="training images: directory of PNGs or .npz")
    p.add_argument("--out", help="output container path")
    p.add_argument("--log", help="append per-epoch loss log here")
    p.add_argument("--detector", choices=["presence", "type"],
                   help="train a detector head from a built dataset instead")
    p.add_argument("--clean", action="store_true", help="train without a watermark")
    p.add_argument("--resolution", type=int)
    p.add_argument("--model-kind", dest="model_kind", choices=["ddim", "ddpm"])
    p.add_argument("--watermark-id", dest="watermark_id", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-w", dest="lambda_w", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--num-steps", dest="num_steps", type=int)
    p.add_argument("--sample-steps", dest="sample_steps", type=int)
    p.add_argument("--bank-dir", dest="bank_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("extract", help="extract and match watermarks")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image")
    group.add_argument("--image-dir")
    p.add_argument("--threshold", type=float, default=0.10,
                   help="no-watermark margin threshold (fraction of best score)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("classify", help="run a detector head")
    p.add_argument("--head", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image")
    group.add_argument("--image-dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("attack", help="attack a directory of images")
    p.add_argument("--kind", required=True,
                   choices=["rotation", "blur", "texture_reduction", "jpeg_compression"])
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--angle", type=float)
    p.add_argument("--fill-mode", dest="fill_mode", choices=["replicate", "reflect", "zero"])
    p.add_argument("--radius", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--strength", type=float)
    p.add_argument("--quality", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("stats", help="statistics difference report")
    p.add_argument("--wm-dir", required=True)
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--kinds", help="comma-separated subset of statistic kinds")
    p.add_argument("--json", action="store_true")
    p.add_argument("--tsv", action="store_true", help="tab-delimited output")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("dataset-build", help="generate and index a dataset")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat per checkpoint (watermarked and clean)")
    p.add_argument("--count", type=int, required=True, help="images per label")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-digests", action="store_true")
    p.set_defaults(func=_cmd_dataset_build)

    p = sub.add_parser("dataset-verify", help="integrity-check a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_dataset_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as exc:  # runtime failure -> exit 1 with diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FAILURE_EXIT


if __name__ == "__main__":
    sys.exit(main())
