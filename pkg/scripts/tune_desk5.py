"""Amplitude sweep: encoder_scale x clamp bound x match threshold."""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

import diffmark as dm
from diffmark.checkpoint import load_checkpoint, save_checkpoint
from diffmark.training import TrainConfig, run_training

CACHE = Path("/tmp/tune4_ckpts")


def get_checkpoint(name, cfg, data):
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{name}.npz"
    if path.exists():
        return load_checkpoint(path)
    t0 = time.perf_counter()
    ck, _ = run_training(cfg, data=data)
    print(f"trained {name}: {time.perf_counter()-t0:.0f}s", flush=True)
    save_checkpoint(ck, path)
    return ck


def sweep(tag, ck_wm, ck_clean, thresholds=(0.10, 0.20, 0.30)):
    for bound in (1.0, 2.0, 3.0):
        ck_w = replace(ck_wm, clamp_x0=True, clamp_bound=bound)
        ck_c = replace(ck_clean, clamp_x0=True, clamp_bound=bound)
        gen_wm = dm.generate_watermarked(ck_w, 100, 123)
        gen_cl = dm.generate_watermarked(ck_c, 100, 321)

        rep = dm.diff_report(gen_wm, gen_cl)
        under = sum(1 for v in rep.diff_percent.values() if v < 5.0)
        psnr_rot = min(dm.quality_guard(gen_wm[:25],
                                        dm.AttackSpec("rotation", angle=3.0))[1])

        res_wm = dm.extract_watermark(gen_wm, ck_w)
        res_cl = dm.extract_watermark(gen_cl, ck_w)
        wm_marg = [r.confidence / min(r.scores.values()) for r in res_wm]
        cl_marg = [r.confidence / min(r.scores.values()) for r in res_cl]
        line = (f"[{tag} b={bound}] under5={under}/10 rot3min={psnr_rot:.1f} "
                f"wm_margin p10={np.percentile(wm_marg, 10):.2f} "
                f"cl_margin p90={np.percentile(cl_marg, 90):.2f}")
        for thr in thresholds:
            rec = np.mean([r.best_id == ck_wm.watermark_id
                           and r.confidence >= thr * min(r.scores.values())
                           for r in res_wm])
            flag = np.mean([r.confidence < thr * min(r.scores.values())
                            for r in res_cl])
            line += f" | thr{thr}: rec={rec*100:.0f}% flag={flag*100:.0f}%"
        print(line, flush=True)
        if under < 7:
            print("   diffs: " + "  ".join(f"{k}={v:.1f}"
                  for k, v in rep.diff_percent.items()), flush=True)


def main():
    torch.set_num_threads(2)
    data, _ = dm.make_toy_corpus(2000, 32, seed=7)
    base = dict(resolution=32, num_steps=200, batch_size=64, sample_steps=50)

    ck_clean = get_checkpoint("clean22", TrainConfig(
        watermark_id=None, gamma=0.0, lambda_w=0.0, epochs=22, seed=0, **base), data)

    for scale in (0.25, 0.15):
        ck = get_checkpoint(f"wm0_det22_s{scale}", TrainConfig(
            watermark_id=0, detach_pathway=True, codec_scale=scale,
            epochs=22, seed=0, **base), data)
        sweep(f"scale{scale}", ck, ck_clean)

    # existing scale-0.5 checkpoint for threshold calibration reference
    ck05 = CACHE / "wm0_detached22.npz"
    if ck05.exists():
        sweep("scale0.5", load_checkpoint(ck05), ck_clean)


if __name__ == "__main__":
    main()
