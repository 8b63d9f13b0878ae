"""Desk-scale measurement harness (development aid, not part of the test suite).

Trains small checkpoints and reports the numbers the acceptance criteria
gate on: inversion round-trip error, recovery/clean-flag rates, detector
accuracies under attacks, statistic differences, PSNR guard values, and
wall-clock costs.
"""

import argparse
import time

import numpy as np
import torch

import diffmark as dm
from diffmark.training import TrainConfig, run_training


def timeit(label, fn, *a, **k):
    t0 = time.perf_counter()
    out = fn(*a, **k)
    print(f"[{time.perf_counter() - t0:8.1f}s] {label}")
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--images", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--gen", type=int, default=50)
    ap.add_argument("--kinds", default="ddim")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    torch.set_num_threads(2)
    data, labels = dm.make_toy_corpus(args.images, 32, seed=7)
    print(f"corpus: {data.shape}")

    base = dict(resolution=32, num_steps=200, batch_size=args.batch,
                epochs=args.epochs, sample_steps=50)

    # one watermarked + one clean run, same seed
    cfg_wm = TrainConfig(watermark_id=0, seed=0, **base)
    cfg_clean = TrainConfig(watermark_id=None, gamma=0.0, lambda_w=0.0, seed=0, **base)

    t0 = time.perf_counter()
    ck_wm, log_wm = run_training(cfg_wm, data=data)
    t_wm = time.perf_counter() - t0
    print(f"wm train: {t_wm:.1f}s  ({t_wm/ (args.epochs * (args.images // args.batch + 1)):.2f}s/step)")
    print("wm losses:", [(round(r['loss_d'],4), round(r['loss_w'],4)) for r in log_wm.records])

    ck_clean, log_clean = timeit("clean train", run_training, cfg_clean, data=data)
    print("clean losses:", [round(r['loss_d'],4) for r in log_clean.records])

    # inversion round trip on training-like images
    sub = torch.from_numpy(data[:16])
    t0 = time.perf_counter()
    inv = dm.ddim_invert(sub, ck_wm.denoiser, ck_wm.schedule, 50)
    back = dm.ddim_sample(inv, ck_wm.denoiser, ck_wm.schedule, 50)
    print(f"[{time.perf_counter()-t0:8.1f}s] invert+sample 16 images")
    mae = float(torch.mean(torch.abs(back - sub)))
    print(f"round-trip MAE (data images): {mae:.4f}")

    # generation + extraction
    gen_wm = timeit(f"generate {args.gen} wm", dm.generate_watermarked, ck_wm, args.gen, 123)
    gen_clean = timeit(f"generate {args.gen} clean", dm.generate_watermarked, ck_clean, args.gen, 321)
    print("wm gen range:", gen_wm.min(), gen_wm.max(),
          "pre-clamp sat frac:", float(np.mean(np.abs(gen_wm) >= 0.999)))

    res_wm = timeit("extract wm", dm.extract_watermark, gen_wm, ck_wm)
    res_clean = timeit("extract clean (with wm ckpt)", dm.extract_watermark, gen_clean, ck_wm)
    rec = np.mean([r.best_id == 0 and not r.no_watermark for r in res_wm])
    flag = np.mean([r.no_watermark for r in res_clean])
    print(f"recovery rate: {rec*100:.0f}%   clean no-watermark rate: {flag*100:.0f}%")
    print("wm scores sample:", {k: round(v,3) for k,v in res_wm[0].scores.items()},
          "conf", round(res_wm[0].confidence,3))
    print("clean scores sample:", {k: round(v,3) for k,v in res_clean[0].scores.items()},
          "conf", round(res_clean[0].confidence,3))

    # round trip on generated images (the C5 measurement)
    sub = torch.from_numpy(gen_clean[:16])
    inv = dm.ddim_invert(sub, ck_clean.denoiser, ck_clean.schedule, 50)
    back = dm.ddim_sample(inv, ck_clean.denoiser, ck_clean.schedule, 50)
    print(f"round-trip MAE (generated): {float(torch.mean(torch.abs(back - sub))):.4f}")

    # imperceptibility
    rep = dm.diff_report(gen_wm, gen_clean)
    print(rep.as_table())

    # attacks PSNR guard
    for kind, spec in dm.default_attacks().items():
        ok, vals = dm.quality_guard(gen_wm[:20], spec)
        print(f"attack {kind}: guard_ok={ok} min_psnr={min(vals):.1f} mean={np.mean(vals):.1f}")

    if args.quick:
        return

    # ddpm-kind checkpoint
    cfg_ddpm = TrainConfig(watermark_id=2, model_kind="ddpm", seed=2, **base)
    ck_ddpm, _ = timeit("ddpm train", run_training, cfg_ddpm, data=data)
    gen_ddpm = timeit(f"generate {args.gen} ddpm", dm.generate_watermarked, ck_ddpm, args.gen, 55)
    res_ddpm = timeit("extract ddpm", dm.extract_watermark, gen_ddpm, ck_ddpm)
    rec = np.mean([r.best_id == 2 and not r.no_watermark for r in res_ddpm])
    print(f"ddpm recovery rate: {rec*100:.0f}%")
    print("ddpm scores sample:", {k: round(v,3) for k,v in res_ddpm[0].scores.items()})

    flag2 = np.mean([r.no_watermark for r in dm.extract_watermark(gen_clean, ck_ddpm)])
    print(f"clean no-watermark rate vs ddpm ckpt: {flag2*100:.0f}%")


if __name__ == "__main__":
    main()
