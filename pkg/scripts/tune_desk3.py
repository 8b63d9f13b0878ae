"""Final recipe validation: clamped sampling, 22/14-epoch desk models."""

import time

import numpy as np
import torch

import diffmark as dm
from diffmark.detectors import DetectorConfig, evaluate, train_detector
from diffmark.training import TrainConfig, run_training


def stats_block(name, ck_wm, ck_clean, gen_wm, gen_clean):
    rep = dm.diff_report(gen_wm, gen_clean)
    under = sum(1 for v in rep.diff_percent.values() if v < 5.0)
    print(f"[{name}] stats under 5%: {under}/10", flush=True)
    print("  " + "  ".join(f"{k}={v:.1f}%" for k, v in rep.diff_percent.items()), flush=True)

    res_wm = dm.extract_watermark(gen_wm, ck_wm)
    res_cl = dm.extract_watermark(gen_clean, ck_wm)
    rec = np.mean([r.best_id == ck_wm.watermark_id and not r.no_watermark for r in res_wm])
    flag = np.mean([r.no_watermark for r in res_cl])
    print(f"[{name}] recovery {rec*100:.0f}%  clean flagged {flag*100:.0f}%", flush=True)

    for kind, spec in dm.default_attacks().items():
        ok, vals = dm.quality_guard(np.concatenate([gen_wm[:25], gen_clean[:25]]), spec)
        print(f"[{name}] PSNR {kind}: min={min(vals):.1f} mean={np.mean(vals):.1f} ok={ok}", flush=True)

    images = np.concatenate([gen_wm, gen_clean])
    labels = np.concatenate([np.ones(len(gen_wm), dtype=np.int64),
                             np.zeros(len(gen_clean), dtype=np.int64)])
    head = train_detector("presence", (images, labels), DetectorConfig(epochs=30, seed=0))
    print(f"[{name}] presence holdout {head.holdout_report.overall_accuracy*100:.1f}%", flush=True)
    from diffmark.detectors import _stratified_split
    _, tidx = _stratified_split(labels, 0.2, 0)
    hold = (images[tidx], labels[tidx])
    base = evaluate(head, hold).overall_accuracy
    for kind, spec in dm.default_attacks().items():
        acc = evaluate(head, hold, attack=spec).overall_accuracy
        print(f"[{name}]   under {kind}: {acc*100:.1f}% (drop {100*(base-acc):.1f})", flush=True)


def main():
    torch.set_num_threads(2)
    data, _ = dm.make_toy_corpus(2000, 32, seed=7)
    base = dict(resolution=32, num_steps=200, batch_size=64, sample_steps=50)

    t0 = time.perf_counter()
    ck_clean, _ = run_training(TrainConfig(watermark_id=None, gamma=0.0, lambda_w=0.0,
                                           epochs=22, seed=0, **base), data=data)
    t_clean = time.perf_counter() - t0
    print(f"clean 22ep: {t_clean:.0f}s", flush=True)

    sub = torch.from_numpy(data[:16])
    t0 = time.perf_counter()
    inv = dm.ddim_invert(sub, ck_clean.denoiser, ck_clean.schedule, 50)
    back = dm.ddim_sample(inv, ck_clean.denoiser, ck_clean.schedule, 50)
    rt = time.perf_counter() - t0
    mae = float(torch.mean(torch.abs(back - sub)))
    print(f"C5: roundtrip MAE={mae:.4f} total={t_clean + rt:.0f}s (<900)", flush=True)

    gen_clean = dm.generate_watermarked(ck_clean, 100, 321)
    print(f"clean sat frac: {float(np.mean(np.abs(gen_clean) >= 0.999)):.4f}", flush=True)

    for name, detach in (("coupled", False), ("detached", True)):
        t0 = time.perf_counter()
        ck, log = run_training(TrainConfig(watermark_id=0, detach_pathway=detach,
                                           epochs=22, seed=0, **base), data=data)
        print(f"{name} 22ep: {time.perf_counter()-t0:.0f}s "
              f"L_w={log.records[-1]['loss_w']:.4f}", flush=True)
        gen = dm.generate_watermarked(ck, 100, 123)
        print(f"{name} wm sat: {float(np.mean(np.abs(gen) >= 0.999)):.4f}", flush=True)
        stats_block(name, ck, ck_clean, gen, gen_clean)

    t0 = time.perf_counter()
    ck_ddpm, _ = run_training(TrainConfig(watermark_id=2, model_kind="ddpm",
                                          epochs=14, seed=2, **base), data=data)
    print(f"ddpm 14ep: {time.perf_counter()-t0:.0f}s", flush=True)
    gen = dm.generate_watermarked(ck_ddpm, 100, 55)
    print(f"ddpm sat: {float(np.mean(np.abs(gen) >= 0.999)):.4f}", flush=True)
    res = dm.extract_watermark(gen, ck_ddpm)
    rec = np.mean([r.best_id == 2 and not r.no_watermark for r in res])
    flag = np.mean([r.no_watermark for r in dm.extract_watermark(gen_clean, ck_ddpm)])
    print(f"ddpm recovery {rec*100:.0f}%  clean flagged vs ddpm {flag*100:.0f}%", flush=True)


if __name__ == "__main__":
    main()
