"""Second measurement pass: 30-epoch desk models, coupled vs detached pathway."""

import time

import numpy as np
import torch

import diffmark as dm
from diffmark.detectors import DetectorConfig, evaluate, train_detector
from diffmark.training import TrainConfig, run_training


def evaluate_variant(name, ck_wm, ck_clean, data):
    print(f"===== {name} =====")
    sub = torch.from_numpy(data[:16])
    for refine in (0, 1):
        t0 = time.perf_counter()
        inv = dm.ddim_invert(sub, ck_wm.denoiser, ck_wm.schedule, 50, refine=refine)
        back = dm.ddim_sample(inv, ck_wm.denoiser, ck_wm.schedule, 50)
        mae = float(torch.mean(torch.abs(back - sub)))
        print(f"roundtrip refine={refine}: MAE={mae:.4f} ({time.perf_counter()-t0:.0f}s)")

    gen_wm = dm.generate_watermarked(ck_wm, 100, 123)
    gen_clean = dm.generate_watermarked(ck_clean, 100, 321)
    sat = float(np.mean(np.abs(gen_wm) >= 0.999))
    print(f"wm saturation frac: {sat:.4f}  clean: {float(np.mean(np.abs(gen_clean) >= 0.999)):.4f}")

    res_wm = dm.extract_watermark(gen_wm, ck_wm)
    res_clean = dm.extract_watermark(gen_clean, ck_wm)
    rec = np.mean([r.best_id == ck_wm.watermark_id and not r.no_watermark for r in res_wm])
    flag = np.mean([r.no_watermark for r in res_clean])
    print(f"recovery: {rec*100:.0f}%  clean flagged: {flag*100:.0f}%")

    rep = dm.diff_report(gen_wm, gen_clean)
    under5 = sum(1 for v in rep.diff_percent.values() if v < 5.0)
    print(f"stats under 5%: {under5}/10")
    print("  " + "  ".join(f"{k}={v:.1f}%" for k, v in rep.diff_percent.items()))

    # presence detector on these generations
    images = np.concatenate([gen_wm, gen_clean])
    labels = np.concatenate([np.ones(100, dtype=np.int64), np.zeros(100, dtype=np.int64)])
    head = train_detector("presence", (images, labels), DetectorConfig(epochs=25, seed=0))
    print(f"presence holdout acc: {head.holdout_report.overall_accuracy*100:.1f}%")
    test_imgs = images
    test_labels = labels
    base = evaluate(head, (test_imgs, test_labels)).overall_accuracy
    for kind, spec in dm.default_attacks().items():
        acc = evaluate(head, (test_imgs, test_labels), attack=spec).overall_accuracy
        print(f"  presence under {kind}: {acc*100:.1f}% (drop {100*(base-acc):.1f} pts)")

    for kind, spec in dm.default_attacks().items():
        ok, vals = dm.quality_guard(gen_wm[:30], spec)
        print(f"  PSNR {kind}: min={min(vals):.1f} mean={np.mean(vals):.1f} ok={ok}")
    return gen_wm, gen_clean


def main():
    torch.set_num_threads(2)
    data, _ = dm.make_toy_corpus(2000, 32, seed=7)
    base = dict(resolution=32, num_steps=200, batch_size=64, epochs=30, sample_steps=50)

    t0 = time.perf_counter()
    ck_clean, log_c = run_training(
        TrainConfig(watermark_id=None, gamma=0.0, lambda_w=0.0, seed=0, **base), data=data)
    print(f"clean train {time.perf_counter()-t0:.0f}s; L_D: "
          f"{[round(r['loss_d'],4) for r in log_c.records[::6]]} -> {log_c.records[-1]['loss_d']:.4f}")

    t0 = time.perf_counter()
    ck_cpl, log_w = run_training(TrainConfig(watermark_id=0, seed=0, **base), data=data)
    print(f"coupled train {time.perf_counter()-t0:.0f}s; L_D last {log_w.records[-1]['loss_d']:.4f} "
          f"L_w last {log_w.records[-1]['loss_w']:.4f}")
    print("L_w trace:", [round(r['loss_w'],4) for r in log_w.records[::4]])
    evaluate_variant("coupled", ck_cpl, ck_clean, data)

    t0 = time.perf_counter()
    ck_det, log_d = run_training(
        TrainConfig(watermark_id=0, seed=0, detach_pathway=True, **base), data=data)
    print(f"detached train {time.perf_counter()-t0:.0f}s; L_w last {log_d.records[-1]['loss_w']:.4f}")
    # detached + same seed must equal the clean denoiser exactly
    same = all(torch.equal(a, b) for a, b in
               zip(ck_det.denoiser.parameters(), ck_clean.denoiser.parameters()))
    print("detached denoiser identical to clean:", same)
    evaluate_variant("detached", ck_det, ck_clean, data)


if __name__ == "__main__":
    main()
