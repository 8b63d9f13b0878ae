"""Embed a watermark during training, then recover and identify it.

The full loop at toy scale: build the watermark bank, jointly train the
denoiser and codec, generate watermarked images, invert them back to
terminal noise, decode the watermark, and match it against the bank.
Also shows that a clean model's generations are flagged "no watermark".

Runs in three to four minutes on a laptop CPU.
"""

import numpy as np

import diffmark as dm
from diffmark.training import TrainConfig, run_training

data, _ = dm.make_toy_corpus(768, resolution=16, seed=1)

bank = dm.default_bank(16)
print("bank ids:", [w.watermark_id for w in bank])

base = dict(resolution=16, num_steps=100, epochs=14, batch_size=32,
            sample_steps=25, base_channels=16, channel_mults=(1, 2), seed=0)
wm_ckpt, log = run_training(TrainConfig(watermark_id=1, **base), data=data)
clean_ckpt, _ = run_training(
    TrainConfig(watermark_id=None, gamma=0.0, lambda_w=0.0, **base), data=data)
print(f"final losses: L_D={log.records[-1]['loss_d']:.4f} "
      f"L_w={log.records[-1]['loss_w']:.4f}")

# --- generate and extract ------------------------------------------------------

wm_images = dm.generate_watermarked(wm_ckpt, 24, seed=5)
results = dm.extract_watermark(wm_images, wm_ckpt)
hits = sum(r.best_id == 1 and not r.no_watermark for r in results)
print(f"watermarked generations: {hits}/24 matched to id 1")
print("score profile of one extraction:",
      {k: round(v, 3) for k, v in results[0].scores.items()})

clean_images = dm.generate_watermarked(clean_ckpt, 24, seed=6)
clean_results = dm.extract_watermark(clean_images, wm_ckpt)
flagged = sum(r.no_watermark for r in clean_results)
print(f"clean generations flagged 'no watermark': {flagged}/24")

# --- nearest-MSE matching is also available standalone ----------------------------

wid, margin = dm.match_watermark(results[0].reconstructed, bank)
print(f"match_watermark: id {wid}, margin {margin:.3f}")

# --- imperceptibility of the embedded watermark -----------------------------------

report = dm.diff_report(wm_images, clean_images)
print(report.as_table())
