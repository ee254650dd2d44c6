"""
Training a tiny LCAN on synthetic images
========================================

A 24-channel, two-block network learns x2 upscaling of procedurally drawn
shapes. Takes around a minute per 200 iterations on one core.
"""
import sys

import numpy as np

from lckasr import image as im
from lckasr.data import make_pairs, synthetic_images
from lckasr.model import ModelConfig, forward
from lckasr.train import Schedule, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 200

cfg = ModelConfig(channels=24, blocks=2, scale=2, seed=0)
pairs = make_pairs(synthetic_images(32, 64, seed=1), cfg.scale)
result = train(cfg, pairs, Schedule(iters=iters, batch=8, patch=32))

losses = result.losses
print(f"loss: first 20 {losses[:20].mean():.4f}, last 20 {losses[-20:].mean():.4f}")

# held-out images, compared with plain bicubic upscaling of the same LR input
test = synthetic_images(8, 64, seed=2)
for name, params in (("ema", result.params), ("raw", result.raw)):
    ours, bicubic = [], []
    for hr in test:
        lr = im.degrade(hr, 2)
        sr = im.to_image(forward(params, cfg, im.to_tensor(lr)))
        ours.append(im.psnr_y(sr, hr, 2))
        bicubic.append(im.psnr_y(im.bicubic_resize(lr, 64, 64), hr, 2))
    print(f"{name}: {np.mean(ours):.2f} dB vs bicubic {np.mean(bicubic):.2f} dB")
