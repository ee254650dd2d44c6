"""
Y-channel metrics and the self-ensemble
=======================================
"""
import numpy as np

from lckasr import image as im
from lckasr.data import synthetic_images
from lckasr.model import ModelConfig, build, forward, forward_ensemble

# a uniform offset of one grey level in Y is 20*log10(255) dB
y = np.full((32, 32), 100.0)
print(im.psnr_planes(y, y + 1))

hr = synthetic_images(1, 96, seed=4)[0]
lr = im.degrade(hr, 4)
print("bicubic", im.psnr_y(im.bicubic_resize(lr, 96, 96), hr, 4), im.ssim_y(im.bicubic_resize(lr, 96, 96), hr, 4))
print("nearest", im.psnr_y(im.nearest_upscale(lr, 4), hr, 4), im.ssim_y(im.nearest_upscale(lr, 4), hr, 4))

# inverting flips the sign of every edge; only the flat regions still agree
print("inverted", im.ssim_y(hr, 255 - hr))

# the ensemble averages the network over the 8 flips/rotations of the input;
# with untrained weights the outputs differ, with a symmetric map they would not
cfg = ModelConfig(channels=12, blocks=1, scale=4)
params = build(cfg)
x = im.to_tensor(lr)
single = forward(params, cfg, x)
ens = forward_ensemble(params, cfg, x)
print(single.shape, np.abs(single - ens).max())
