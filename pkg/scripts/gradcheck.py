"""Finite-difference check of the U-Net gradients for a few configurations."""
import time

import numpy as np

from tumseg.unet import UNetConfig, grad_check

rng = np.random.default_rng(0)
for cfg, hw in [(UNetConfig(base_width=4), 16), (UNetConfig(base_width=4, initial_kernel=5), 16),
                (UNetConfig(base_width=2, num_classes=2), 8), (UNetConfig(depth=0), 8)]:
    x = rng.standard_normal((2, cfg.in_channels, hw, hw))
    y = rng.integers(0, cfg.num_classes, size=(2, hw, hw))
    t0 = time.time()
    err = grad_check(cfg, x, y, n_samples=200)
    print(f"depth {cfg.depth} width {cfg.base_width} k0 {cfg.initial_kernel} "
          f"classes {cfg.num_classes}: max rel err {err:.2e} ({time.time() - t0:.1f}s)")
