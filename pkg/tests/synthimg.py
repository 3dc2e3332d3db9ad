"""Deterministic synthetic grayscale images for tests.

Mixes low-frequency sinusoids with a few soft-edged shapes so images have
both smooth regions and edges, then squeezes into [0.03, 0.97] to keep
headroom for additive noise.
"""

import numpy as np


def synth_image(h: int, w: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    img = 0.3 * xx + 0.2 * yy

    for _ in range(6):
        fy, fx = rng.uniform(0.5, 4.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.1, 0.35)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)

    for _ in range(3):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        radius = rng.uniform(0.08, 0.25)
        sharp = rng.uniform(40, 120)
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        img += rng.uniform(-0.3, 0.3) / (1.0 + np.exp(sharp * (dist - radius)))

    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo)
    return (0.03 + 0.94 * img).astype(np.float32)
