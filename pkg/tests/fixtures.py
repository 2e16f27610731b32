"""Synthetic image fixtures shared by the unit and acceptance tests."""

import numpy as np
from scipy import ndimage


def texture(shape, seed=0, sigma=2.0):
    """Smooth random texture in [0, 1]."""
    noise = np.random.default_rng(seed).random(shape)
    t = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    return (t - t.min()) / (t.max() - t.min())


def moving_square_clip(frames=6, size=64, square=14, step=(2, 3), seed=0):
    """Textured static background with one textured square translating by ``step`` px per frame.

    Returns float frames ``(c, H, W)`` and the boolean square support per frame.
    """
    bg = texture((size, size), seed=seed)
    patch = 1.0 - texture((square, square), seed=seed + 1, sigma=1.5)
    clip = np.empty((frames, size, size))
    support = np.zeros((frames, size, size), dtype=bool)
    y0, x0 = 8, 8
    for t in range(frames):
        y, x = y0 + t * step[0], x0 + t * step[1]
        img = bg.copy()
        img[y:y + square, x:x + square] = patch
        clip[t] = img
        support[t, y:y + square, x:x + square] = True
    return clip, support
