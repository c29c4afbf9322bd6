"""Shared synthetic-frame builders for tests.

Translating a band-limited texture gives streams whose true frame-to-frame
motion is the commanded shift, so flow-driven samplers can be tested against
exact ground truth.
"""

import numpy as np


def textured_frame(h, w, tx=0.0, ty=0.0, seed=0, n_waves=10):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xx = xx - tx
    yy = yy - ty
    f = np.zeros((h, w))
    for _ in range(n_waves):
        fx, fy = rng.uniform(-0.08, 0.08, 2)
        amp = rng.uniform(0.05, 0.15)
        phase = rng.uniform(0, 2 * np.pi)
        f += amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    return 0.5 + 0.4 * f / np.abs(f).max()


def shift_stream(shifts, size=96, seed=0):
    """One frame per absolute shift (pixels along x), same underlying texture."""
    return [textured_frame(size, size, tx=s, seed=seed) for s in shifts]
