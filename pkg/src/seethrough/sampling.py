"""Bilinear sampling over flattened image planes.

Sampling works on (h*w, channels) views so warped gathers can run on flat
pixel index arrays without reshaping per call.  Callers are responsible for
masking out samples whose coordinates fall outside their validity margin;
coordinates are clipped here only so that index arithmetic stays in range.
"""

import numpy as np


def flatten_channels(image):
    """(h, w) or (h, w, c) array -> float32 (h*w, c) view plus (height, width)."""
    a = np.asarray(image)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    return np.ascontiguousarray(a.reshape(h * w, c), dtype=np.float32), h, w


def bilinear(flat, height, width, u, v):
    """Sample (h*w, c) float32 plane at continuous (u, v).

    Returns (n, c) float64.  Coordinates are clipped to the valid index
    range first, so out-of-image queries return edge content; mask them
    with an in-bounds test when that matters.
    """
    u = np.clip(np.nan_to_num(u, nan=0.0, posinf=0.0, neginf=0.0), 0.0, width - 1.0)
    v = np.clip(np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0), 0.0, height - 1.0)
    iu = np.minimum(np.floor(u), width - 2.0) if width > 1 else np.zeros_like(u)
    iv = np.minimum(np.floor(v), height - 2.0) if height > 1 else np.zeros_like(v)
    fu = (u - iu)[:, None]
    fv = (v - iv)[:, None]
    base = (iv.astype(np.int64) * width + iu.astype(np.int64))
    step_u = 1 if width > 1 else 0
    step_v = width if height > 1 else 0
    # zero-weight taps contribute exactly zero in the lerp form, so integer
    # rows or columns (the common case on axis-aligned rigs) skip the
    # gathers without changing a single bit of the result
    lerp_v = fv.any()
    g00 = flat[base]
    if fu.any():
        g10 = flat[base + step_u]
        top = g00 + fu * (g10 - g00)
        if lerp_v:
            g01 = flat[base + step_v]
            g11 = flat[base + step_u + step_v]
            bot = g01 + fu * (g11 - g01)
    else:
        top = g00.astype(np.float64)
        if lerp_v:
            bot = flat[base + step_v]
    if not lerp_v:
        return np.asarray(top, dtype=np.float64)
    return (top + fv * (bot - top)).astype(np.float64)
