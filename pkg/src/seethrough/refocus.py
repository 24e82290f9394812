"""Compose a see-through reference view from the static rays.

Each reference pixel gathers color along its solved disparity from every
view whose ray the segmentation marked static and which lands inside the
image. With at least min_static_rays such rays the pixel becomes their
bilinear average (REFOCUSED); otherwise it keeps the reference color
(FALLBACK). Pixels the solver never touched are copied through verbatim
(COPIED) and the median cleanup never rewrites them.

Provenance uses the byte values written to disk: 255 refocused, 0
fallback, 128 copied.
"""

import numpy as np

from .sampling import bilinear, flatten_channels
from .solver import STATUS_VALID

PROV_FALLBACK = 0
PROV_COPIED = 128
PROV_REFOCUSED = 255


def gather_static_colors(frame, rig, pix, d, static_bits):
    """Sum of static-ray colors and the count of rays that contributed.

    Rays count when their static bit is set, the warp depth is positive and
    the landing point stays inside [0, w-1] x [0, h-1] of the target view.
    Returns (color_sum (n, 3) float64, count (n,) int32).
    """
    h, w = frame.shape
    u = (pix % w).astype(np.float64)
    v = (pix // w).astype(np.float64)
    total = np.zeros((pix.shape[0], 3))
    count = np.zeros(pix.shape[0], dtype=np.int32)
    for k in range(frame.num_views):
        sel = ((static_bits >> np.uint32(k)) & np.uint32(1)).astype(bool)
        if not sel.any():
            continue
        pu, pv, ok = rig.warp(u, v, d, k)
        kh, kw = frame.images[k].shape[:2]
        ok = ok & (pu >= 0.0) & (pu <= kw - 1.0) & (pv >= 0.0) & (pv <= kh - 1.0)
        idx = np.flatnonzero(sel & ok)
        if idx.size == 0:
            continue
        flat, fh, fw = flatten_channels(frame.images[k])
        total[idx] += bilinear(flat, fh, fw, pu[idx], pv[idx])
        count[idx] += 1
    return total, count


def refocus_pixel(frame, rig, u, v, d, static_bits, min_static_rays=2):
    """Single-pixel reference path: (rgb uint8 triple, ray count, provenance)."""
    if not np.isscalar(static_bits):
        static_bits = sum(1 << k for k, b in enumerate(static_bits) if b)
    h, w = frame.shape
    pix = np.array([int(v) * w + int(u)], dtype=np.int64)
    total, count = gather_static_colors(frame, rig, pix,
                                        np.array([float(d)]),
                                        np.array([static_bits], dtype=np.uint32))
    n = int(count[0])
    if n >= min_static_rays:
        rgb = np.clip(np.rint(total[0] / n), 0, 255).astype(np.uint8)
        return rgb, n, PROV_REFOCUSED
    return frame.images[rig.ref_index][int(v), int(u)].copy(), n, PROV_FALLBACK


def median_filter(image, radius):
    """Per-channel median over windows clipped at the image border.

    Matches np.median on each clipped window (even counts average the two
    middle values); the result is rounded to the nearest even on ties the
    way np.rint does. radius 0 returns the input untouched.
    """
    if radius <= 0:
        return image.copy()
    h, w = image.shape[:2]
    chans = image.shape[2] if image.ndim == 3 else 1
    src = image.reshape(h, w, chans).astype(np.float32)
    offs = [(dy, dx) for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)]
    out = np.empty_like(src)
    stack = np.empty((h, w, len(offs)), dtype=np.float32)
    inside = np.zeros((h, w, len(offs)), dtype=bool)
    for i, (dy, dx) in enumerate(offs):
        ys = np.arange(h) + dy
        xs = np.arange(w) + dx
        okY = (ys >= 0) & (ys < h)
        okX = (xs >= 0) & (xs < w)
        inside[:, :, i] = okY[:, None] & okX[None, :]
    cnt = inside.sum(axis=2)
    i0 = (cnt - 1) // 2
    i1 = cnt // 2
    for c in range(chans):
        for i, (dy, dx) in enumerate(offs):
            shifted = np.full((h, w), np.inf, dtype=np.float32)
            y0, y1 = max(dy, 0), min(h + dy, h)
            x0, x1 = max(dx, 0), min(w + dx, w)
            shifted[y0:y1, x0:x1] = src[y0 - dy:y1 - dy, x0 - dx:x1 - dx, c]
            stack[:, :, i] = shifted
        vals = np.sort(stack, axis=2)
        lo = np.take_along_axis(vals, i0[:, :, None], axis=2)[:, :, 0]
        hi = np.take_along_axis(vals, i1[:, :, None], axis=2)[:, :, 0]
        out[:, :, c] = 0.5 * (lo + hi)
    out = np.clip(np.rint(out), 0, 255).astype(image.dtype)
    return out.reshape(image.shape)


def synthesize(frame, rig, disparity, seg, min_static_rays=2, median_radius=1,
               copy_mask=None):
    """Dense see-through composition.

    copy_mask marks pixels to pass through from the reference view without
    gathering (used when only the dynamic region was solved); they also do
    not get median-filtered. Returns (image (h, w, 3) uint8, provenance
    (h, w) uint8, n_rays (h, w) uint8).
    """
    h, w = frame.shape
    ref = frame.images[rig.ref_index]
    out = ref.copy()
    prov = np.full((h, w), PROV_FALLBACK, dtype=np.uint8)
    n_rays = np.zeros((h, w), dtype=np.uint8)

    if copy_mask is None:
        copy_mask = np.zeros((h, w), dtype=bool)
    else:
        copy_mask = np.asarray(copy_mask, dtype=bool)
    prov[copy_mask] = PROV_COPIED

    attempt = (~copy_mask) & (disparity.status == STATUS_VALID)
    pix = np.flatnonzero(attempt.ravel())
    if pix.size:
        d = disparity.values.ravel()[pix].astype(np.float64)
        bits = seg.static_bits.ravel()[pix]
        total, count = gather_static_colors(frame, rig, pix, d, bits)
        n_rays.ravel()[pix] = np.clip(count, 0, 255).astype(np.uint8)
        good = count >= min_static_rays
        gpix = pix[good]
        rgb = np.clip(np.rint(total[good] / count[good, None]), 0, 255).astype(np.uint8)
        flat_img = out.reshape(-1, 3)
        flat_img[gpix] = rgb
        prov.ravel()[gpix] = PROV_REFOCUSED

    if median_radius > 0:
        filtered = median_filter(out, median_radius)
        rewrite = prov != PROV_COPIED
        out[rewrite] = filtered[rewrite]
    return out, prov, n_rays
