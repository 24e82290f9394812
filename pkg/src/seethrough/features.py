"""Compact per-pixel appearance descriptors.

A descriptor stacks horizontal and vertical 3x3 Sobel responses sampled at
eight fixed offsets inside a 5x5 neighborhood, giving 16 uint8 entries per
pixel.  Responses are divided by 4, biased by 128 and clamped to 0..255,
so a flat image yields the constant descriptor 128.  Distances are sums of
absolute differences.

The sample footprint (offset radius 2 plus the Sobel radius 1) means
descriptors within DESCRIPTOR_MARGIN pixels of the border are invalid.
"""

from dataclasses import dataclass

import numpy as np

from .sampling import bilinear, flatten_channels

DESCRIPTOR_LENGTH = 16
DESCRIPTOR_MARGIN = 3

# ring of eight sample offsets (du, dv) covering the 5x5 neighborhood;
# entry 2*i is the horizontal response at offset i, entry 2*i+1 the vertical
SAMPLE_OFFSETS = ((0, -2), (1, -1), (2, 0), (1, 1), (0, 2), (-1, 1), (-2, 0), (-1, -1))

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def rgb_to_gray(image):
    """(h, w, 3) uint8 -> (h, w) uint8 using ITU-R 601 weights."""
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(np.uint8, copy=False)
    gray = (img[..., 0] * GRAY_WEIGHTS[0] + img[..., 1] * GRAY_WEIGHTS[1]
            + img[..., 2] * GRAY_WEIGHTS[2])
    return np.rint(gray).astype(np.uint8)


def sobel_responses(gray):
    """Biased 3x3 Sobel responses of a grayscale image.

    Returns (gx, gy) uint8 maps: clip(rint(128 + raw / 4), 0, 255).  The
    one-pixel border is filled with edge-replicated content; it never
    participates in a valid descriptor.
    """
    g = np.asarray(gray, dtype=np.int32)
    if g.ndim != 2:
        raise ValueError("sobel_responses wants a grayscale image")
    p = np.pad(g, 1, mode="edge")
    # horizontal: [[-1,0,1],[-2,0,2],[-1,0,1]] as correlation
    col = p[:-2] + 2 * p[1:-1] + p[2:]
    gx = col[:, 2:] - col[:, :-2]
    # vertical: transpose kernel
    row = p[:, :-2] + 2 * p[:, 1:-1] + p[:, 2:]
    gy = row[2:] - row[:-2]
    gx = np.clip(np.rint(128.0 + gx / 4.0), 0, 255).astype(np.uint8)
    gy = np.clip(np.rint(128.0 + gy / 4.0), 0, 255).astype(np.uint8)
    return gx, gy


@dataclass
class DescriptorMap:
    """Dense descriptors for one view: data is (h, w, 16) uint8."""

    data: np.ndarray
    valid: np.ndarray  # (h, w) bool, False inside the border margin

    @property
    def shape(self):
        return self.data.shape[:2]

    def flat32(self):
        """Cached (h*w, 16) float32 view used by interpolated gathers."""
        cached = getattr(self, "_flat32", None)
        if cached is None:
            cached = flatten_channels(self.data)
            self._flat32 = cached
        return cached


def compute_descriptors(gray):
    """Build the dense DescriptorMap of a grayscale (or RGB) image."""
    gray = np.asarray(gray)
    if gray.ndim == 3:
        gray = rgb_to_gray(gray)
    h, w = gray.shape
    if h < 2 * DESCRIPTOR_MARGIN + 1 or w < 2 * DESCRIPTOR_MARGIN + 1:
        raise ValueError(f"image too small for descriptors (needs at least "
                         f"{2 * DESCRIPTOR_MARGIN + 1} pixels per side)")
    gx, gy = sobel_responses(gray)
    data = np.empty((h, w, DESCRIPTOR_LENGTH), dtype=np.uint8)
    # shifted copies: descriptor(v, u)[2i] = gx[v + dv_i, u + du_i]
    for i, (du, dv) in enumerate(SAMPLE_OFFSETS):
        for j, plane in enumerate((gx, gy)):
            shifted = np.full((h, w), 128, dtype=np.uint8)
            src_v = slice(max(dv, 0), h + min(dv, 0))
            dst_v = slice(max(-dv, 0), h + min(-dv, 0))
            src_u = slice(max(du, 0), w + min(du, 0))
            dst_u = slice(max(-du, 0), w + min(-du, 0))
            shifted[dst_v, dst_u] = plane[src_v, src_u]
            data[:, :, 2 * i + j] = shifted
    valid = np.zeros((h, w), dtype=bool)
    valid[DESCRIPTOR_MARGIN:h - DESCRIPTOR_MARGIN, DESCRIPTOR_MARGIN:w - DESCRIPTOR_MARGIN] = True
    return DescriptorMap(data=data, valid=valid)


def descriptor_distance(a, b):
    """Sum of absolute differences between two descriptors (or batches)."""
    a = np.asarray(a, dtype=np.int32)
    b = np.asarray(b, dtype=np.int32)
    return np.abs(a - b).sum(axis=-1)


def texture_energy(dmap):
    """Per-pixel sum of |entry - 128|, a cheap local-contrast score."""
    d = dmap.data.astype(np.int32)
    return np.abs(d - 128).sum(axis=2)


def sample_descriptors(dmap, u, v):
    """Bilinearly interpolated descriptors at continuous coordinates.

    Returns ((n, 16) float64, (n,) bool valid).  A sample is valid when its
    whole bilinear support lies in the descriptor-valid interior, i.e.
    DESCRIPTOR_MARGIN <= u <= width - DESCRIPTOR_MARGIN - 1 (same for v).
    """
    h, w = dmap.shape
    flat, fh, fw = dmap.flat32()
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    valid = ((u >= DESCRIPTOR_MARGIN) & (u <= w - DESCRIPTOR_MARGIN - 1)
             & (v >= DESCRIPTOR_MARGIN) & (v <= h - DESCRIPTOR_MARGIN - 1))
    return bilinear(flat, fh, fw, u, v), valid
