"""Container for one co-captured multi-view frame."""

from dataclasses import dataclass, field

import numpy as np

from .features import compute_descriptors, rgb_to_gray


@dataclass
class LightFieldFrame:
    """K color views plus per-view static-probability maps.

    images: list of (h, w, 3) uint8, one per camera, same size everywhere.
    priors: list of (h, w) float32 in [0, 1]; value = probability that the
        pixel shows the persistent background rather than a transient object.
    """

    images: list
    priors: list
    _descriptors: list = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if len(self.images) != len(self.priors):
            raise ValueError("one prior map per view is required")
        if len(self.images) < 2:
            raise ValueError("a light-field frame needs at least two views")
        base = self.images[0].shape[:2]
        for i, (img, pri) in enumerate(zip(self.images, self.priors)):
            if img.shape[:2] != base or pri.shape != base:
                raise ValueError(f"view {i}: shape mismatch with view 0")
            if pri.min() < 0.0 or pri.max() > 1.0:
                raise ValueError(f"view {i}: prior values outside [0, 1]")

    @property
    def num_views(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images[0].shape[:2]

    def gray(self, k):
        return rgb_to_gray(self.images[k])

    def descriptors(self, k):
        """Per-view DescriptorMap, computed once and cached."""
        if self._descriptors is None:
            self._descriptors = [None] * self.num_views
        if self._descriptors[k] is None:
            self._descriptors[k] = compute_descriptors(self.gray(k))
        return self._descriptors[k]
