"""Synthetic light-field oracle: scenes with known geometry and masks.

Scenes are layered fronto-parallel surfaces rendered through ideal pinhole
cameras on a linear rig: rectangular billboard occluders in front of
background planes (optionally bounded slabs in world x, the deepest plane
acting as an unbounded backdrop).  Surfaces carry procedural textures that
are pure functions of world position and a seed, so every view observes
the same Lambertian content and rendering is reproducible bit for bit.

Ground truth follows the background, never the occluders: the disparity
map describes the background surface behind everything, the reference
background image is rendered with occluders removed, and per-view binary
occluder masks record which pixels a transient object covers.
"""

from dataclasses import dataclass, field

import numpy as np

from .frame import LightFieldFrame
from .geometry import CameraIntrinsics, linear_rig


# -- procedural texture -------------------------------------------------------

def _hash01(ix, iy, seed):
    """Deterministic lattice hash -> floats in [0, 1); wraps modulo 2**64."""
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)
             ^ np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x94D049BB133111EB))
        h ^= h >> np.uint64(30)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(27)
        h *= np.uint64(0x94D049BB133111EB)
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(x, y, seed):
    """Smooth lattice noise in [-1, 1], C1 thanks to smoothstep weights."""
    ix = np.floor(x)
    iy = np.floor(y)
    fx = x - ix
    fy = y - iy
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    n00 = _hash01(ix, iy, seed)
    n10 = _hash01(ix + 1, iy, seed)
    n01 = _hash01(ix, iy + 1, seed)
    n11 = _hash01(ix + 1, iy + 1, seed)
    top = n00 + sx * (n10 - n00)
    bot = n01 + sx * (n11 - n01)
    return 2.0 * (top + sy * (bot - top)) - 1.0


def surface_color(x, y, seed, base, amplitude, frequency):
    """RGB texture sampled at world coordinates (meters) on a surface.

    A seeded mix of three oriented sinusoids and one octave of value noise,
    band-limited enough that bilinear resampling stays faithful.  Returns
    (n, 3) float64 in [0, 255].
    """
    x = np.asarray(x, dtype=np.float64) * frequency
    y = np.asarray(y, dtype=np.float64) * frequency
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, np.pi, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, 3))
    rates = rng.uniform(0.6, 1.1, size=3)
    noise_w = rng.uniform(0.3, 0.5, size=3)
    out = np.empty(x.shape + (3,), dtype=np.float64)
    noise = _value_noise(x + 13.7, y + 7.31, seed)
    for c in range(3):
        s = np.zeros_like(x)
        for i in range(3):
            proj = x * np.cos(angles[i]) + y * np.sin(angles[i])
            s += np.sin(2.0 * np.pi * rates[i] * proj + phases[i, c])
        pattern = (1.0 - noise_w[c]) * (s / 3.0) + noise_w[c] * noise
        out[..., c] = base + amplitude * pattern
    return np.clip(out, 0.0, 255.0)


# -- scene description --------------------------------------------------------

@dataclass
class PlaneSpec:
    """Fronto-parallel background plane at a fixed depth.

    x_min/x_max bound the plane as a vertical slab in world x; the deepest
    plane must be unbounded so every ray terminates.
    """

    depth: float
    seed: int = 0
    base: float = 120.0
    amplitude: float = 55.0
    frequency: float = 2.0
    x_min: float = None
    x_max: float = None


@dataclass
class OccluderSpec:
    """Rectangular billboard at a fixed depth, centered at (center_x, center_y)."""

    depth: float
    width: float
    height: float
    center_x: float = 0.0
    center_y: float = 0.0
    seed: int = 0
    base: float = 90.0
    amplitude: float = 45.0
    frequency: float = 6.0


@dataclass
class SceneSpec:
    width: int = 320
    height: int = 240
    focal: float = 300.0
    cameras: int = 5
    spacing: float = 0.1
    ref_index: int = 0
    seed: int = 0
    p_flip: float = 0.0
    blur_radius: int = 0
    planes: list = field(default_factory=list)
    occluders: list = field(default_factory=list)

    def intrinsics(self):
        return CameraIntrinsics(fx=self.focal, fy=self.focal,
                                cx=(self.width - 1) / 2.0, cy=(self.height - 1) / 2.0,
                                width=self.width, height=self.height)

    def rig(self):
        return linear_rig(self.cameras, self.spacing, self.intrinsics(),
                          ref_index=self.ref_index)

    def validate(self):
        if not self.planes:
            raise ValueError("scene constraint violated: at least one background plane")
        if any(p.depth <= 0 for p in self.planes) or any(o.depth <= 0 for o in self.occluders):
            raise ValueError("scene constraint violated: surface depths must be positive")
        deepest = max(p.depth for p in self.planes)
        backdrop = [p for p in self.planes if p.depth == deepest]
        if all(p.x_min is not None or p.x_max is not None for p in backdrop):
            raise ValueError("scene constraint violated: deepest plane must be an unbounded backdrop")
        min_plane = min(p.depth for p in self.planes)
        if any(o.depth >= min_plane for o in self.occluders):
            raise ValueError("scene constraint violated: occluder depths must be "
                             "smaller than every background depth")
        if any(o.width <= 0 or o.height <= 0 for o in self.occluders):
            raise ValueError("scene constraint violated: occluder extents must be positive")
        if not 0.0 <= self.p_flip < 0.5:
            raise ValueError("scene constraint violated: p_flip must lie in [0, 0.5)")
        if self.blur_radius < 0:
            raise ValueError("scene constraint violated: blur_radius must be >= 0")
        if not 0 <= self.ref_index < self.cameras:
            raise ValueError("scene constraint violated: ref_index out of camera range")


@dataclass
class GroundTruth:
    disparity: np.ndarray        # (h, w) float32, background surface only
    background: np.ndarray       # (h, w, 3) uint8, reference view without occluders
    masks: list                  # per view (h, w) bool, True where an occluder covers


# -- rendering ----------------------------------------------------------------

def _cast(spec, center, rotation, su, sv, include_occluders=True):
    """Trace one sample per entry of (su, sv) through camera at `center`.

    Returns (color (n, 3), occluded (n,), depth (n,)).  Surfaces are tested
    nearest-first; occluders always sit in front of every plane.
    """
    intr = spec.intrinsics()
    dx = (su - intr.cx) / intr.fx
    dy = (sv - intr.cy) / intr.fy
    dirs = np.stack([dx, dy, np.ones_like(dx)], axis=-1) @ rotation  # rows: R^T @ d
    n = su.size
    color = np.zeros((n, 3), dtype=np.float64)
    occluded = np.zeros(n, dtype=bool)
    depth = np.full(n, np.inf)
    assigned = np.zeros(n, dtype=bool)

    surfaces = []
    if include_occluders:
        surfaces.extend(sorted(((o.depth, "occ", o) for o in spec.occluders),
                               key=lambda s: s[0]))
    surfaces.extend(sorted(((p.depth, "plane", p) for p in spec.planes),
                           key=lambda s: s[0]))

    for z, kind, surf in surfaces:
        if assigned.all():
            break
        rem = ~assigned
        dz = dirs[rem, 2]
        forward = dz > 0
        with np.errstate(invalid="ignore"):
            t = np.where(forward, (z - center[2]) / np.where(dz == 0, 1.0, dz), np.inf)
            px = center[0] + t * dirs[rem, 0]
            py = center[1] + t * dirs[rem, 1]
        if kind == "occ":
            inside = (forward
                      & (np.abs(px - surf.center_x) <= surf.width / 2.0)
                      & (np.abs(py - surf.center_y) <= surf.height / 2.0))
        else:
            inside = forward.copy()
            if surf.x_min is not None:
                inside &= px >= surf.x_min
            if surf.x_max is not None:
                inside &= px < surf.x_max
        if not inside.any():
            continue
        idx = np.flatnonzero(rem)[inside]
        color[idx] = surface_color(px[inside], py[inside], surf.seed,
                                   surf.base, surf.amplitude, surf.frequency)
        depth[idx] = z
        if kind == "occ":
            occluded[idx] = True
        assigned[idx] = True

    if not assigned.all():
        raise ValueError("scene constraint violated: some rays hit no surface "
                         "(deepest plane must be an unbounded backdrop)")
    return color, occluded, depth


def _occluder_pixel_rect(spec, occ, center):
    """Continuous pixel-space rectangle covered by a billboard in one view."""
    intr = spec.intrinsics()
    z = occ.depth - center[2]
    u0 = intr.cx + intr.fx * (occ.center_x - occ.width / 2.0 - center[0]) / z
    u1 = intr.cx + intr.fx * (occ.center_x + occ.width / 2.0 - center[0]) / z
    v0 = intr.cy + intr.fy * (occ.center_y - occ.height / 2.0 - center[1]) / z
    v1 = intr.cy + intr.fy * (occ.center_y + occ.height / 2.0 - center[1]) / z
    return u0, u1, v0, v1


def render(spec):
    """Render a SceneSpec into (LightFieldFrame, GroundTruth).

    Boundary pixels of billboards are refined with 2x2 supersampling; the
    binary occluder masks report majority coverage there.  Prior maps are
    the exact masks passed through corrupt_prior with the scene's noise
    settings and per-view seeds derived from the scene seed.
    """
    spec.validate()
    rig = spec.rig()
    h, w = spec.height, spec.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    su = uu.ravel()
    sv = vv.ravel()

    images = []
    masks = []
    gt_disparity = None
    gt_background = None
    for k in range(spec.cameras):
        center = rig.camera_center(k)
        rot = rig.extrinsics(k).rotation
        color, occluded, _ = _cast(spec, center, rot, su, sv)
        coverage = occluded.astype(np.float64)

        # refine billboard boundary pixels with a 2x2 subsample pattern
        boundary = np.zeros(h * w, dtype=bool)
        for occ in spec.occluders:
            u0, u1, v0, v1 = _occluder_pixel_rect(spec, occ, center)
            near_u = ((np.abs(su - u0) <= 0.5) | (np.abs(su - u1) <= 0.5)) \
                & (sv >= v0 - 0.5) & (sv <= v1 + 0.5)
            near_v = ((np.abs(sv - v0) <= 0.5) | (np.abs(sv - v1) <= 0.5)) \
                & (su >= u0 - 0.5) & (su <= u1 + 0.5)
            boundary |= near_u | near_v
        if boundary.any():
            bu = su[boundary]
            bv = sv[boundary]
            acc_color = np.zeros((bu.size, 3))
            acc_cov = np.zeros(bu.size)
            for du, dv in ((-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)):
                c, o, _ = _cast(spec, center, rot, bu + du, bv + dv)
                acc_color += c
                acc_cov += o
            color[boundary] = acc_color / 4.0
            coverage[boundary] = acc_cov / 4.0

        images.append(np.clip(np.rint(color), 0, 255).astype(np.uint8).reshape(h, w, 3))
        masks.append((coverage >= 0.5).reshape(h, w))

        if k == rig.ref_index:
            bg_color, _, bg_depth = _cast(spec, center, rot, su, sv,
                                          include_occluders=False)
            gt_background = np.clip(np.rint(bg_color), 0, 255).astype(np.uint8).reshape(h, w, 3)
            fx = spec.focal
            gt_disparity = (fx * rig.unit_baseline / bg_depth).astype(np.float32).reshape(h, w)

    priors = []
    for k in range(spec.cameras):
        exact = 1.0 - masks[k].astype(np.float64)
        priors.append(corrupt_prior(exact, spec.p_flip, spec.blur_radius,
                                    seed=[spec.seed, k, 17]))

    frame = LightFieldFrame(images=images, priors=priors)
    truth = GroundTruth(disparity=gt_disparity, background=gt_background, masks=masks)
    return frame, truth


# -- prior corruption ---------------------------------------------------------

def box_blur(arr, radius):
    """Mean over the clipped (2r+1)^2 window, exact via integral image."""
    if radius <= 0:
        return np.asarray(arr, dtype=np.float64).copy()
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape
    integ = np.zeros((h + 1, w + 1))
    integ[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    v = np.arange(h)
    u = np.arange(w)
    v1 = np.maximum(v - radius, 0)
    v2 = np.minimum(v + radius + 1, h)
    u1 = np.maximum(u - radius, 0)
    u2 = np.minimum(u + radius + 1, w)
    s = (integ[v2[:, None], u2[None, :]] - integ[v1[:, None], u2[None, :]]
         - integ[v2[:, None], u1[None, :]] + integ[v1[:, None], u1[None, :]])
    counts = (v2 - v1)[:, None] * (u2 - u1)[None, :]
    return s / counts


def corrupt_prior(static_prob, p_flip, blur_radius, seed):
    """Degrade an exact 0/1 static map into a noisy probability map.

    Each label flips independently with probability p_flip, then the map is
    box-blurred with the given radius and clamped to [0, 1].  The same seed
    always flips the same pixels regardless of the blur setting.
    """
    exact = np.asarray(static_prob, dtype=np.float64)
    rng = np.random.default_rng(seed)
    flips = rng.random(exact.shape) < p_flip
    noisy = np.where(flips, 1.0 - exact, exact)
    blurred = box_blur(noisy, blur_radius)
    return np.clip(blurred, 0.0, 1.0).astype(np.float32)


# -- scene-spec files ---------------------------------------------------------
#
# Line-oriented text.  Scalar fields are "key value"; each `plane` or
# `occluder` line carries its own key=value assignments:
#
#     seed 7
#     cameras 5
#     width 320
#     plane depth=7.5 seed=1 amplitude=55
#     occluder depth=0.55 width=0.47 height=0.4 seed=9

_SCALAR_FIELDS = {"width": int, "height": int, "focal": float, "cameras": int,
                  "spacing": float, "ref_index": int, "seed": int,
                  "p_flip": float, "blur_radius": int}
_PLANE_FIELDS = {"depth": float, "seed": int, "base": float, "amplitude": float,
                 "frequency": float, "x_min": float, "x_max": float}
_OCC_FIELDS = {"depth": float, "width": float, "height": float, "center_x": float,
               "center_y": float, "seed": int, "base": float, "amplitude": float,
               "frequency": float}


def _parse_assignments(tokens, allowed, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"line {lineno}: expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        if key not in allowed:
            raise ValueError(f"line {lineno}: unknown field {key!r}")
        out[key] = allowed[key](val)
    return out


def load_scene(path):
    spec = SceneSpec()
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            key, rest = parts[0], parts[1:]
            if key == "plane":
                spec.planes.append(PlaneSpec(**_parse_assignments(rest, _PLANE_FIELDS, lineno)))
            elif key == "occluder":
                spec.occluders.append(OccluderSpec(**_parse_assignments(rest, _OCC_FIELDS, lineno)))
            elif key in _SCALAR_FIELDS:
                if len(rest) != 1:
                    raise ValueError(f"line {lineno}: {key} takes one value")
                setattr(spec, key, _SCALAR_FIELDS[key](rest[0]))
            else:
                raise ValueError(f"line {lineno}: unknown directive {key!r}")
    spec.validate()
    return spec


def save_scene(spec, path):
    def num(x):
        return repr(float(x)) if isinstance(x, float) else str(x)

    lines = ["# synthetic scene description"]
    for key in _SCALAR_FIELDS:
        lines.append(f"{key} {num(getattr(spec, key))}")
    for p in spec.planes:
        toks = [f"depth={num(p.depth)}", f"seed={p.seed}", f"base={num(p.base)}",
                f"amplitude={num(p.amplitude)}", f"frequency={num(p.frequency)}"]
        if p.x_min is not None:
            toks.append(f"x_min={num(p.x_min)}")
        if p.x_max is not None:
            toks.append(f"x_max={num(p.x_max)}")
        lines.append("plane " + " ".join(toks))
    for o in spec.occluders:
        lines.append("occluder " + " ".join(
            [f"depth={num(o.depth)}", f"width={num(o.width)}",
             f"height={num(o.height)}", f"center_x={num(o.center_x)}",
             f"center_y={num(o.center_y)}", f"seed={o.seed}",
             f"base={num(o.base)}", f"amplitude={num(o.amplitude)}",
             f"frequency={num(o.frequency)}"]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


# -- ready-made scenes --------------------------------------------------------

def two_plane_scene(width=320, height=240, cameras=5, seed=3):
    """Static scene: a near textured slab beside a deeper backdrop.

    With the default focal/spacing the slab sits at disparity 5 and the
    backdrop at disparity 3 in the leftmost (reference) view.
    """
    return SceneSpec(
        width=width, height=height, cameras=cameras, seed=seed,
        planes=[PlaneSpec(depth=6.0, seed=seed + 1, base=125.0, amplitude=55.0,
                          frequency=4.0, x_max=0.3),
                PlaneSpec(depth=10.0, seed=seed + 2, base=110.0, amplitude=50.0,
                          frequency=2.6)])


def occluder_scene(width=320, height=240, cameras=5, coverage=0.25, seed=11,
                   p_flip=0.0, blur_radius=0):
    """One billboard in front of a single background plane.

    The billboard is sized to cover the requested fraction of the reference
    view and sits close to the rig, so its disparity gap to the background
    (about 50 units) lets the side cameras look behind it.
    """
    bg_depth = 7.5          # disparity 4 at focal 300, baseline 0.1
    occ_depth = 0.55        # disparity ~54.5
    focal = 300.0
    area_px = coverage * width * height
    w_px = float(np.sqrt(area_px * 150.0 / 128.0))
    h_px = area_px / w_px
    return SceneSpec(
        width=width, height=height, cameras=cameras, focal=focal, seed=seed,
        p_flip=p_flip, blur_radius=blur_radius,
        planes=[PlaneSpec(depth=bg_depth, seed=seed + 1, base=120.0,
                          amplitude=55.0, frequency=3.2)],
        occluders=[OccluderSpec(depth=occ_depth,
                                width=w_px * occ_depth / focal,
                                height=h_px * occ_depth / focal,
                                seed=seed + 2, base=95.0, amplitude=40.0,
                                frequency=8.0)])


def low_texture_scene(width=320, height=240, cameras=5, seed=5):
    """Half the background is a plain wall with near-zero texture."""
    return SceneSpec(
        width=width, height=height, cameras=cameras, seed=seed,
        planes=[PlaneSpec(depth=6.0, seed=seed + 1, base=125.0, amplitude=55.0,
                          frequency=4.0, x_max=0.0),
                PlaneSpec(depth=6.0, seed=seed + 2, base=130.0, amplitude=1.0,
                          frequency=0.7)])
