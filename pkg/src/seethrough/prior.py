"""Piecewise-planar disparity prior from sparse support matches.

The prior is built in four moves: detect textured candidate pixels on a
coarse grid, match each one along its epipolar locus in a neighboring view
(left-right consistency plus a uniqueness ratio), recover extra support for
occluded reference regions by matching in the other views and reprojecting
those points into the reference, then Delaunay-triangulate the surviving
points (plus four image-corner anchors) into a piecewise-linear disparity
surface.  Static-probability maps gate both ends: support on transient
objects is dropped at the detection view, and reprojected points only land
where the reference itself looks transient.

Around the interpolated surface the solver searches a small candidate set:
a half-unit-step band within two standard deviations of the surface value,
disparities of nearby support points, and a coarse global sweep.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .features import SAMPLE_OFFSETS, sample_descriptors, texture_energy

SUPPORT_STRIDE = 5
MIN_TEXTURE = 25.0
UNIQUENESS_RATIO = 0.9
# second-best searches exclude disparities this close to the best match
SECOND_BEST_EXCLUSION = 1.0
LEFT_RIGHT_TOL = 1.0


@dataclass
class PriorParams:
    """Shape of the disparity prior and its candidate sets."""

    sigma: float = 2.0                 # Gaussian width around the surface
    gamma: float = 0.05                # uniform floor mixed into the density
    d_max: float = 64.0                # largest admissible disparity
    neighborhood_radius: float = 20.0  # pixel radius for support candidates


@dataclass
class SupportPoint:
    u: int
    v: int
    d: float
    source_view: int


def detect_support_candidates(dmap, stride=SUPPORT_STRIDE, min_texture=MIN_TEXTURE):
    """Grid-strided descriptor-valid pixels with enough local contrast.

    Returns an (n, 2) int array of (u, v), sorted by (v, u).  A candidate
    passes when the summed magnitude of its descriptor entries around the
    bias exceeds min_texture; flat regions yield nothing.
    """
    h, w = dmap.shape
    energy = texture_energy(dmap)
    vs = np.arange(0, h, stride)
    us = np.arange(0, w, stride)
    uu, vv = np.meshgrid(us, vs)
    uu = uu.ravel()
    vv = vv.ravel()
    keep = dmap.valid[vv, uu] & (energy[vv, uu] >= min_texture)
    return np.stack([uu[keep], vv[keep]], axis=1)


def _scan_costs(rig, src, dst, u, v, d_grid, desc_src, desc_dst):
    """(n, n_d) descriptor SAD along the warped locus; inf where invalid."""
    ref_desc, ref_ok = sample_descriptors(desc_src, u, v)
    n = u.shape[0]
    costs = np.full((n, d_grid.size), np.inf, dtype=np.float64)
    for j, d in enumerate(d_grid):
        pu, pv, in_front = rig.warp_between(src, dst, u, v, np.full(n, d))
        tgt, tgt_ok = sample_descriptors(desc_dst, pu, pv)
        ok = ref_ok & tgt_ok & in_front
        if not ok.any():
            continue
        sad = np.abs(ref_desc[ok] - tgt[ok]).sum(axis=1)
        costs[ok, j] = sad
    return costs


def _best_with_ratio(costs, d_grid):
    """Per row: best disparity passing the uniqueness ratio (else NaN)."""
    best_j = np.argmin(costs, axis=1)
    rows = np.arange(costs.shape[0])
    best_cost = costs[rows, best_j]
    best_d = d_grid[best_j]
    masked = costs.copy()
    near = np.abs(d_grid[None, :] - best_d[:, None]) <= SECOND_BEST_EXCLUSION
    masked[near] = np.inf
    second = masked.min(axis=1)
    ok = np.isfinite(best_cost)
    with np.errstate(invalid="ignore"):
        ok &= ~(np.isfinite(second) & (best_cost > UNIQUENESS_RATIO * second))
    return np.where(ok, best_d, np.nan), best_cost


def match_support_points(frame, rig, src, dst, candidates, params):
    """Match candidate pixels of view src against view dst.

    Scans disparities 0.5, 1.0, ... d_max (in src-view units), keeps the
    SAD argmin when it wins the 0.9 uniqueness ratio against everything
    more than one unit away and a reverse match from the landing pixel
    agrees within one unit.  Returns a list of SupportPoint.
    """
    if candidates.shape[0] == 0:
        return []
    d_grid = np.arange(0.5, params.d_max + 0.25, 0.5)
    desc_src = frame.descriptors(src)
    desc_dst = frame.descriptors(dst)
    u = candidates[:, 0].astype(np.float64)
    v = candidates[:, 1].astype(np.float64)

    costs = _scan_costs(rig, src, dst, u, v, d_grid, desc_src, desc_dst)
    best_d, _ = _best_with_ratio(costs, d_grid)
    have = np.isfinite(best_d)
    if not have.any():
        return []

    # reverse match from the rounded landing pixel back into the source view
    iu = np.flatnonzero(have)
    pu, pv, _ = rig.warp_between(src, dst, u[iu], v[iu], best_d[iu])
    ru = np.rint(pu)
    rv = np.rint(pv)
    rcosts = _scan_costs(rig, dst, src, ru, rv, d_grid, desc_dst, desc_src)
    rbest, _ = _best_with_ratio(rcosts, d_grid)
    # disparities are per-view units; rescale through the focal ratio
    scale = rig.intrinsics(src).fx / rig.intrinsics(dst).fx
    agree = np.isfinite(rbest) & (np.abs(rbest * scale - best_d[iu]) <= LEFT_RIGHT_TOL)

    out = []
    for row in iu[agree]:
        out.append(SupportPoint(u=int(candidates[row, 0]), v=int(candidates[row, 1]),
                                d=float(best_d[row]), source_view=src))
    return out


def filter_dynamic(points, prob_map, threshold):
    """Keep support points whose own view calls them static (prob >= threshold)."""
    return [p for p in points if prob_map[p.v, p.u] >= threshold]


def reproject_occluded_support(points, rig, ref_prior, params, threshold):
    """Carry support seen in another view into occluded reference pixels.

    Points lift to 3D through their detection view, project into the
    reference, and survive only where the reference prior is below the
    threshold (the region a transient object covers), inside the image,
    with a disparity in (0, d_max].
    """
    out = []
    ref_intr = rig.intrinsics(rig.ref_index)
    h, w = ref_intr.height, ref_intr.width
    for p in points:
        if p.source_view == rig.ref_index:
            continue
        intr, extr = rig.cameras[p.source_view]
        depth = intr.fx * rig.unit_baseline / p.d
        xc = (p.u - intr.cx) / intr.fx * depth
        yc = (p.v - intr.cy) / intr.fy * depth
        cam = np.array([xc, yc, depth])
        world = extr.rotation.T @ (cam - extr.translation)
        if world[2] <= 0:
            continue
        ur = ref_intr.fx * world[0] / world[2] + ref_intr.cx
        vr = ref_intr.fy * world[1] / world[2] + ref_intr.cy
        iu = int(np.rint(ur))
        iv = int(np.rint(vr))
        if not (0 <= iu < w and 0 <= iv < h):
            continue
        if ref_prior[iv, iu] >= threshold:
            continue
        d_ref = ref_intr.fx * rig.unit_baseline / world[2]
        if not 0.0 < d_ref <= params.d_max:
            continue
        out.append(SupportPoint(u=iu, v=iv, d=float(d_ref), source_view=p.source_view))
    return out


def deduplicate(points, ref_index):
    """Resolve colocated and conflicting support points deterministically.

    At most one point survives per pixel.  Points are visited in priority
    order (reference-view origin first, then smaller disparity, then raster
    position); a point is dropped when its pixel is taken or when an
    already-accepted 8-neighbor disagrees by more than two disparity units.
    """
    ranked = sorted(points, key=lambda p: (p.source_view != ref_index, p.d, p.v, p.u))
    taken = {}
    accepted = []
    for p in ranked:
        key = (p.u, p.v)
        if key in taken:
            continue
        conflict = False
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                q = taken.get((p.u + du, p.v + dv))
                if q is not None and abs(q.d - p.d) > 2.0:
                    conflict = True
                    break
            if conflict:
                break
        if conflict:
            continue
        taken[key] = p
        accepted.append(p)
    accepted.sort(key=lambda p: (p.v, p.u, p.d))
    return accepted


def ring_min_prior(prob):
    """Minimum of the prior over a descriptor's sample footprint.

    A candidate whose center pixel looks static but whose descriptor ring
    touches a transient region matches on mixed texture and lands anywhere,
    so the dynamic filter has to consider every sampled offset.
    """
    h, w = prob.shape
    out = prob.copy()
    ys = np.arange(h)
    xs = np.arange(w)
    for du, dv in SAMPLE_OFFSETS:
        sy = np.clip(ys + dv, 0, h - 1)
        sx = np.clip(xs + du, 0, w - 1)
        np.minimum(out, prob[sy][:, sx], out)
    return out


def collect_support(frame, rig, params, threshold, stride=SUPPORT_STRIDE,
                    min_texture=MIN_TEXTURE):
    """Full support-point harvest for one frame.

    Reference-view candidates are matched against the nearest-baseline
    neighbor and filtered by the erosion of the view's prior over the
    descriptor footprint; every other view contributes reprojected support
    for reference pixels its prior marks transient.  The result is
    deduplicated and raster-sorted.
    """
    ref = rig.ref_index
    collected = []
    for view in range(len(rig)):
        cands = detect_support_candidates(frame.descriptors(view), stride, min_texture)
        if cands.shape[0] == 0:
            continue
        eroded = ring_min_prior(frame.priors[view])
        keep = eroded[cands[:, 1], cands[:, 0]] >= threshold
        cands = cands[keep]
        matched = match_support_points(frame, rig, view, rig.nearest_neighbor(view),
                                       cands, params)
        if view == ref:
            collected.extend(p for p in matched if p.d <= params.d_max)
        else:
            collected.extend(reproject_occluded_support(matched, rig,
                                                        frame.priors[ref],
                                                        params, threshold))
    return deduplicate(collected, ref)


# -- triangulation ------------------------------------------------------------

@dataclass
class TriangulationPrior:
    """Piecewise-linear disparity surface over the reference image."""

    points: np.ndarray        # (n, 2) float64 vertex coordinates (u, v)
    disparities: np.ndarray   # (n,) float64 per-vertex disparity
    triangles: np.ndarray     # (m, 3) int32 vertex indices
    planes: np.ndarray        # (m, 3): d(u, v) = a*u + b*v + c per triangle
    num_anchors: int          # trailing vertices that are corner anchors
    _lookup: Delaunay

    def interpolate(self, u, v):
        """Surface value at continuous reference coordinates.

        Points outside the triangulation hull (only possible off-image,
        since corner anchors pin the hull to the image rectangle) take the
        value of the nearest vertex.
        """
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        q = np.stack([u, v], axis=1)
        simplex = self._lookup.find_simplex(q)
        missing = simplex < 0
        if missing.any():
            # nudge toward the hull interior to absorb boundary round-off
            centroid = self.points.mean(axis=0)
            q2 = q[missing] + 1e-9 * (centroid - q[missing])
            simplex2 = self._lookup.find_simplex(q2)
            simplex[missing] = simplex2
            missing = simplex < 0
        out = np.empty(u.shape[0])
        ok = ~missing
        if ok.any():
            pl = self.planes[simplex[ok]]
            out[ok] = pl[:, 0] * u[ok] + pl[:, 1] * v[ok] + pl[:, 2]
        if missing.any():
            tree = cKDTree(self.points)
            _, nearest = tree.query(q[missing])
            out[missing] = self.disparities[nearest]
        return out

    def disparity_map(self, width, height):
        """Dense (h, w) float64 surface rasterization at pixel centers."""
        uu, vv = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
        return self.interpolate(uu.ravel(), vv.ravel()).reshape(height, width)

    def support_points(self):
        """Vertices that came from real matches (anchors excluded)."""
        n = self.points.shape[0] - self.num_anchors
        return self.points[:n], self.disparities[:n]


def triangulate(points, width, height):
    """Delaunay-triangulate support points plus four corner anchors.

    Corner anchors take the disparity of their nearest support point so the
    surface covers the whole image rectangle.  Raises ValueError for an
    empty or degenerate support set.
    """
    if not points:
        raise ValueError("degenerate support set: no support points")
    coords = np.array([[p.u, p.v] for p in points], dtype=np.float64)
    disps = np.array([p.d for p in points], dtype=np.float64)

    corners = np.array([[0.0, 0.0], [width - 1.0, 0.0],
                        [0.0, height - 1.0], [width - 1.0, height - 1.0]])
    occupied = {(int(c[0]), int(c[1])) for c in coords}
    missing = [c for c in corners if (int(c[0]), int(c[1])) not in occupied]
    if missing:
        tree = cKDTree(coords)
        anchors = np.array(missing)
        _, nearest = tree.query(anchors)
        coords = np.concatenate([coords, anchors])
        disps = np.concatenate([disps, disps[nearest]])
        num_anchors = len(missing)
    else:
        num_anchors = 0

    try:
        tri = Delaunay(coords)
    except QhullError as exc:
        raise ValueError(f"degenerate support set: {exc}") from None
    triangles = tri.simplices.astype(np.int32)

    # per-triangle plane through the three vertex disparities
    a = coords[triangles]                      # (m, 3, 2)
    mats = np.concatenate([a, np.ones((a.shape[0], 3, 1))], axis=2)
    rhs = disps[triangles]
    try:
        planes = np.linalg.solve(mats, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        raise ValueError("degenerate support set: zero-area triangle") from None

    return TriangulationPrior(points=coords, disparities=disps, triangles=triangles,
                              planes=planes, num_anchors=num_anchors, _lookup=tri)


# -- densities and candidate sets ----------------------------------------------

def prior_log_density(d, mu, params):
    """log(gamma + exp(-(d - mu)^2 / (2 sigma^2))): Gaussian with uniform floor."""
    d = np.asarray(d, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    z = (d - mu) / params.sigma
    return np.log(params.gamma + np.exp(-0.5 * z * z))


def candidate_disparities(mu, neighbor_disparities, params):
    """Disparity candidates examined at one pixel.

    Union of a half-unit-step band mu + j/2 for |j/2| <= 2 sigma, the
    disparities of nearby support points, and a coarse sweep 1, 5, 9, ...
    up to d_max; clipped to (0, d_max], deduplicated, ascending.
    """
    j_max = int(np.floor(2.0 * params.sigma / 0.5 + 1e-12))
    band = mu + 0.5 * np.arange(-j_max, j_max + 1)
    coarse = np.arange(1.0, params.d_max + 1e-9, 4.0)
    vals = np.concatenate([band, np.asarray(neighbor_disparities, dtype=np.float64).ravel(),
                           coarse])
    vals = vals[(vals > 0.0) & (vals <= params.d_max)]
    return np.unique(vals)


# -- debug dumps ---------------------------------------------------------------

def dump_support_csv(points, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("u,v,d,source_view\n")
        for p in points:
            fh.write(f"{p.u},{p.v},{p.d!r},{p.source_view}\n")


def dump_triangulation_obj(tri, path):
    """OBJ-style dump: vertices carry disparity as the z coordinate."""
    with open(path, "w", encoding="ascii") as fh:
        for (u, v), d in zip(tri.points, tri.disparities):
            fh.write(f"v {u!r} {v!r} {d!r}\n")
        for t in tri.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
