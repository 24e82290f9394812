"""Pinhole cameras, the rig model, and disparity-parameterized warps.

Conventions used throughout the package:

- Pixel coordinates (u, v) are continuous; integer values land on sample
  centers.  u runs along image width, v along height.
- Extrinsics map reference-frame points into a camera's frame:
  ``X_cam = R @ X_ref + t``.  The reference camera therefore has identity
  rotation and zero translation, and the world frame is its camera frame.
- Disparity d of a reference pixel encodes metric depth through the rig's
  unit baseline: ``Z = fx_ref * unit_baseline / d``.  Fractional values are
  meaningful for cameras whose physical baseline differs from the unit.

Warping a reference pixel into view k at disparity d reduces to one
homography whose translation part scales linearly with d:

    h = A_k @ (u, v, 1) + d * b_k,     x_k = (h0 / h2, h1 / h2)

with A_k = K_k R_k K_ref^-1 and b_k = K_k t_k / (fx_ref * unit_baseline).
That is eight multiply-adds per pixel; the coefficients are precomputed
when the rig is built.
"""

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-9
PARSE_ROTATION_TOL = 1e-6


class CalibrationError(ValueError):
    """Raised for malformed calibration files; message carries a line number."""


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def inverse_matrix(self):
        # analytic inverse keeps the third row exactly (0, 0, 1)
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])


@dataclass
class CameraExtrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (error {err:.3e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation must be proper (determinant +1)")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def is_identity(self, tol=1e-12):
        return (np.abs(self.rotation - np.eye(3)).max() <= tol
                and np.abs(self.translation).max() <= tol)


def project(intrinsics, extrinsics, points):
    """Project (n, 3) reference-frame points into a camera.

    Returns (u, v, z) where z is the depth in the camera frame; callers
    decide what to do with points at or behind the principal plane.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ extrinsics.rotation.T + extrinsics.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return u, v, z


def backproject(intrinsics, u, v, depth):
    """Lift pixels at the given camera-frame depth to (n, 3) camera-frame points."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.broadcast_to(np.asarray(depth, dtype=np.float64), u.shape)
    x = (u - intrinsics.cx) / intrinsics.fx * z
    y = (v - intrinsics.cy) / intrinsics.fy * z
    return np.stack([x, y, np.array(z, copy=True)], axis=-1)


def is_in_bounds(u, v, intrinsics, margin=0.0):
    """True where margin <= u < width - margin and likewise for v."""
    u = np.asarray(u)
    v = np.asarray(v)
    return ((u >= margin) & (u < intrinsics.width - margin)
            & (v >= margin) & (v < intrinsics.height - margin))


@dataclass
class CameraRig:
    """A calibrated multi-camera rig with one distinguished reference view.

    unit_baseline defaults to the distance between the reference camera and
    its nearest neighbor, so that a disparity of d means "d pixels of shift
    per unit baseline" on a rectified pair.
    """

    cameras: list
    ref_index: int = 0
    unit_baseline: float = None
    _warp_a: np.ndarray = field(init=False, repr=False, default=None)
    _warp_b: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        k = len(self.cameras)
        if k < 2:
            raise ValueError("a rig needs at least two cameras")
        if not 0 <= self.ref_index < k:
            raise ValueError("ref_index out of range")
        ref = self.cameras[self.ref_index][1]
        if not ref.is_identity(tol=1e-9):
            raise ValueError("reference camera extrinsics must be identity")
        centers = np.stack([self.camera_center(i) for i in range(k)])
        dist = np.linalg.norm(centers - centers[self.ref_index], axis=1)
        if self.unit_baseline is None:
            others = np.delete(dist, self.ref_index)
            self.unit_baseline = float(others.min())
        if self.unit_baseline <= 0:
            raise ValueError("unit_baseline must be positive")
        self._centers = centers
        self._distances = dist
        self._precompute()

    # -- construction helpers -------------------------------------------------

    def _precompute(self):
        ref_intr = self.intrinsics(self.ref_index)
        kinv = ref_intr.inverse_matrix()
        scale = ref_intr.fx * self.unit_baseline
        a = np.empty((len(self.cameras), 3, 3))
        b = np.empty((len(self.cameras), 3))
        for i, (intr, extr) in enumerate(self.cameras):
            if i == self.ref_index:
                # set exactly so the reference warp is the identity map
                a[i] = np.eye(3)
                b[i] = 0.0
            else:
                km = intr.matrix()
                a[i] = km @ extr.rotation @ kinv
                b[i] = km @ extr.translation / scale
        self._warp_a = a
        self._warp_b = b

    def __len__(self):
        return len(self.cameras)

    def intrinsics(self, k):
        return self.cameras[k][0]

    def extrinsics(self, k):
        return self.cameras[k][1]

    def camera_center(self, k):
        intr, extr = self.cameras[k]
        return -extr.rotation.T @ extr.translation

    def baseline(self, k):
        """Distance between camera k's center and the reference center."""
        return float(self._distances[k])

    def nearest_neighbor(self, k):
        """Index of the camera closest to camera k (ties -> lower index)."""
        centers = self._centers
        d = np.linalg.norm(centers - centers[k], axis=1)
        d[k] = np.inf
        return int(np.argmin(d))

    # -- warps ----------------------------------------------------------------

    def warp_coefficients(self, k):
        """(A, b) such that the homogeneous warp is A @ (u, v, 1) + d * b."""
        return self._warp_a[k], self._warp_b[k]

    def warp(self, u, v, d, k):
        """Map reference pixels (u, v) at disparity d into view k.

        Returns (u_k, v_k, valid) where valid is False for rays that land
        behind camera k.  The reference view maps to itself exactly.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        a, b = self._warp_a[k], self._warp_b[k]
        hx = a[0, 0] * u + a[0, 1] * v + a[0, 2] + d * b[0]
        hy = a[1, 0] * u + a[1, 1] * v + a[1, 2] + d * b[1]
        hz = a[2, 0] * u + a[2, 1] * v + a[2, 2] + d * b[2]
        valid = hz > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            return hx / hz, hy / hz, valid

    def pair_warp_coefficients(self, src, dst):
        """Warp coefficients from view src into view dst.

        Disparity is expressed in source-view units: a source pixel with
        disparity d sits at depth fx_src * unit_baseline / d in the source
        camera frame.  For (ref -> k) this equals warp_coefficients(k).
        """
        intr_s, extr_s = self.cameras[src]
        intr_d, extr_d = self.cameras[dst]
        if src == self.ref_index:
            return self.warp_coefficients(dst)
        rel_r = extr_d.rotation @ extr_s.rotation.T
        rel_t = extr_d.translation - rel_r @ extr_s.translation
        km = intr_d.matrix()
        a = km @ rel_r @ intr_s.inverse_matrix()
        b = km @ rel_t / (intr_s.fx * self.unit_baseline)
        if src == dst:
            a = np.eye(3)
            b = np.zeros(3)
        return a, b

    def warp_between(self, src, dst, u, v, d):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64)
        a, b = self.pair_warp_coefficients(src, dst)
        hx = a[0, 0] * u + a[0, 1] * v + a[0, 2] + d * b[0]
        hy = a[1, 0] * u + a[1, 1] * v + a[1, 2] + d * b[1]
        hz = a[2, 0] * u + a[2, 1] * v + a[2, 2] + d * b[2]
        valid = hz > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            return hx / hz, hy / hz, valid


def disparity_to_depth(d, rig):
    """Depth along the reference optical axis for a reference-view disparity."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("non-positive disparity has no depth")
    fx = rig.intrinsics(rig.ref_index).fx
    return fx * rig.unit_baseline / d


def depth_to_disparity(z, rig):
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("non-positive depth has no disparity")
    fx = rig.intrinsics(rig.ref_index).fx
    return fx * rig.unit_baseline / z


def linear_rig(num_cameras, spacing, intrinsics, ref_index=0):
    """Build a rectified linear rig: camera i sits at x = i * spacing.

    All cameras share the given intrinsics and look along +z.  A camera at
    position p has translation -p (reference-to-camera), so points shift
    left in views to the right of the reference.
    """
    if num_cameras < 2:
        raise ValueError("a rig needs at least two cameras")
    cams = []
    ref_x = ref_index * spacing
    for i in range(num_cameras):
        t = np.array([ref_x - i * spacing, 0.0, 0.0])
        cams.append((intrinsics, CameraExtrinsics(np.eye(3), t)))
    return CameraRig(cams, ref_index=ref_index, unit_baseline=abs(spacing))


# -- calibration files --------------------------------------------------------
#
# Line-oriented text, one field per line, '#' starts a comment:
#
#     ref_index 0
#     unit_baseline 0.1
#     camera
#     fx 320.0
#     fy 320.0
#     cx 159.5
#     cy 119.5
#     width 320
#     height 240
#     rotation 1 0 0 0 1 0 0 0 1     (row-major)
#     translation 0.0 0.0 0.0        (meters, reference-to-camera)
#     camera
#     ...
#
# Rotations within 1e-6 of orthonormal are accepted and snapped to the
# nearest rotation matrix; anything worse is rejected with the offending
# line number.  Poses are rebased onto the selected reference camera, so a
# file whose reference pose is not exactly identity still loads.

_CAMERA_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "rotation", "translation")


def _snap_rotation(r, lineno):
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > PARSE_ROTATION_TOL:
        raise CalibrationError(f"line {lineno}: rotation is not orthonormal (error {err:.3e})")
    u, _, vt = np.linalg.svd(r)
    snapped = u @ vt
    if np.linalg.det(snapped) < 0:
        raise CalibrationError(f"line {lineno}: rotation must be proper (determinant +1)")
    return snapped


def load_calibration(path, ref_index=None):
    """Parse a calibration file into a CameraRig.

    ref_index overrides the file's reference selection; poses are rebased
    onto whichever camera ends up as the reference.
    """
    records = []
    current = None
    rig_fields = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            key, vals = parts[0], parts[1:]
            if key == "camera":
                current = {"_line": lineno}
                records.append(current)
                continue
            if key in ("ref_index", "unit_baseline"):
                if len(vals) != 1:
                    raise CalibrationError(f"line {lineno}: {key} takes one value")
                rig_fields[key] = (lineno, vals[0])
                continue
            if current is None:
                raise CalibrationError(f"line {lineno}: field {key!r} before any camera record")
            if key not in _CAMERA_FIELDS:
                raise CalibrationError(f"line {lineno}: unknown field {key!r}")
            want = 9 if key == "rotation" else 3 if key == "translation" else 1
            if len(vals) != want:
                raise CalibrationError(f"line {lineno}: {key} takes {want} value(s), got {len(vals)}")
            try:
                nums = [float(x) for x in vals]
            except ValueError:
                raise CalibrationError(f"line {lineno}: non-numeric value in {key}") from None
            current[key] = (lineno, nums)
    if not records:
        raise CalibrationError("line 0: no camera records found")

    cameras = []
    for rec in records:
        for name in _CAMERA_FIELDS:
            if name not in rec:
                raise CalibrationError(f"line {rec['_line']}: camera record missing field {name!r}")
        lineno, rot = rec["rotation"]
        r = _snap_rotation(np.array(rot).reshape(3, 3), lineno)
        t = np.array(rec["translation"][1])
        intr = CameraIntrinsics(fx=rec["fx"][1][0], fy=rec["fy"][1][0],
                                cx=rec["cx"][1][0], cy=rec["cy"][1][0],
                                width=int(rec["width"][1][0]), height=int(rec["height"][1][0]))
        cameras.append((intr, r, t))

    if ref_index is None:
        ref_index = int(rig_fields["ref_index"][1]) if "ref_index" in rig_fields else 0
    if not 0 <= ref_index < len(cameras):
        raise CalibrationError(f"reference index {ref_index} out of range for {len(cameras)} cameras")

    # rebase every pose onto the reference camera
    r0, t0 = cameras[ref_index][1], cameras[ref_index][2]
    rebased = []
    for i, (intr, r, t) in enumerate(cameras):
        if i == ref_index:
            rebased.append((intr, CameraExtrinsics.identity()))
        else:
            rel_r = _snap_rotation(r @ r0.T, records[i]["_line"])
            rel_t = t - rel_r @ t0
            rebased.append((intr, CameraExtrinsics(rel_r, rel_t)))

    unit_baseline = None
    if "unit_baseline" in rig_fields:
        lineno, val = rig_fields["unit_baseline"]
        try:
            unit_baseline = float(val)
        except ValueError:
            raise CalibrationError(f"line {lineno}: non-numeric unit_baseline") from None
        if unit_baseline <= 0:
            raise CalibrationError(f"line {lineno}: unit_baseline must be positive")
    return CameraRig(rebased, ref_index=ref_index, unit_baseline=unit_baseline)


def save_calibration(rig, path):
    def num(x):
        return repr(float(x))

    lines = ["# camera rig calibration",
             f"ref_index {rig.ref_index}",
             f"unit_baseline {num(rig.unit_baseline)}"]
    for intr, extr in rig.cameras:
        lines.append("camera")
        lines.append(f"fx {num(intr.fx)}")
        lines.append(f"fy {num(intr.fy)}")
        lines.append(f"cx {num(intr.cx)}")
        lines.append(f"cy {num(intr.cy)}")
        lines.append(f"width {intr.width}")
        lines.append(f"height {intr.height}")
        lines.append("rotation " + " ".join(num(x) for x in extr.rotation.ravel()))
        lines.append("translation " + " ".join(num(x) for x in extr.translation))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
