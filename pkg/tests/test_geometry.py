import numpy as np
import pytest

from seethrough.geometry import (CalibrationError, CameraExtrinsics,
                                 CameraIntrinsics, CameraRig, backproject,
                                 depth_to_disparity, disparity_to_depth,
                                 is_in_bounds, linear_rig, load_calibration,
                                 project, save_calibration)


def rodrigues(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rig(rng, num_cameras=4, max_angle_deg=5.0):
    intr = CameraIntrinsics(fx=float(rng.uniform(200, 600)),
                            fy=float(rng.uniform(200, 600)),
                            cx=float(rng.uniform(140, 180)),
                            cy=float(rng.uniform(100, 140)),
                            width=320, height=240)
    cams = [(intr, CameraExtrinsics.identity())]
    for _ in range(num_cameras - 1):
        angle = np.deg2rad(rng.uniform(0, max_angle_deg))
        r = rodrigues(rng.normal(size=3), angle)
        t = rng.uniform(-0.3, 0.3, size=3)
        cams.append((intr, CameraExtrinsics(r, t)))
    return CameraRig(cams, ref_index=0, unit_baseline=0.1)


def test_warp_matches_direct_projection():
    # independent route: lift the reference pixel to 3-d at the depth the
    # disparity encodes, push the point through the target camera's full
    # projection, compare against the precomputed warp
    rng = np.random.default_rng(7)
    for _ in range(50):
        rig = random_rig(rng)
        intr = rig.intrinsics(0)
        u = rng.uniform(5, intr.width - 5, size=20)
        v = rng.uniform(5, intr.height - 5, size=20)
        z = rng.uniform(2.0, 20.0, size=20)
        d = depth_to_disparity(z, rig)
        pts = backproject(intr, u, v, z)
        for k in range(len(rig)):
            pu, pv, pz = project(rig.intrinsics(k), rig.extrinsics(k), pts)
            wu, wv, ok = rig.warp(u, v, d, k)
            front = pz > 0
            assert ok[front].all()
            assert np.abs(wu[front] - pu[front]).max() < 1e-6
            assert np.abs(wv[front] - pv[front]).max() < 1e-6


def test_reference_view_warp_is_identity():
    rng = np.random.default_rng(8)
    rig = random_rig(rng)
    u = rng.uniform(0, 319, size=50)
    v = rng.uniform(0, 239, size=50)
    d = rng.uniform(0.5, 64, size=50)
    wu, wv, ok = rig.warp(u, v, d, 0)
    assert ok.all()
    assert np.array_equal(wu, u)
    assert np.array_equal(wv, v)


def test_linear_rig_shift_law():
    # rectified cameras at x = k * spacing shift content left by k * d
    intr = CameraIntrinsics(fx=320.0, fy=320.0, cx=159.5, cy=119.5, width=320, height=240)
    rig = linear_rig(5, 0.1, intr)
    rng = np.random.default_rng(9)
    u = rng.uniform(0, 319, size=30)
    v = rng.uniform(0, 239, size=30)
    d = rng.uniform(0.5, 60, size=30)
    for k in range(5):
        wu, wv, ok = rig.warp(u, v, d, k)
        assert ok.all()
        assert np.abs(wu - (u - k * d)).max() < 1e-9
        assert np.abs(wv - v).max() < 1e-9


def test_linear_rig_nonzero_reference():
    intr = CameraIntrinsics(fx=320.0, fy=320.0, cx=159.5, cy=119.5, width=320, height=240)
    rig = linear_rig(5, 0.1, intr, ref_index=2)
    assert rig.extrinsics(2).is_identity()
    wu, wv, ok = rig.warp(100.0, 50.0, 10.0, 4)
    assert abs(wu - (100.0 - 2 * 10.0)) < 1e-9
    wu, wv, ok = rig.warp(100.0, 50.0, 10.0, 0)
    assert abs(wu - (100.0 + 2 * 10.0)) < 1e-9


def test_warp_flags_points_behind_camera():
    # a camera turned around sees nothing in front of the reference
    intr = CameraIntrinsics(fx=320.0, fy=320.0, cx=159.5, cy=119.5, width=320, height=240)
    flipped = rodrigues([0.0, 1.0, 0.0], np.pi)
    cams = [(intr, CameraExtrinsics.identity()),
            (intr, CameraExtrinsics(flipped, np.array([0.1, 0.0, 0.0])))]
    rig = CameraRig(cams, unit_baseline=0.1)
    _, _, ok = rig.warp(159.5, 119.5, 5.0, 1)
    assert not ok


def test_pair_warp_matches_projection_chain():
    rng = np.random.default_rng(10)
    for _ in range(20):
        rig = random_rig(rng)
        intr0 = rig.intrinsics(0)
        u = rng.uniform(20, intr0.width - 20, size=10)
        v = rng.uniform(20, intr0.height - 20, size=10)
        z = rng.uniform(3.0, 15.0, size=10)
        pts = backproject(intr0, u, v, z)
        src, dst = 1, 3
        su, sv, sz = project(rig.intrinsics(src), rig.extrinsics(src), pts)
        keep = sz > 0
        d_src = rig.intrinsics(src).fx * rig.unit_baseline / sz[keep]
        du, dv, dz = project(rig.intrinsics(dst), rig.extrinsics(dst), pts[keep])
        wu, wv, ok = rig.warp_between(src, dst, su[keep], sv[keep], d_src)
        front = dz > 0
        assert np.abs(wu[front] - du[front]).max() < 1e-6
        assert np.abs(wv[front] - dv[front]).max() < 1e-6


def test_pair_warp_same_view_is_identity():
    rng = np.random.default_rng(11)
    rig = random_rig(rng)
    a, b = rig.pair_warp_coefficients(2, 2)
    assert np.array_equal(a, np.eye(3))
    assert np.array_equal(b, np.zeros(3))


def test_disparity_depth_roundtrip():
    intr = CameraIntrinsics(fx=320.0, fy=320.0, cx=159.5, cy=119.5, width=320, height=240)
    rig = linear_rig(3, 0.1, intr)
    d = np.array([0.25, 1.0, 8.0, 64.0])
    z = disparity_to_depth(d, rig)
    assert np.allclose(depth_to_disparity(z, rig), d, rtol=0, atol=1e-12)
    assert abs(disparity_to_depth(np.array([32.0]), rig)[0] - 320.0 * 0.1 / 32.0) < 1e-12
    with pytest.raises(ValueError):
        disparity_to_depth(np.array([0.0]), rig)
    with pytest.raises(ValueError):
        depth_to_disparity(np.array([-1.0]), rig)


def test_backproject_project_roundtrip():
    intr = CameraIntrinsics(fx=250.0, fy=260.0, cx=100.0, cy=80.0, width=200, height=160)
    rng = np.random.default_rng(12)
    u = rng.uniform(0, 199, size=40)
    v = rng.uniform(0, 159, size=40)
    z = rng.uniform(0.5, 30, size=40)
    pts = backproject(intr, u, v, z)
    pu, pv, pz = project(intr, CameraExtrinsics.identity(), pts)
    assert np.abs(pu - u).max() < 1e-9
    assert np.abs(pv - v).max() < 1e-9
    assert np.abs(pz - z).max() < 1e-12


def test_is_in_bounds_margin():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=100, height=80)
    u = np.array([0.0, 2.9, 3.0, 96.9, 97.0, 99.0])
    v = np.full_like(u, 40.0)
    got = is_in_bounds(u, v, intr, margin=3)
    assert got.tolist() == [False, False, True, True, False, False]


def test_rig_validation():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=100, height=80)
    with pytest.raises(ValueError, match="two cameras"):
        CameraRig([(intr, CameraExtrinsics.identity())])
    shifted = CameraExtrinsics(np.eye(3), np.array([0.1, 0.0, 0.0]))
    with pytest.raises(ValueError, match="identity"):
        CameraRig([(intr, shifted), (intr, CameraExtrinsics.identity())], ref_index=0)
    with pytest.raises(ValueError, match="orthonormal"):
        CameraExtrinsics(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError, match="determinant"):
        CameraExtrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_default_unit_baseline_is_nearest_neighbor():
    intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=100, height=80)
    cams = [(intr, CameraExtrinsics.identity()),
            (intr, CameraExtrinsics(np.eye(3), np.array([-0.4, 0.0, 0.0]))),
            (intr, CameraExtrinsics(np.eye(3), np.array([-0.15, 0.0, 0.0])))]
    rig = CameraRig(cams)
    assert abs(rig.unit_baseline - 0.15) < 1e-12
    assert abs(rig.baseline(1) - 0.4) < 1e-12
    assert rig.nearest_neighbor(0) == 2
    assert rig.nearest_neighbor(1) == 2


def _write(path, text):
    path.write_text(text, encoding="ascii")
    return path


GOOD_CALIB = """# two rectified cameras
ref_index 0
unit_baseline 0.1
camera
fx 320.0
fy 320.0
cx 159.5
cy 119.5
width 320
height 240
rotation 1 0 0 0 1 0 0 0 1
translation 0 0 0
camera
fx 320.0
fy 320.0
cx 159.5
cy 119.5
width 320
height 240
rotation 1 0 0 0 1 0 0 0 1
translation -0.1 0 0
"""


def test_load_calibration_basic(tmp_path):
    rig = load_calibration(_write(tmp_path / "c.txt", GOOD_CALIB))
    assert len(rig) == 2
    assert rig.ref_index == 0
    assert rig.unit_baseline == 0.1
    wu, _, _ = rig.warp(100.0, 50.0, 7.0, 1)
    assert abs(wu - 93.0) < 1e-9


def test_calibration_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(13)
    rig = random_rig(rng, num_cameras=3)
    p = tmp_path / "rig.txt"
    save_calibration(rig, p)
    back = load_calibration(p)
    assert back.unit_baseline == rig.unit_baseline
    for k in range(3):
        assert back.intrinsics(k) == rig.intrinsics(k)
        a0, b0 = rig.warp_coefficients(k)
        a1, b1 = back.warp_coefficients(k)
        assert np.abs(a1 - a0).max() < 1e-12
        assert np.abs(b1 - b0).max() < 1e-12
    # general rotations get resnapped on load, so exact text stability is
    # only promised for rigs whose rotations are exactly orthonormal
    intr = CameraIntrinsics(fx=320.0, fy=320.0, cx=159.5, cy=119.5, width=320, height=240)
    lin = linear_rig(4, 0.1, intr)
    pa, pb = tmp_path / "lin_a.txt", tmp_path / "lin_b.txt"
    save_calibration(lin, pa)
    save_calibration(load_calibration(pa), pb)
    assert pa.read_text() == pb.read_text()


def test_load_calibration_rebases_onto_reference(tmp_path):
    # both cameras share a rigid offset in the file; after loading, the
    # reference must be identity and the relative pose preserved
    r = rodrigues([0.0, 0.0, 1.0], 0.3)
    lines = ["ref_index 0", "unit_baseline 0.1"]
    for t in ([0.5, 0.2, 0.1], [0.4, 0.2, 0.1]):
        lines += ["camera", "fx 320.0", "fy 320.0", "cx 159.5", "cy 119.5",
                  "width 320", "height 240",
                  "rotation " + " ".join(repr(float(x)) for x in r.ravel()),
                  "translation " + " ".join(repr(float(x)) for x in t)]
    rig = load_calibration(_write(tmp_path / "c.txt", "\n".join(lines) + "\n"))
    assert rig.extrinsics(0).is_identity(tol=1e-9)
    rel = rig.extrinsics(1)
    assert np.abs(rel.rotation - np.eye(3)).max() < 1e-9
    assert np.allclose(rel.translation, [-0.1, 0.0, 0.0], atol=1e-9)


def test_load_calibration_ref_index_override(tmp_path):
    rig = load_calibration(_write(tmp_path / "c.txt", GOOD_CALIB), ref_index=1)
    assert rig.ref_index == 1
    assert rig.extrinsics(1).is_identity(tol=1e-9)
    assert np.allclose(rig.extrinsics(0).translation, [0.1, 0.0, 0.0], atol=1e-12)


def test_load_calibration_snaps_slightly_noisy_rotation(tmp_path):
    r = rodrigues([1.0, 2.0, 3.0], 0.2) + 3e-7
    lines = ["camera", "fx 320.0", "fy 320.0", "cx 159.5", "cy 119.5",
             "width 320", "height 240",
             "rotation 1 0 0 0 1 0 0 0 1", "translation 0 0 0",
             "camera", "fx 320.0", "fy 320.0", "cx 159.5", "cy 119.5",
             "width 320", "height 240",
             "rotation " + " ".join(repr(float(x)) for x in r.ravel()),
             "translation -0.1 0 0"]
    rig = load_calibration(_write(tmp_path / "c.txt", "\n".join(lines) + "\n"))
    got = rig.extrinsics(1).rotation
    assert np.abs(got.T @ got - np.eye(3)).max() < 1e-12


@pytest.mark.parametrize("text,lineno,needle", [
    ("camera\nfx 320\nbogus 1\n", 3, "unknown field"),
    ("fx 320\n", 1, "before any camera"),
    ("camera\nrotation 1 0 0\n", 2, "takes 9"),
    ("camera\nfx abc\n", 2, "non-numeric"),
    ("ref_index 0 0\n", 1, "one value"),
    ("camera\nfx 320.0\nfy 320.0\ncx 1\ncy 1\nwidth 8\nheight 8\n"
     "rotation 2 0 0 0 2 0 0 0 2\ntranslation 0 0 0\n", 8, "orthonormal"),
])
def test_load_calibration_errors_carry_line_numbers(tmp_path, text, lineno, needle):
    with pytest.raises(CalibrationError) as exc:
        load_calibration(_write(tmp_path / "bad.txt", text))
    assert f"line {lineno}" in str(exc.value)
    assert needle in str(exc.value)


def test_load_calibration_missing_field_and_empty(tmp_path):
    with pytest.raises(CalibrationError, match="missing field"):
        load_calibration(_write(tmp_path / "m.txt", "camera\nfx 320.0\n"))
    with pytest.raises(CalibrationError, match="no camera records"):
        load_calibration(_write(tmp_path / "e.txt", "# nothing here\n"))
    bad_ref = GOOD_CALIB.replace("ref_index 0", "ref_index 5")
    with pytest.raises(CalibrationError, match="out of range"):
        load_calibration(_write(tmp_path / "r.txt", bad_ref))
    bad_base = GOOD_CALIB.replace("unit_baseline 0.1", "unit_baseline -1")
    with pytest.raises(CalibrationError, match="positive"):
        load_calibration(_write(tmp_path / "b.txt", bad_base))
