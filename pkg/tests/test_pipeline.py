import os

import numpy as np
import pytest

from seethrough import cli, pnm
from seethrough.pipeline import (DISPARITY_SCALE, PipelineError, _read_em_stats,
                                 load_frame_dir, parse_config, resolve_params,
                                 run_evaluate, run_reconstruct, run_synth)

SMALL_SCENE = """# small test scene
width 96
height 72
focal 150.0
cameras 4
spacing 0.1
seed 9
p_flip 0.08
blur_radius 1
plane depth=5.0 seed=10 amplitude=55.0 frequency=4.0
occluder depth=0.5 width=0.08 height=0.08 seed=11
"""


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("scene") / "scene.txt"
    p.write_text(SMALL_SCENE, encoding="ascii")
    return str(p)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory, scene_file):
    out = str(tmp_path_factory.mktemp("frames"))
    run_synth(out, scene=scene_file)
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, synth_dir):
    out = str(tmp_path_factory.mktemp("run"))
    run_reconstruct(os.path.join(synth_dir, "calib.txt"), synth_dir, out)
    return out


def read_bytes(d, name):
    with open(os.path.join(d, name), "rb") as fh:
        return fh.read()


def test_parse_config(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("# comment\nsigma = 1.5\nmax_iters=3\ndynamic_only = yes\n")
    got = parse_config(str(p))
    assert got == {"sigma": 1.5, "max_iters": 3, "dynamic_only": True}


@pytest.mark.parametrize("text,needle", [
    ("sigma 1.5\n", "expected key = value"),
    ("teapots = 2\n", "unknown option"),
    ("sigma = abc\n", "bad value"),
    ("dynamic_only = maybe\n", "bad value"),
])
def test_parse_config_errors(tmp_path, text, needle):
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    with pytest.raises(PipelineError) as exc:
        parse_config(str(p))
    assert f"{p}:1" in str(exc.value)
    assert needle in str(exc.value)


def test_resolve_params():
    solver, prior, med, dyn = resolve_params({})
    assert solver.max_iters == 5 and prior.sigma == 2.0
    assert med == 1 and dyn is False
    solver, prior, med, dyn = resolve_params(
        {"beta": 0.001, "sigma": 3.0, "median_radius": 2, "dynamic_only": True})
    assert solver.beta == 0.001 and prior.sigma == 3.0
    assert med == 2 and dyn is True
    with pytest.raises(PipelineError, match="unknown options"):
        resolve_params({"bogus": 1})
    with pytest.raises(PipelineError, match="median_radius"):
        resolve_params({"median_radius": -1})


def test_synth_writes_complete_directory(synth_dir):
    names = {"calib.txt", "scene.txt", "gt_disparity.pgm", "gt_background.ppm",
             "disparity_scale.txt"}
    for k in range(4):
        names |= {f"view_{k:02d}.ppm", f"prior_{k:02d}.pgm", f"gt_mask_{k:02d}.pgm"}
    assert names <= set(os.listdir(synth_dir))
    disp = pnm.read_pnm(os.path.join(synth_dir, "gt_disparity.pgm"))
    assert disp.dtype == np.uint16
    # background plane at depth 5 with focal 150 and baseline 0.1
    assert abs(disp.astype(float).mean() / DISPARITY_SCALE - 3.0) < 0.01
    scale = int(open(os.path.join(synth_dir, "disparity_scale.txt")).read())
    assert scale == int(DISPARITY_SCALE)


def test_synth_is_deterministic_and_seed_sensitive(tmp_path, scene_file, synth_dir):
    again = tmp_path / "again"
    run_synth(str(again), scene=scene_file)
    for name in sorted(os.listdir(synth_dir)):
        assert read_bytes(synth_dir, name) == read_bytes(str(again), name), name
    reseeded = tmp_path / "reseeded"
    run_synth(str(reseeded), scene=scene_file, seed=1234)
    # the scene seed drives prior corruption, the textures have their own
    assert (read_bytes(synth_dir, "prior_00.pgm")
            != read_bytes(str(reseeded), "prior_00.pgm"))
    assert (read_bytes(synth_dir, "view_00.ppm")
            == read_bytes(str(reseeded), "view_00.ppm"))


def test_synth_argument_validation(tmp_path, scene_file):
    with pytest.raises(PipelineError, match="exactly one"):
        run_synth(str(tmp_path / "x"))
    with pytest.raises(PipelineError, match="exactly one"):
        run_synth(str(tmp_path / "x"), scene=scene_file, preset="occluder")
    with pytest.raises(PipelineError, match="unknown preset"):
        run_synth(str(tmp_path / "x"), preset="bogus")
    bad = tmp_path / "bad_scene.txt"
    bad.write_text("width 10\n")
    with pytest.raises(PipelineError, match="at least one background plane"):
        run_synth(str(tmp_path / "x"), scene=str(bad))


def test_frame_dir_validation(tmp_path, synth_dir):
    from seethrough.geometry import load_calibration
    rig = load_calibration(os.path.join(synth_dir, "calib.txt"))
    with pytest.raises(PipelineError, match="view 0: missing image"):
        load_frame_dir(rig, str(tmp_path))
    # dimension mismatch against the calibration
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(synth_dir, broken)
    img = pnm.read_pnm(os.path.join(synth_dir, "view_01.ppm"))
    pnm.write_ppm(str(broken / "view_01.ppm"), img[:-2])
    with pytest.raises(PipelineError, match=r"view 1: image is 96x70.*says 96x72"):
        load_frame_dir(rig, str(broken))
    # prior that is not even grayscale
    pnm.write_ppm(str(broken / "view_01.ppm"), img)
    pnm.write_ppm(str(broken / "prior_01.pgm"), img)
    with pytest.raises(PipelineError, match="view 1.*not grayscale"):
        load_frame_dir(rig, str(broken))


def test_reconstruct_artifacts_and_accuracy(synth_dir, run_dir):
    names = {"disparity.pgm", "disparity_scale.txt", "refocused.ppm",
             "provenance.pgm", "status.pgm", "n_rays.pgm", "config_used.txt",
             "em_stats.txt", "timings.txt"}
    for k in range(4):
        names |= {f"seg_{k:02d}.pgm", f"valid_{k:02d}.pgm"}
    assert names <= set(os.listdir(run_dir))

    # the coded disparity reproduces the float values to half a code unit
    disp = pnm.read_pnm(os.path.join(run_dir, "disparity.pgm"))
    gt = pnm.read_pnm(os.path.join(synth_dir, "gt_disparity.pgm"))
    status = pnm.read_pnm(os.path.join(run_dir, "status.pgm"))
    ok = status == 0
    err = np.abs(disp[ok].astype(float) - gt[ok].astype(float)) / DISPARITY_SCALE
    assert float(np.mean(err)) < 0.5

    stats = _read_em_stats(os.path.join(run_dir, "em_stats.txt"))
    assert stats["iterations_run"] >= 1
    assert len(stats["mean_energy"]) == stats["iterations_run"]


def test_reconstruct_determinism_across_thread_hints(tmp_path, synth_dir, run_dir):
    other = tmp_path / "threads8"
    run_reconstruct(os.path.join(synth_dir, "calib.txt"), synth_dir, str(other),
                    threads=8)
    for name in sorted(os.listdir(run_dir)):
        if name == "timings.txt":
            continue
        assert read_bytes(run_dir, name) == read_bytes(str(other), name), name


def test_reconstruct_config_overrides(tmp_path, synth_dir, run_dir):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("median_radius = 0\n")
    out = tmp_path / "nomedian"
    run_reconstruct(os.path.join(synth_dir, "calib.txt"), synth_dir, str(out),
                    config=str(cfg))
    used = dict(l.split(" = ") for l in
                open(out / "config_used.txt").read().strip().splitlines())
    assert used["median_radius"] == "0"
    assert (read_bytes(run_dir, "refocused.ppm")
            != read_bytes(str(out), "refocused.ppm"))
    # disparity itself is untouched by the cleanup radius
    assert (read_bytes(run_dir, "disparity.pgm")
            == read_bytes(str(out), "disparity.pgm"))


def test_reconstruct_dynamic_only_copies_static_pixels(tmp_path, synth_dir):
    out = tmp_path / "dyn"
    run_reconstruct(os.path.join(synth_dir, "calib.txt"), synth_dir, str(out),
                    dynamic_only=True)
    prov = pnm.read_pnm(os.path.join(str(out), "provenance.pgm"))
    prior = pnm.read_pnm(os.path.join(synth_dir, "prior_00.pgm"))
    static = prior.astype(np.float32) / 255.0 >= 0.7
    assert (prov[static] == 128).all()
    assert (prov[~static] != 128).all()


def test_reconstruct_error_paths(tmp_path, synth_dir):
    with pytest.raises(PipelineError, match="calibration"):
        run_reconstruct(str(tmp_path / "none.txt"), synth_dir, str(tmp_path / "o"))
    bad_cfg = tmp_path / "bad.txt"
    bad_cfg.write_text("sigma = -\n")
    with pytest.raises(PipelineError, match="bad value"):
        run_reconstruct(os.path.join(synth_dir, "calib.txt"), synth_dir,
                        str(tmp_path / "o"), config=str(bad_cfg))


def test_evaluate_report(synth_dir, run_dir, tmp_path):
    report = run_evaluate(run_dir, synth_dir)
    assert report["disparity_mae"] < 0.5
    assert report["disparity_bad1"] < 0.1
    assert 0.0 <= report["refocus_rmse"] < 0.1
    assert report["refocus_refocused_frac"] > 0.5
    assert 0.0 <= report["seg_accuracy_before"] <= 1.0
    assert report["seg_accuracy_after"] > 0.9
    assert report["iterations_run"] >= 1
    # the written report parses back to the same values
    text = open(os.path.join(run_dir, "report.txt")).read()
    parsed = dict(l.split(" = ") for l in text.strip().splitlines())
    assert abs(float(parsed["disparity_mae"]) - report["disparity_mae"]) < 1e-6
    assert set(parsed) == set(report)
    # missing artifacts are reported by path
    with pytest.raises(PipelineError, match="missing artifact"):
        run_evaluate(str(tmp_path), synth_dir)


def test_cli_round_trip(tmp_path, scene_file, capsys):
    frames = str(tmp_path / "frames")
    out = str(tmp_path / "out")
    assert cli.main(["synth", "--scene", scene_file, "--out", frames]) == 0
    assert cli.main(["reconstruct", "--calib", os.path.join(frames, "calib.txt"),
                     "--frames", frames, "--out", out, "--threads", "2"]) == 0
    assert cli.main(["evaluate", "--run", out, "--gt", frames]) == 0
    printed = capsys.readouterr().out
    assert "disparity_mae = " in printed
    assert "seg_accuracy_after = " in printed


def test_cli_reports_errors_on_stderr(tmp_path, capsys):
    code = cli.main(["synth", "--preset", "bogus", "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 2
    assert captured.err.startswith("error: unknown preset")
    code = cli.main(["evaluate", "--run", str(tmp_path), "--gt", str(tmp_path)])
    assert code == 2
    assert "missing artifact" in capsys.readouterr().err


def test_cli_preset_synth(tmp_path):
    out = tmp_path / "preset"
    assert cli.main(["synth", "--preset", "low_texture", "--out", str(out),
                     "--seed", "42"]) == 0
    assert (out / "view_04.ppm").exists()
    from seethrough.synth import load_scene
    spec = load_scene(str(out / "scene.txt"))
    assert spec.seed == 42
