"""End-to-end runs and their on-disk artifacts.

Three entry points, mirrored 1:1 by the command line:

- run_synth renders a scene description (or a named preset) into a frame
  directory: calib.txt, view_XX.ppm, prior_XX.pgm, plus ground truth
  (gt_disparity.pgm, gt_background.ppm, gt_mask_XX.pgm, scene.txt).
- run_reconstruct consumes such a directory (or any directory following
  the same naming) and writes disparity.pgm (16-bit, fixed point x256),
  refocused.ppm, provenance.pgm, status.pgm, per-view seg_XX.pgm static
  maps, em_stats.txt, config_used.txt and timings.txt.
- run_evaluate compares a run directory against a ground-truth directory
  and writes report.txt with key = value metrics.

Every artifact except timings.txt is byte-deterministic for identical
inputs; timings.txt records wall-clock stage durations and is the one
file expected to differ between repeated runs.
"""

import os
import time
from dataclasses import replace

import numpy as np

from . import pnm
from . import synth as synthmod
from .frame import LightFieldFrame
from .geometry import CalibrationError, load_calibration, save_calibration
from .prior import PriorParams, collect_support, triangulate
from .refocus import PROV_COPIED, PROV_FALLBACK, PROV_REFOCUSED, synthesize
from .sampling import bilinear, flatten_channels
from .solver import STATUS_VALID, DisparitySolver, SolverParams

DISPARITY_SCALE = 256.0

PRESETS = {
    "two_plane": synthmod.two_plane_scene,
    "occluder": synthmod.occluder_scene,
    "low_texture": synthmod.low_texture_scene,
}


class PipelineError(Exception):
    """Input or artifact problem; maps to process exit code 2."""

    exit_code = 2


# -- configuration ---------------------------------------------------------------

_CONFIG_TYPES = {
    "beta": float,
    "sigma": float,
    "gamma": float,
    "d_max": float,
    "threshold": float,
    "max_iters": int,
    "min_static_rays": int,
    "epsilon_prior": float,
    "median_radius": int,
    "dynamic_only": bool,
}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(path):
    """key = value lines, '#' comments; returns the overrides as a dict."""
    overrides = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PipelineError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_TYPES:
                raise PipelineError(f"{path}:{lineno}: unknown option {key!r}")
            caster = _parse_bool if _CONFIG_TYPES[key] is bool else _CONFIG_TYPES[key]
            try:
                overrides[key] = caster(value.strip())
            except ValueError:
                raise PipelineError(
                    f"{path}:{lineno}: bad value for {key}: {value.strip()!r}")
    return overrides


def resolve_params(overrides=None):
    """Fold overrides into (SolverParams, PriorParams, median_radius, dynamic_only)."""
    overrides = dict(overrides or {})
    solver = SolverParams()
    prior = PriorParams()
    for key in ("beta", "threshold", "max_iters", "min_static_rays", "epsilon_prior"):
        if key in overrides:
            setattr(solver, key, overrides.pop(key))
    for key in ("sigma", "gamma", "d_max"):
        if key in overrides:
            setattr(prior, key, overrides.pop(key))
    median_radius = int(overrides.pop("median_radius", 1))
    dynamic_only = bool(overrides.pop("dynamic_only", False))
    if overrides:
        raise PipelineError(f"unknown options: {sorted(overrides)}")
    if median_radius < 0:
        raise PipelineError("median_radius must be >= 0")
    return solver, prior, median_radius, dynamic_only


def _write_config(path, solver, prior, median_radius, dynamic_only):
    lines = [
        f"beta = {solver.beta!r}",
        f"sigma = {prior.sigma!r}",
        f"gamma = {prior.gamma!r}",
        f"d_max = {prior.d_max!r}",
        f"threshold = {solver.threshold!r}",
        f"max_iters = {solver.max_iters}",
        f"min_static_rays = {solver.min_static_rays}",
        f"epsilon_prior = {solver.epsilon_prior!r}",
        f"median_radius = {median_radius}",
        f"dynamic_only = {int(dynamic_only)}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_keyvals(path):
    out = {}
    with open(path, "r") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line or "=" not in line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


# -- frame directory I/O -----------------------------------------------------------


def _view_name(stem, k, ext):
    return f"{stem}_{k:02d}.{ext}"


def load_frame_dir(rig, frames_dir, priors_dir=None):
    """Read view_XX.ppm and prior_XX.pgm for every rig camera."""
    priors_dir = priors_dir or frames_dir
    images = []
    priors = []
    for k in range(len(rig)):
        vpath = os.path.join(frames_dir, _view_name("view", k, "ppm"))
        ppath = os.path.join(priors_dir, _view_name("prior", k, "pgm"))
        if not os.path.exists(vpath):
            raise PipelineError(f"view {k}: missing image {vpath}")
        if not os.path.exists(ppath):
            raise PipelineError(f"view {k}: missing prior {ppath}")
        img = pnm.read_pnm(vpath)
        if img.ndim != 3:
            raise PipelineError(f"view {k}: {vpath} is not a color image")
        intr = rig.intrinsics(k)
        if img.shape[0] != intr.height or img.shape[1] != intr.width:
            raise PipelineError(
                f"view {k}: image is {img.shape[1]}x{img.shape[0]}, "
                f"calibration says {intr.width}x{intr.height}")
        pri = pnm.read_pnm(ppath)
        if pri.ndim != 2:
            raise PipelineError(f"view {k}: {ppath} is not grayscale")
        if pri.shape != img.shape[:2]:
            raise PipelineError(
                f"view {k}: prior is {pri.shape[1]}x{pri.shape[0]}, "
                f"image is {img.shape[1]}x{img.shape[0]}")
        maxval = 65535.0 if pri.dtype == np.uint16 else 255.0
        images.append(img)
        priors.append((pri.astype(np.float32) / maxval))
    return LightFieldFrame(images=images, priors=priors)


def _write_disparity(path, disparity):
    coded = np.zeros(disparity.values.shape, dtype=np.uint16)
    ok = disparity.status == STATUS_VALID
    coded[ok] = np.clip(np.rint(disparity.values[ok] * DISPARITY_SCALE),
                        0, 65535).astype(np.uint16)
    pnm.write_pgm(path, coded)


def _read_disparity(path):
    coded = pnm.read_pnm(path)
    return coded.astype(np.float64) / DISPARITY_SCALE


# -- commands ----------------------------------------------------------------------


def run_reconstruct(calib_path, frames_dir, out_dir, priors_dir=None,
                    config=None, ref_index=None, dynamic_only=None,
                    threads=None):
    """Solve one frame directory and write the artifact set.

    config may be a path, a dict of overrides, or None. dynamic_only given
    here wins over the config file. threads is accepted as a hint only; it
    never changes any output value.
    """
    if isinstance(config, str):
        overrides = parse_config(config)
    else:
        overrides = dict(config or {})
    solver_params, prior_params, median_radius, cfg_dynamic = resolve_params(overrides)
    if dynamic_only is not None:
        cfg_dynamic = bool(dynamic_only)

    try:
        rig = load_calibration(calib_path, ref_index=ref_index)
    except (CalibrationError, OSError) as exc:
        raise PipelineError(f"calibration: {exc}")
    try:
        frame = load_frame_dir(rig, frames_dir, priors_dir)
    except (ValueError, OSError) as exc:
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(str(exc))

    os.makedirs(out_dir, exist_ok=True)
    timings = []
    h, w = frame.shape

    t0 = time.perf_counter()
    support = collect_support(frame, rig, prior_params,
                              threshold=solver_params.threshold)
    timings.append(("support", time.perf_counter() - t0))

    t0 = time.perf_counter()
    try:
        tri = triangulate(support, w, h)
    except ValueError as exc:
        raise PipelineError(str(exc))
    timings.append(("triangulate", time.perf_counter() - t0))

    t0 = time.perf_counter()
    solver = DisparitySolver(frame, rig, tri, params=solver_params,
                             prior_params=prior_params)
    disparity, seg, stats = solver.solve(dynamic_only=cfg_dynamic)
    timings.append(("solve", time.perf_counter() - t0))

    t0 = time.perf_counter()
    copy_mask = None
    if cfg_dynamic:
        copy_mask = frame.priors[rig.ref_index] >= solver_params.threshold
    image, prov, n_rays = synthesize(frame, rig, disparity, seg,
                                     min_static_rays=solver_params.min_static_rays,
                                     median_radius=median_radius,
                                     copy_mask=copy_mask)
    timings.append(("refocus", time.perf_counter() - t0))

    t0 = time.perf_counter()
    _write_disparity(os.path.join(out_dir, "disparity.pgm"), disparity)
    with open(os.path.join(out_dir, "disparity_scale.txt"), "w") as fh:
        fh.write(f"{int(DISPARITY_SCALE)}\n")
    pnm.write_ppm(os.path.join(out_dir, "refocused.ppm"), image)
    pnm.write_pgm(os.path.join(out_dir, "provenance.pgm"), prov)
    pnm.write_pgm(os.path.join(out_dir, "status.pgm"), disparity.status)
    pnm.write_pgm(os.path.join(out_dir, "n_rays.pgm"), n_rays)
    for k in range(frame.num_views):
        bit = ((seg.static_bits >> np.uint32(k)) & np.uint32(1)).astype(np.uint8) * 255
        pnm.write_pgm(os.path.join(out_dir, _view_name("seg", k, "pgm")), bit)
        vb = ((seg.valid_bits >> np.uint32(k)) & np.uint32(1)).astype(np.uint8) * 255
        pnm.write_pgm(os.path.join(out_dir, _view_name("valid", k, "pgm")), vb)
    _write_config(os.path.join(out_dir, "config_used.txt"),
                  solver_params, prior_params, median_radius, cfg_dynamic)
    _write_em_stats(os.path.join(out_dir, "em_stats.txt"), stats)
    timings.append(("write", time.perf_counter() - t0))

    total = sum(t for _, t in timings)
    with open(os.path.join(out_dir, "timings.txt"), "w") as fh:
        if threads is not None:
            fh.write(f"# threads_hint = {threads}\n")
        for name, seconds in timings:
            fh.write(f"{name} {seconds:.3f}\n")
        fh.write(f"total {total:.3f}\n")
    return {"out_dir": out_dir, "stats": stats,
            "timings": dict(timings), "total_seconds": total}


def _write_em_stats(path, stats):
    conv = "none" if stats.converged_after is None else str(stats.converged_after)
    lines = [
        f"iterations_run = {stats.iterations_run}",
        f"converged_after = {conv}",
        "mean_energy = " + ",".join(repr(v) for v in stats.mean_energy),
        "prev_energy = " + ",".join(repr(v) for v in stats.prev_energy),
        "changed_fraction = " + ",".join(repr(v) for v in stats.changed_fraction),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_em_stats(path):
    raw = _read_keyvals(path)
    def floats(key):
        text = raw.get(key, "")
        return [float(t) for t in text.split(",") if t.strip()]
    conv = raw.get("converged_after", "none")
    return {
        "iterations_run": int(raw.get("iterations_run", "0")),
        "converged_after": None if conv == "none" else int(conv),
        "mean_energy": floats("mean_energy"),
        "prev_energy": floats("prev_energy"),
        "changed_fraction": floats("changed_fraction"),
    }


def run_synth(out_dir, scene=None, preset=None, seed=None):
    """Render a scene file or preset into a frame directory with ground truth."""
    if (scene is None) == (preset is None):
        raise PipelineError("give exactly one of scene or preset")
    if scene is not None:
        try:
            spec = synthmod.load_scene(scene)
        except (ValueError, OSError) as exc:
            raise PipelineError(str(exc))
    else:
        if preset not in PRESETS:
            raise PipelineError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        spec = PRESETS[preset]()
    if seed is not None:
        spec = replace(spec, seed=int(seed))
    try:
        spec.validate()
    except ValueError as exc:
        raise PipelineError(str(exc))

    frame, gt = synthmod.render(spec)
    rig = spec.rig()
    os.makedirs(out_dir, exist_ok=True)
    save_calibration(rig, os.path.join(out_dir, "calib.txt"))
    synthmod.save_scene(spec, os.path.join(out_dir, "scene.txt"))
    for k in range(frame.num_views):
        pnm.write_ppm(os.path.join(out_dir, _view_name("view", k, "ppm")),
                      frame.images[k])
        coded = np.clip(np.rint(frame.priors[k] * 255.0), 0, 255).astype(np.uint8)
        pnm.write_pgm(os.path.join(out_dir, _view_name("prior", k, "pgm")), coded)
        mask = gt.masks[k].astype(np.uint8) * 255
        pnm.write_pgm(os.path.join(out_dir, _view_name("gt_mask", k, "pgm")), mask)
    coded = np.clip(np.rint(gt.disparity * DISPARITY_SCALE), 0, 65535).astype(np.uint16)
    pnm.write_pgm(os.path.join(out_dir, "gt_disparity.pgm"), coded)
    with open(os.path.join(out_dir, "disparity_scale.txt"), "w") as fh:
        fh.write(f"{int(DISPARITY_SCALE)}\n")
    pnm.write_ppm(os.path.join(out_dir, "gt_background.ppm"), gt.background)
    return {"out_dir": out_dir, "num_views": frame.num_views}


def run_evaluate(run_dir, gt_dir, out_path=None):
    """Score a reconstruction against rendered ground truth.

    Returns the metrics dict and writes them as key = value text. Disparity
    metrics cover status-valid pixels; the refocus error covers pixels whose
    provenance says refocused, with the fallback share reported alongside.
    Segmentation accuracy compares per-ray static decisions against the
    ground-truth occluder masks at rays cast with the true disparity, both
    for the thresholded input priors (before) and the solved masks (after).
    """
    def need(path):
        if not os.path.exists(path):
            raise PipelineError(f"missing artifact: {path}")
        return path

    try:
        rig = load_calibration(need(os.path.join(gt_dir, "calib.txt")))
    except CalibrationError as exc:
        raise PipelineError(f"calibration: {exc}")
    gt_disp = _read_disparity(need(os.path.join(gt_dir, "gt_disparity.pgm")))
    gt_bg = pnm.read_pnm(need(os.path.join(gt_dir, "gt_background.ppm")))
    est_disp = _read_disparity(need(os.path.join(run_dir, "disparity.pgm")))
    status = pnm.read_pnm(need(os.path.join(run_dir, "status.pgm")))
    refocused = pnm.read_pnm(need(os.path.join(run_dir, "refocused.ppm")))
    prov = pnm.read_pnm(need(os.path.join(run_dir, "provenance.pgm")))
    config = _read_keyvals(need(os.path.join(run_dir, "config_used.txt")))
    stats = _read_em_stats(need(os.path.join(run_dir, "em_stats.txt")))
    threshold = float(config.get("threshold", SolverParams().threshold))

    h, w = gt_disp.shape
    if est_disp.shape != (h, w) or refocused.shape[:2] != (h, w):
        raise PipelineError("run and ground truth dimensions do not match")

    report = {}
    ok = status == STATUS_VALID
    err = np.abs(est_disp - gt_disp)[ok]
    report["disparity_mae"] = float(err.mean()) if err.size else float("nan")
    report["disparity_rmse"] = float(np.sqrt((err ** 2).mean())) if err.size else float("nan")
    report["disparity_bad1"] = float((err > 1.0).mean()) if err.size else float("nan")
    report["disparity_invalid_frac"] = float(1.0 - ok.mean())

    sel = prov == PROV_REFOCUSED
    diff = (refocused.astype(np.float64) - gt_bg.astype(np.float64))[sel]
    report["refocus_rmse"] = (float(np.sqrt((diff ** 2).mean()) / 255.0)
                              if diff.size else float("nan"))
    npx = float(h * w)
    report["refocus_refocused_frac"] = float(sel.sum() / npx)
    report["refocus_fallback_frac"] = float((prov == PROV_FALLBACK).sum() / npx)
    report["refocus_copied_frac"] = float((prov == PROV_COPIED).sum() / npx)

    before_hits = 0
    after_hits = 0
    ray_count = 0
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    u_flat = uu.ravel()
    v_flat = vv.ravel()
    d_flat = gt_disp.ravel()
    for k in range(len(rig)):
        seg_k = pnm.read_pnm(need(os.path.join(run_dir, _view_name("seg", k, "pgm"))))
        val_k = pnm.read_pnm(need(os.path.join(run_dir, _view_name("valid", k, "pgm"))))
        pri_k = pnm.read_pnm(need(os.path.join(gt_dir, _view_name("prior", k, "pgm"))))
        mask_k = pnm.read_pnm(need(os.path.join(gt_dir, _view_name("gt_mask", k, "pgm"))))
        pu, pv, okk = rig.warp(u_flat, v_flat, d_flat, k)
        kh, kw = mask_k.shape
        okk = okk & (pu >= 0.0) & (pu <= kw - 1.0) & (pv >= 0.0) & (pv <= kh - 1.0)
        # score only rays the solver actually classified; the borders it
        # never saw would otherwise count against it by construction
        okk &= val_k.ravel() > 0
        idx = np.flatnonzero(okk)
        iu = np.clip(np.rint(pu[idx]), 0, kw - 1).astype(np.int64)
        iv = np.clip(np.rint(pv[idx]), 0, kh - 1).astype(np.int64)
        truth_static = mask_k[iv, iu] == 0
        pflat, ph, pw = flatten_channels(pri_k.astype(np.float32) / 255.0)
        q = bilinear(pflat, ph, pw, pu[idx], pv[idx])[:, 0]
        before = q >= threshold
        after = seg_k.ravel()[idx] > 0
        before_hits += int((before == truth_static).sum())
        after_hits += int((after == truth_static).sum())
        ray_count += idx.size
    report["seg_accuracy_before"] = (before_hits / ray_count) if ray_count else float("nan")
    report["seg_accuracy_after"] = (after_hits / ray_count) if ray_count else float("nan")

    report["iterations_run"] = stats["iterations_run"]
    report["converged_after"] = (-1 if stats["converged_after"] is None
                                 else stats["converged_after"])

    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value:.6f}")
        else:
            lines.append(f"{key} = {value}")
    text = "\n".join(lines) + "\n"
    out_path = out_path or os.path.join(run_dir, "report.txt")
    with open(out_path, "w") as fh:
        fh.write(text)
    return report
