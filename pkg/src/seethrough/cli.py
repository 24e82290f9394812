"""Command line front end: reconstruct | synth | evaluate.

Thin argument plumbing over the pipeline module; every input problem is
reported on stderr and exits with status 2, success exits 0.
"""

import argparse
import sys

from .pipeline import PipelineError, run_evaluate, run_reconstruct, run_synth


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seethrough",
        description="static-background disparity and see-through refocusing "
                    "from one multi-camera frame")
    sub = parser.add_subparsers(dest="command", required=True)

    rec = sub.add_parser("reconstruct",
                         help="solve one frame directory and write artifacts")
    rec.add_argument("--calib", required=True, help="calibration text file")
    rec.add_argument("--frames", required=True,
                     help="directory holding view_XX.ppm (+ prior_XX.pgm)")
    rec.add_argument("--priors",
                     help="directory holding prior_XX.pgm when kept separately")
    rec.add_argument("--out", required=True, help="output directory")
    rec.add_argument("--config", help="key = value option file")
    rec.add_argument("--ref-index", type=int, default=None,
                     help="override the calibration's reference camera")
    rec.add_argument("--dynamic-only", action="store_true", default=None,
                     help="solve only pixels the reference prior marks dynamic")
    rec.add_argument("--threads", type=int, default=None,
                     help="worker hint; results never depend on it")

    syn = sub.add_parser("synth", help="render a synthetic frame directory")
    src = syn.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene description file")
    src.add_argument("--preset", help="two_plane | occluder | low_texture")
    syn.add_argument("--out", required=True, help="output directory")
    syn.add_argument("--seed", type=int, default=None,
                     help="override the scene's random seed")

    ev = sub.add_parser("evaluate",
                        help="score a run directory against ground truth")
    ev.add_argument("--run", required=True, help="reconstruction output directory")
    ev.add_argument("--gt", required=True, help="synth output directory")
    ev.add_argument("--out", default=None,
                    help="report path (default: <run>/report.txt)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reconstruct":
            run_reconstruct(args.calib, args.frames, args.out,
                            priors_dir=args.priors, config=args.config,
                            ref_index=args.ref_index,
                            dynamic_only=args.dynamic_only,
                            threads=args.threads)
        elif args.command == "synth":
            run_synth(args.out, scene=args.scene, preset=args.preset,
                      seed=args.seed)
        else:
            report = run_evaluate(args.run, args.gt, out_path=args.out)
            for key, value in report.items():
                if isinstance(value, float):
                    print(f"{key} = {value:.6f}")
                else:
                    print(f"{key} = {value}")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
