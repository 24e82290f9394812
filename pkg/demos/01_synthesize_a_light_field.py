"""
Synthesizing a calibrated light-field frame
===========================================

Builds a small camera array scene from scratch, renders every view, and
saves the images plus the ground truth that the other demos reconstruct.
"""

import os

import numpy as np

import seethrough as st
from seethrough import pnm

out = os.path.join(os.path.dirname(__file__), "out", "synth")
os.makedirs(out, exist_ok=True)

# A scene is a plain description: image size, a line of pinhole cameras,
# textured background planes, and optional billboard occluders floating in
# front of them. Depths are in world units; with focal 300 and camera
# spacing 0.1 a plane at depth 7.5 appears at disparity 300 * 0.1 / 7.5 = 4.
spec = st.SceneSpec(
    width=320, height=240, focal=300.0, cameras=5, spacing=0.1, seed=21,
    planes=[st.PlaneSpec(depth=7.5, seed=22, amplitude=55.0, frequency=3.0)],
    occluders=[st.OccluderSpec(depth=0.6, width=0.35, height=0.28, seed=23)],
)

frame, gt = st.render(spec)
rig = spec.rig()
print(f"rendered {len(frame.images)} views of {spec.width}x{spec.height}")

# Every view comes with a per-pixel static probability. The renderer knows
# exactly where the occluder is, so these priors are perfect: 0 on the
# billboard, 1 everywhere else. corrupt_prior() can degrade them later.
for k, (img, prior) in enumerate(zip(frame.images, frame.priors)):
    pnm.write_ppm(os.path.join(out, f"view_{k:02d}.ppm"), img)
    pnm.write_pgm(os.path.join(out, f"prior_{k:02d}.pgm"),
                 np.rint(prior * 255).astype(np.uint8))
    occluded = float((prior < 0.5).mean())
    print(f"  view {k}: occluder covers {occluded * 100:.1f}% of the image")

# Ground truth is expressed in the reference view: the disparity of the
# static background at every pixel, and the background image as it would
# look with the occluder removed.
pnm.write_ppm(os.path.join(out, "gt_background.ppm"), gt.background)
d = gt.disparity
print(f"background disparity: min {d.min():.2f} max {d.max():.2f}")

# The parallax is what makes see-through reconstruction possible: the
# occluder shifts by ~50 px between adjacent views while the background
# shifts by 4, so side cameras see behind the billboard.
occ_disp = spec.focal * spec.spacing / spec.occluders[0].depth
print(f"occluder disparity: {occ_disp:.1f} px per camera step")
print(f"wrote images to {out}")
