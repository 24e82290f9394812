"""Static-background disparity and see-through refocusing for small camera rows.

One frame from a calibrated multi-camera row, plus per-view maps of how
likely each pixel is to show the persistent background, goes in; a dense
background disparity map, per-ray static masks and a recomposed reference
view with dynamic occluders removed come out. A synthetic scene renderer
with exact ground truth covers testing and experimentation.
"""

from .features import (DESCRIPTOR_LENGTH, DESCRIPTOR_MARGIN, DescriptorMap,
                       compute_descriptors, descriptor_distance, rgb_to_gray,
                       sample_descriptors, sobel_responses, texture_energy)
from .frame import LightFieldFrame
from .geometry import (CalibrationError, CameraExtrinsics, CameraIntrinsics,
                       CameraRig, backproject, depth_to_disparity,
                       disparity_to_depth, linear_rig, load_calibration,
                       project, save_calibration)
from .pipeline import (PipelineError, run_evaluate, run_reconstruct, run_synth)
from .prior import (PriorParams, SupportPoint, TriangulationPrior,
                    candidate_disparities, collect_support, prior_log_density,
                    triangulate)
from .refocus import (PROV_COPIED, PROV_FALLBACK, PROV_REFOCUSED,
                      median_filter, refocus_pixel, synthesize)
from .solver import (STATUS_LOW_TEXTURE, STATUS_NO_STATIC_EVIDENCE,
                     STATUS_VALID, VARIANCE_CEILING, DisparityMap,
                     DisparitySolver, EMStats, SegmentationState, SolverParams,
                     e_step, em_solve, masked_variance)

from .synth import (GroundTruth, OccluderSpec, PlaneSpec, SceneSpec,
                    box_blur, corrupt_prior, load_scene, low_texture_scene,
                    occluder_scene, render, save_scene, surface_color,
                    two_plane_scene)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
