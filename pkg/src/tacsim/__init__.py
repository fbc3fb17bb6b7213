"""tacsim: fast CPU simulation of vision-based tactile sensors.

Renders tactile RGB images from contact height maps through a learned
reflectance map, casts planar shadows from the sensor's lights, and
moves the marker field under normal, shear and twist loads. Includes
the calibration tools for all three subsystems plus comparison metrics.
"""

from .config_io import (CalibrationManifest, SensorConfig, load_bundled_config,
                        load_calibration_manifest, load_config, load_heightmap,
                        load_heightmap_png, load_image_png, load_model, save_config,
                        save_heightmap, save_heightmap_png, save_image_png, save_model)
from .errors import (BoundsError, ConfigParseError, DegenerateGeometryError,
                     FitConvergenceError, ModelFormatError, NumericalError,
                     RasterFormatError, SingularProjectionError,
                     TrainingDivergedError, ValidationError)
from .marker import (MarkerField, MarkerLayoutSpec, MotionCoefficients,
                     MotionObservation, MotionResult, compose_motion,
                     dilate_displacement, fit_lambdas, flow_image,
                     read_displacement_table, render_markers, shear_displacement,
                     twist_displacement, write_displacement_table)
from .metrics import ImageMetricsReport, image_metrics, marker_l1, ssim
from .mlp import ReflectanceModel
from .optics import (CalibrationImage, RGBNormalDataset, TrainingConfig,
                     build_rgb_normal_dataset, contact_circle_radius, gradients,
                     model_background_residual, shade, smooth_height_map,
                     train_reflectance)
from .pipeline import BenchReport, bench_stage, render_frame
from .scene import (ContactPose, ContactState, HeightMap, IndenterShape,
                    SensorGeometry, contact_state, render_height_map)
from .shadow import (BallObservation, LightRig, LightSource, ShadowPlane,
                     calibrate_lights, cast_shadow_mask, composite_shadows,
                     directional_shadow_matrix, find_shadow_vertex,
                     nearest_point_of_lines, point_shadow_matrix,
                     project_directional_shadow, project_point_shadow, tangent_ray)

__version__ = "0.1.0"
